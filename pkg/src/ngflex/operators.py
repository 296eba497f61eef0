"""Sparse model operators: autoregressive, lattice, and finite element.

Every model is reduced to the same pair (D, h): an invertible sparse
matrix and a vector of positive noise weights, so that the field x
solves D x = Lambda with independent noise increments Lambda_i whose
size parameter is h_i. Discrete-index models (AR1, SAR) have h = 1;
the continuous models carry the lumped finite-element masses, i.e.
h_i is the integral of basis function i.

Conventions for the 1D differential models, chosen so that the noise
weights stay equal to the lumped masses while second-order statistics
stay exact on any mesh:

* OU uses a trapezoid (Crank-Nicolson) step per interval. Each row is
  rescaled by sqrt(h_i / delta_i) so the increment carries parameter
  h_i; the first row pins x_0 at the exact stationary variance
  sigma^2/(2 kappa). With this scheme the discrete chain is exactly
  stationary and the one-step correlation matches exp(-kappa * delta)
  to second order in the spacing.
* CRW1 uses plain increments with the same rescaling; the first row
  pins x_0 to one unit-parameter noise variable.
* CRW2 keeps the interior rows of the weak form of the second
  derivative (sign chosen so a positive noise spike produces an upward
  kink, matching the jump direction of the first-order models) and
  pins the first two rows to an initial-value row and a unit-variance
  initial-slope row. The resulting matrix is lower triangular with
  positive diagonal, hence trivially invertible.
* Matern2 is the symmetric operator kappa^2 C + G with C mass-lumped
  and natural (Neumann) boundaries; Dirichlet boundaries eliminate the
  two end nodes instead.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

MESH_SCHEMA = "ngflex-mesh-1"

_DIFF_KINDS = ("CRW1", "OU", "CRW2", "Matern2")


@dataclass(frozen=True)
class Mesh1D:
    """Interval mesh: strictly increasing nodes plus a boundary flag."""

    nodes: np.ndarray
    boundary: str = "neumann"

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        if nodes.ndim != 1 or nodes.size < 3:
            raise ValueError("Mesh1D needs at least 3 nodes")
        if not np.all(np.diff(nodes) > 0):
            raise ValueError("Mesh1D nodes must be strictly increasing")
        if self.boundary not in ("neumann", "dirichlet"):
            raise ValueError(f"unknown boundary {self.boundary!r}")

    @property
    def spacings(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def n(self) -> int:
        return self.nodes.size


@dataclass(frozen=True)
class Mesh2D:
    """Conforming triangulation: vertex coordinates and index triples."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=float)
        tris = np.asarray(self.triangles, dtype=np.int64)
        if verts.ndim != 2 or verts.shape[1] != 2:
            raise ValueError("vertices must be (m, 2)")
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise ValueError("triangles must be (k, 3)")
        if tris.min(initial=0) < 0 or tris.max(initial=-1) >= len(verts):
            raise ValueError("triangle indices out of range")
        areas = _signed_areas(verts, tris)
        # normalize orientation to counterclockwise
        flip = areas < 0
        if np.any(flip):
            tris = tris.copy()
            tris[flip] = tris[flip][:, [0, 2, 1]]
            areas = np.abs(areas)
        total = areas.sum()
        if np.any(areas < 1e-14 * total):
            bad = int(np.argmin(areas))
            raise ValueError(f"degenerate triangle {bad} (area {areas[bad]:g})")
        if len(np.setdiff1d(np.arange(len(verts)), tris.ravel())) > 0:
            raise ValueError("mesh has unreferenced vertices")
        _check_conforming(tris)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "triangles", tris)

    @property
    def areas(self) -> np.ndarray:
        return _signed_areas(self.vertices, self.triangles)

    @property
    def n(self) -> int:
        return len(self.vertices)


def _signed_areas(verts, tris):
    p0 = verts[tris[:, 0]]
    u = verts[tris[:, 1]] - p0
    v = verts[tris[:, 2]] - p0
    return 0.5 * (u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])


def _check_conforming(tris):
    # each undirected edge in at most two triangles, each directed edge once
    directed = {}
    for t, (a, b, c) in enumerate(tris):
        for u, v in ((a, b), (b, c), (c, a)):
            key = (int(u), int(v))
            if key in directed:
                raise ValueError(f"non-conforming mesh: directed edge {key} repeated")
            directed[key] = t


@dataclass
class ModelOperator:
    """The pair (D, h) defining one model, with descriptive metadata."""

    d_matrix: sparse.csr_matrix
    h: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.d_matrix = sparse.csr_matrix(self.d_matrix)
        self.h = np.asarray(self.h, dtype=float)
        n, m = self.d_matrix.shape
        if n != m:
            raise ValueError("D must be square")
        if self.h.shape != (n,):
            raise ValueError("h length must match D")
        if not np.all(self.h > 0):
            raise ValueError("h must be strictly positive")
        try:
            lu = splu(self.d_matrix.tocsc())
        except RuntimeError as exc:
            raise ValueError(f"D is numerically singular ({exc})") from exc
        piv = np.abs(lu.U.diagonal())
        if piv.min() <= 1e-12:
            raise ValueError(
                f"D is numerically singular (smallest pivot {piv.min():.3g})"
            )

    @property
    def n(self) -> int:
        return self.d_matrix.shape[0]


# ------------------------------------------------------------ discrete models


def ar1_operator(rho: float, n: int) -> ModelOperator:
    """Stationary AR(1) map: lower bidiagonal with sqrt(1-rho^2) up front."""
    if not abs(rho) < 1:
        raise ValueError("ar1_operator needs |rho| < 1")
    if n < 1:
        raise ValueError("n must be at least 1")
    d = sparse.diags_array(
        [np.full(n - 1, -rho), np.ones(n)], offsets=[-1, 0], format="lil"
    )
    d[0, 0] = np.sqrt(1.0 - rho * rho)
    return ModelOperator(d.tocsr(), np.ones(n), {"kind": "AR1", "rho": rho, "n": n})


def sar_operator(w, rho: float) -> ModelOperator:
    """Simultaneous autoregression D = I - rho W on a row-standardized graph."""
    if not abs(rho) < 1:
        raise ValueError("sar_operator needs |rho| < 1")
    w = sparse.csr_matrix(w)
    n, m = w.shape
    if n != m:
        raise ValueError("W must be square")
    if np.max(np.abs(w.diagonal())) > 0:
        raise ValueError("W must have a zero diagonal")
    rowsums = np.asarray(w.sum(axis=1)).ravel()
    if rowsums.min() < -1e-12 or rowsums.max() > 1.0 + 1e-12:
        raise ValueError("W row sums must lie in [0, 1] (row-standardized)")
    d = sparse.eye_array(n, format="csr") - rho * w
    return ModelOperator(sparse.csr_matrix(d), np.ones(n), {"kind": "SAR", "rho": rho, "n": n})


# --------------------------------------------------------------- 1D FEM models


def _assemble_1d(mesh: Mesh1D):
    """Lumped masses h and the stiffness matrix G for hat functions."""
    nodes = mesh.nodes
    n = nodes.size
    dx = np.diff(nodes)
    h = np.zeros(n)
    h[:-1] += dx / 2.0
    h[1:] += dx / 2.0
    rows, cols, vals = [], [], []
    for e in range(n - 1):
        k = 1.0 / dx[e]
        for a, b, v in ((e, e, k), (e, e + 1, -k), (e + 1, e, -k), (e + 1, e + 1, k)):
            rows.append(a)
            cols.append(b)
            vals.append(v)
    g = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return h, g


def diff_operator_1d(kind: str, mesh: Mesh1D, kappa: float | None = None) -> ModelOperator:
    """Discretize one of the 1D differential models on the given mesh.

    kind is one of CRW1, OU, CRW2, Matern2 (case-insensitive). kappa is
    required (and must be positive) for OU and Matern2 and ignored
    otherwise. See the module docstring for the row conventions.
    """
    kind = str(kind)
    matched = [k for k in _DIFF_KINDS if k.lower() == kind.lower()]
    if not matched:
        raise ValueError(f"unknown kind {kind!r}; expected one of {_DIFF_KINDS}")
    kind = matched[0]
    if kind in ("OU", "Matern2"):
        if kappa is None or not kappa > 0:
            raise ValueError(f"{kind} requires kappa > 0")
    h, g = _assemble_1d(mesh)
    n = mesh.n
    dx = mesh.spacings
    meta = {"kind": kind, "n": n, "boundary": mesh.boundary}

    if kind == "Matern2":
        meta["kappa"] = kappa
        d = sparse.diags_array(kappa * kappa * h) + g
        if mesh.boundary == "dirichlet":
            keep = np.arange(1, n - 1)
            d = sparse.csr_matrix(d)[keep][:, keep]
            meta["nodes_kept"] = keep
            return ModelOperator(sparse.csr_matrix(d), h[keep], meta)
        return ModelOperator(sparse.csr_matrix(d), h, meta)

    if kind == "OU":
        meta["kappa"] = kappa
        s = np.sqrt(h[1:] / dx)
        diag = np.concatenate([[np.sqrt(2.0 * kappa * h[0])], s * (1.0 + kappa * dx / 2.0)])
        sub = -s * (1.0 - kappa * dx / 2.0)
        d = sparse.diags_array([sub, diag], offsets=[-1, 0])
        return ModelOperator(sparse.csr_matrix(d), h, meta)

    if kind == "CRW1":
        s = np.sqrt(h[1:] / dx)
        diag = np.concatenate([[np.sqrt(h[0])], s])
        d = sparse.diags_array([-s, diag], offsets=[-1, 0])
        return ModelOperator(sparse.csr_matrix(d), h, meta)

    # CRW2: initial value, initial slope, then interior weak-form rows of
    # the second derivative (rows 1..n-2 of -G shifted down by one)
    rows, cols, vals = [], [], []
    rows.append(0)
    cols.append(0)
    vals.append(np.sqrt(h[0]))
    c = np.sqrt(h[1]) / dx[0]
    rows += [1, 1]
    cols += [0, 1]
    vals += [-c, c]
    gl = sparse.lil_matrix(g)
    for i in range(2, n):
        j = i - 1  # node at which the second difference is centered
        for col in (j - 1, j, j + 1):
            rows.append(i)
            cols.append(col)
            vals.append(-gl[j, col])
    d = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return ModelOperator(d, h, meta)


# --------------------------------------------------------------- 2D FEM models


def _assemble_2d(mesh: Mesh2D):
    """Lumped masses (area thirds) and the piecewise-linear stiffness matrix."""
    verts, tris = mesh.vertices, mesh.triangles
    n = len(verts)
    areas = mesh.areas
    h = np.zeros(n)
    np.add.at(h, tris.ravel(), np.repeat(areas / 3.0, 3))
    # opposite-edge vectors, cyclic: edge a runs from vertex b to vertex c
    p = verts[tris]  # (k, 3, 2)
    e = np.empty_like(p)
    e[:, 0] = p[:, 2] - p[:, 1]
    e[:, 1] = p[:, 0] - p[:, 2]
    e[:, 2] = p[:, 1] - p[:, 0]
    local = np.einsum("kad,kbd->kab", e, e) / (4.0 * areas)[:, None, None]
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    g = sparse.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))
    return h, g


def fem_matern_2d(kappa: float, alpha: int, mesh: Mesh2D) -> ModelOperator:
    """Whittle-Matern operator on a triangulation, lumped mass everywhere.

    D_2 = kappa^2 diag(h) + G; even smoothness above 2 applies the
    recursion D_alpha = D_2 diag(h)^-1 D_(alpha-2).
    """
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    if alpha < 2 or alpha % 2 != 0:
        raise ValueError("alpha must be an even integer >= 2")
    h, g = _assemble_2d(mesh)
    d2 = sparse.csr_matrix(sparse.diags_array(kappa * kappa * h) + g)
    d = d2
    inv_c = sparse.diags_array(1.0 / h)
    for _ in range((alpha - 2) // 2):
        d = sparse.csr_matrix(d2 @ inv_c @ d)
    meta = {"kind": "Matern2d", "kappa": kappa, "alpha": alpha, "n": mesh.n}
    return ModelOperator(d, h, meta)


# ------------------------------------------------------------------- projector


def projector(mesh, locations) -> sparse.csr_matrix:
    """Evaluation matrix A with A_ji = basis_i(location_j).

    Rows have at most two (1D) or three (2D) nonzero barycentric weights
    summing to one. Locations outside the mesh hull raise, naming the
    offending point.
    """
    locations = np.asarray(locations, dtype=float)
    if isinstance(mesh, Mesh1D):
        pts = np.atleast_1d(locations.squeeze()) if locations.ndim > 1 else np.atleast_1d(locations)
        nodes = mesh.nodes
        rows, cols, vals = [], [], []
        for j, s in enumerate(pts):
            if s < nodes[0] - 1e-12 or s > nodes[-1] + 1e-12:
                raise ValueError(f"location {s} outside mesh hull [{nodes[0]}, {nodes[-1]}]")
            i = min(np.searchsorted(nodes, s, side="right") - 1, nodes.size - 2)
            i = max(i, 0)
            w = (s - nodes[i]) / (nodes[i + 1] - nodes[i])
            w = min(max(w, 0.0), 1.0)
            rows += [j, j]
            cols += [i, i + 1]
            vals += [1.0 - w, w]
        return sparse.csr_matrix((vals, (rows, cols)), shape=(len(pts), mesh.n))
    if isinstance(mesh, Mesh2D):
        pts = np.atleast_2d(locations)
        if pts.shape[1] != 2:
            raise ValueError("2D locations must be (m, 2)")
        verts, tris = mesh.vertices, mesh.triangles
        p0 = verts[tris[:, 0]]
        v1 = verts[tris[:, 1]] - p0
        v2 = verts[tris[:, 2]] - p0
        det = v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0]
        rows, cols, vals = [], [], []
        for j, s in enumerate(pts):
            r = s - p0
            b1 = (r[:, 0] * v2[:, 1] - r[:, 1] * v2[:, 0]) / det
            b2 = (v1[:, 0] * r[:, 1] - v1[:, 1] * r[:, 0]) / det
            b0 = 1.0 - b1 - b2
            ok = (b0 >= -1e-10) & (b1 >= -1e-10) & (b2 >= -1e-10)
            if not np.any(ok):
                raise ValueError(f"location {tuple(s)} outside mesh hull")
            t = int(np.argmax(ok))
            w = np.clip([b0[t], b1[t], b2[t]], 0.0, None)
            w = w / w.sum()
            for local in range(3):
                rows.append(j)
                cols.append(int(tris[t, local]))
                vals.append(w[local])
        a = sparse.csr_matrix((vals, (rows, cols)), shape=(len(pts), mesh.n))
        a.sum_duplicates()
        return a
    raise TypeError("mesh must be Mesh1D or Mesh2D")


def regular_triangulation(bounds, nx: int, ny: int) -> Mesh2D:
    """Structured right-triangle mesh of a rectangle.

    bounds is (x0, x1, y0, y1); the grid has nx * ny vertices and
    2 (nx-1) (ny-1) triangles, every cell split along the same diagonal.
    """
    x0, x1, y0, y1 = map(float, bounds)
    if nx < 2 or ny < 2:
        raise ValueError("nx and ny must be at least 2")
    if not (x1 > x0 and y1 > y0):
        raise ValueError("bounds must describe a nonempty rectangle")
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    verts = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(i, j):
        return i * ny + j

    tris = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    return Mesh2D(verts, np.array(tris, dtype=np.int64))


# ----------------------------------------------------------------- JSON moving


def mesh_to_json(mesh) -> str:
    if isinstance(mesh, Mesh1D):
        body = {
            "schema": MESH_SCHEMA,
            "kind": "mesh1d",
            "nodes": mesh.nodes.tolist(),
            "boundary": mesh.boundary,
        }
    elif isinstance(mesh, Mesh2D):
        body = {
            "schema": MESH_SCHEMA,
            "kind": "mesh2d",
            "vertices": mesh.vertices.tolist(),
            "triangles": mesh.triangles.tolist(),
        }
    else:
        raise TypeError("mesh must be Mesh1D or Mesh2D")
    return json.dumps(body)


def mesh_from_json(text: str):
    body = json.loads(text)
    if body.get("schema") != MESH_SCHEMA:
        raise ValueError(f"expected schema {MESH_SCHEMA!r}, got {body.get('schema')!r}")
    if body["kind"] == "mesh1d":
        return Mesh1D(np.array(body["nodes"], dtype=float), body["boundary"])
    if body["kind"] == "mesh2d":
        return Mesh2D(np.array(body["vertices"], dtype=float), np.array(body["triangles"]))
    raise ValueError(f"unknown mesh kind {body['kind']!r}")


def operator_to_json(op: ModelOperator) -> str:
    coo = op.d_matrix.tocoo()
    meta = {
        k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in op.meta.items()
    }
    body = {
        "schema": MESH_SCHEMA,
        "kind": "operator",
        "h": op.h.tolist(),
        "d": {
            "shape": list(coo.shape),
            "row": coo.row.tolist(),
            "col": coo.col.tolist(),
            "data": coo.data.tolist(),
        },
        "meta": meta,
    }
    return json.dumps(body)


def operator_from_json(text: str) -> ModelOperator:
    body = json.loads(text)
    if body.get("schema") != MESH_SCHEMA:
        raise ValueError(f"expected schema {MESH_SCHEMA!r}, got {body.get('schema')!r}")
    if body.get("kind") != "operator":
        raise ValueError("not an operator record")
    d = body["d"]
    mat = sparse.csr_matrix(
        (d["data"], (d["row"], d["col"])), shape=tuple(d["shape"])
    )
    return ModelOperator(mat, np.array(body["h"], dtype=float), body.get("meta", {}))
