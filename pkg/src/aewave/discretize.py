"""Grid and discrete operator assembly.

The domain is the box [-L, L]^d truncated with Dirichlet conditions at
ghost nodes one spacing outside the grid.  The second-order operators are
assembled in factored symmetric form

    Ptilde = sum_j D_j^T W_j D_j  -  sum_{j<k} (T_jk + T_jk^T),
    P      = diag(1/g) Ptilde diag(1/g),      P0 with unit coefficients,

where D_j is the staggered first difference to edge midpoints of axis j,
W_j the diagonal of g^2 g^{jj} at those midpoints, and T_jk couples the
(small, decaying) off-diagonal coefficients through node-centered
differences.  Symmetry is exact by construction, not by tolerance; for the
flat metric P, P0 and Ptilde coincide bitwise.

Vector fields: dpartial(j) is the node-centered d_j g^{-1}; dpartial_form(j)
is the edge-valued version entering quadratic-form comparisons against P;
rotation(k, l) gives x_k d_l - x_l d_k with or without the g^{-1} twist.
The dilation generator is stored as the real antisymmetric matrix S with
A0 = iS, signed so that i[P0, A0] = 2 P0 + O(h^2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .metric import MetricField, japanese_bracket


@dataclass(frozen=True)
class Grid:
    dimension: int
    points_per_axis: int
    half_width: float

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / (self.points_per_axis - 1)

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.points_per_axis)

    @property
    def n_points(self) -> int:
        return self.points_per_axis ** self.dimension

    def points(self) -> np.ndarray:
        """All grid points, C-order raveled, shape (N^d, d)."""
        axes = np.meshgrid(*([self.axis] * self.dimension), indexing="ij")
        return np.stack([a.ravel() for a in axes], axis=1)

    def edge_points(self, axis: int) -> np.ndarray:
        """Edge midpoints of the given axis (N+1 along it, N along others)."""
        mid = np.linspace(-self.half_width - self.spacing / 2,
                          self.half_width + self.spacing / 2,
                          self.points_per_axis + 1)
        coords = [self.axis] * self.dimension
        coords[axis] = mid
        axes = np.meshgrid(*coords, indexing="ij")
        return np.stack([a.ravel() for a in axes], axis=1)

    def bracket_weight(self, s: float) -> np.ndarray:
        """Diagonal of <x>^s at grid points."""
        pts = self.points()
        return japanese_bracket(np.sum(pts * pts, axis=1)) ** s

    def cell_volume(self) -> float:
        return self.spacing ** self.dimension

    def norm(self, v: np.ndarray) -> float:
        """Discrete L^2 norm, h^(d/2) scaled."""
        return float(np.linalg.norm(v) * self.spacing ** (self.dimension / 2.0))


def build_grid(d: int, n: int, half_width: float) -> Grid:
    if d not in (1, 2, 3):
        raise ValueError(f"unsupported dimension d={d}; need d in {{1, 2, 3}}")
    if n < 3:
        raise ValueError("need at least 3 points per axis for the stencil")
    if half_width <= 0:
        raise ValueError("half width L must be positive")
    return Grid(dimension=d, points_per_axis=n, half_width=float(half_width))


def _staggered_diff_1d(n: int, h: float) -> sp.csr_matrix:
    """Node-to-edge forward difference with Dirichlet ghosts, (n+1) x n."""
    rows, cols, vals = [], [], []
    for e in range(n + 1):
        if e < n:
            rows.append(e); cols.append(e); vals.append(1.0 / h)
        if e > 0:
            rows.append(e); cols.append(e - 1); vals.append(-1.0 / h)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n + 1, n))


def _centered_diff_1d(n: int, h: float) -> sp.csr_matrix:
    """Antisymmetric centered difference with Dirichlet ghosts, n x n."""
    off = np.full(n - 1, 1.0 / (2.0 * h))
    return sp.diags([-off, off], [-1, 1], format="csr")


def _along_axis(op1d: sp.spmatrix, axis: int, d: int, n: int) -> sp.csr_matrix:
    mats = []
    for j in range(d):
        mats.append(op1d if j == axis else sp.identity(n, format="csr"))
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out.tocsr()


class AssemblyError(RuntimeError):
    pass


def _exact_sym(mat: sp.spmatrix) -> sp.csr_matrix:
    """(M + M^T)/2 in canonical CSR; bitwise symmetric output."""
    out = ((mat + mat.T) * 0.5).tocsr()
    out.sum_duplicates()
    out.sort_indices()
    return out


@dataclass
class DiscreteModel:
    """Grid plus assembled operators; immutable after construction."""

    grid: Grid
    metric: MetricField
    P: sp.csr_matrix
    P0: sp.csr_matrix
    Ptilde: sp.csr_matrix
    conformal: np.ndarray          # g at nodes
    c_max: float                   # sup_x sqrt(largest eig of g^{jk})
    dilation: sp.csr_matrix        # real antisymmetric S, A0 = iS
    boundary: str = "dirichlet"
    _centered: list = field(default_factory=list, repr=False)
    _staggered: list = field(default_factory=list, repr=False)
    _weights: dict = field(default_factory=dict, repr=False)
    _rot_cache: dict = field(default_factory=dict, repr=False)

    # -- norms ---------------------------------------------------------
    @property
    def d(self) -> int:
        return self.grid.dimension

    @property
    def n(self) -> int:
        return self.grid.n_points

    def norm(self, v) -> float:
        return self.grid.norm(np.asarray(v))

    def inner(self, u, v) -> float:
        return float(np.real(np.vdot(u, v)) * self.grid.cell_volume())

    def weighted_norm(self, s: float, v) -> float:
        return self.norm(self.weight(s) * np.asarray(v))

    # -- diagonal weights ----------------------------------------------
    def weight(self, s: float) -> np.ndarray:
        key = float(s)
        if key not in self._weights:
            self._weights[key] = self.grid.bracket_weight(key)
        return self._weights[key]

    # -- vector fields ---------------------------------------------------
    def dpartial(self, j: int) -> sp.csr_matrix:
        """Node-centered d_j g^{-1} (composable with other fields)."""
        key = ("dp", j)
        if key not in self._rot_cache:
            inv_g = sp.diags(1.0 / self.conformal)
            self._rot_cache[key] = (self._centered[j] @ inv_g).tocsr()
        return self._rot_cache[key]

    def dpartial_form(self, j: int) -> sp.csr_matrix:
        """Edge-valued D_j g^{-1}; sum_j of its Gram matrices is the
        quadratic form partner of P (coincides with P0 for flat metrics)."""
        key = ("dpf", j)
        if key not in self._rot_cache:
            inv_g = sp.diags(1.0 / self.conformal)
            self._rot_cache[key] = (self._staggered[j] @ inv_g).tocsr()
        return self._rot_cache[key]

    def plain_partial(self, j: int) -> sp.csr_matrix:
        return self._centered[j]

    def rotation(self, k: int, l: int, tilde: bool = True) -> sp.csr_matrix:
        """Omega^{k,l} = x_k d_l - x_l d_k, with d = dpartial when tilde."""
        key = ("rot", k, l, tilde)
        if key not in self._rot_cache:
            pts = self.grid.points()
            xk = sp.diags(pts[:, k])
            xl = sp.diags(pts[:, l])
            dk = self.dpartial(k) if tilde else self._centered[k]
            dl = self.dpartial(l) if tilde else self._centered[l]
            self._rot_cache[key] = (xk @ dl - xl @ dk).tocsr()
        return self._rot_cache[key]

    def field_collection(self, which: str) -> list:
        """Named vector-field families: X = {dpartial}, Y = X + rotations,
        Z = Y + time derivative (handled by callers)."""
        d = self.d
        fields = [self.dpartial(j) for j in range(d)]
        if which == "X":
            return fields
        if which in ("Y", "Z"):
            for k in range(d):
                for l in range(k + 1, d):
                    fields.append(self.rotation(k, l, tilde=True))
            return fields
        raise ValueError(f"unknown field collection {which!r}")

    def operator(self, which: str) -> sp.csr_matrix:
        try:
            return {"P": self.P, "P0": self.P0, "Ptilde": self.Ptilde}[which]
        except KeyError:
            raise ValueError(f"unknown operator {which!r}") from None

    def causal_horizon(self, r_data: float) -> float:
        """Largest T for which Dirichlet truncation cannot reach the data."""
        return (self.grid.half_width - r_data) / self.c_max

    def dump_triplets(self, which: str, path) -> None:
        """Documented sparse text format: 'rows cols nnz' then triplets."""
        mat = self.operator(which).tocoo()
        with open(path, "w") as fh:
            fh.write(f"{mat.shape[0]} {mat.shape[1]} {mat.nnz}\n")
            for r, c, v in zip(mat.row, mat.col, mat.data):
                fh.write(f"{r} {c} {v:.17g}\n")


def _metric_coefficients(m: MetricField, pts: np.ndarray) -> np.ndarray:
    """c_{jk} = g^2 g^{jk} = det^(1/2) * inverse, at the given points."""
    entries = m.entries(pts)
    det = np.linalg.det(entries)
    if np.any(det <= 0):
        raise AssemblyError("metric determinant nonpositive at a sample point")
    return np.sqrt(det)[:, None, None] * np.linalg.inv(entries)


def assemble_operators(m: MetricField, grid: Grid) -> DiscreteModel:
    """Assemble P, P0, Ptilde and companions on the grid.

    Raises AssemblyError when the conformal factor degenerates at an edge
    midpoint or node.
    """
    if m.dimension != grid.dimension:
        raise ValueError("metric and grid dimensions differ")
    d, n1, h = grid.dimension, grid.points_per_axis, grid.spacing
    stag = [_along_axis(_staggered_diff_1d(n1, h), j, d, n1) for j in range(d)]
    cent = [_along_axis(_centered_diff_1d(n1, h), j, d, n1) for j in range(d)]

    pts = grid.points()
    g_nodes = m.conformal_factor(pts)
    if np.any(~np.isfinite(g_nodes)) or np.any(g_nodes <= 0):
        raise AssemblyError("conformal factor g <= 0 at a grid node")

    flat = m.is_flat()
    p0 = _exact_sym(sum(Dj.T @ Dj for Dj in stag))

    if flat:
        ptilde = p0.copy()
        p = p0.copy()
        g_nodes = np.ones(grid.n_points)
    else:
        terms = []
        for j in range(d):
            epts = grid.edge_points(j)
            cj = _metric_coefficients(m, epts)[:, j, j]
            gj = m.conformal_factor(epts)
            if np.any(gj <= 0) or np.any(cj <= 0):
                raise AssemblyError(
                    f"singular coefficient at an edge midpoint of axis {j}")
            terms.append((stag[j].T @ sp.diags(cj) @ stag[j]).tocsr())
        ptilde = sum(terms).tocsr()
        cnode = _metric_coefficients(m, pts)
        for j in range(d):
            for k in range(j + 1, d):
                cjk = cnode[:, j, k]
                if np.max(np.abs(cjk)) == 0.0:
                    continue
                t = (cent[j] @ sp.diags(cjk) @ cent[k]).tocsr()
                ptilde = ptilde - t - t.T
        ptilde = _exact_sym(ptilde)
        inv_g = sp.diags(1.0 / g_nodes)
        p = _exact_sym(inv_g @ ptilde @ inv_g)

    # dilation generator: S = -(1/2) sum_j (X_j Dc_j + Dc_j X_j), A0 = iS
    xs = [sp.diags(pts[:, j]) for j in range(d)]
    s_dil = sum(-(xs[j] @ cent[j] + cent[j] @ xs[j]) * 0.5 for j in range(d))
    s_dil = ((s_dil - s_dil.T) * 0.5).tocsr()  # exact antisymmetry

    ginv_nodes = m.inverse(pts)
    c_max = float(np.sqrt(np.max(np.linalg.eigvalsh(ginv_nodes))))

    return DiscreteModel(grid=grid, metric=m, P=p, P0=p0, Ptilde=ptilde,
                         conformal=g_nodes, c_max=c_max, dilation=s_dil,
                         _centered=cent, _staggered=stag)


def assemble_dilation(grid: Grid) -> sp.csr_matrix:
    """Standalone dilation generator; returns the real matrix S with A0 = iS."""
    d, n1, h = grid.dimension, grid.points_per_axis, grid.spacing
    cent = [_along_axis(_centered_diff_1d(n1, h), j, d, n1) for j in range(d)]
    pts = grid.points()
    xs = [sp.diags(pts[:, j]) for j in range(d)]
    s = sum(-(xs[j] @ cent[j] + cent[j] @ xs[j]) * 0.5 for j in range(d))
    return ((s - s.T) * 0.5).tocsr()


def symmetry_residual(mat: sp.spmatrix) -> float:
    """max |M - M^T| relative to max |M|."""
    diff = (mat - mat.T).tocoo()
    denom = np.max(np.abs(mat.tocoo().data)) if mat.nnz else 1.0
    num = np.max(np.abs(diff.data)) if diff.nnz else 0.0
    return float(num / denom)
