"""Function-of-operator calculus on the assembled models.

Dense eigendecomposition backs everything below the size cap: spectral
cutoffs, projectors, propagators, complex resolvents.  The square root is
also computable without any eigendecomposition through the contour formula

    sigma^(1/2) = (1/pi) integral_0^inf s^(-1/2) sigma (s + sigma)^(-1) ds,

discretized by Gauss-Legendre nodes after the substitution
s = sigma_ref tan^2(theta); each resolvent is applied by a sparse direct
solve.  That route is the independent oracle partner of the dense square
root and is kept free of spectral data on purpose.

Smooth cutoffs are C^3 polynomial smoothsteps, so their derivative bounds
are explicit; the dyadic partition phi(x) = chi(x/2) - chi(x) telescopes to
unity on (2^-n_max, 1].
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretize import DiscreteModel
from .reporting import write_table

log = logging.getLogger(__name__)

DENSE_CAP_DEFAULT = 5000
EIG_RESIDUAL_GATE = 1e-10
ORTHO_GATE = 1e-11


class SpectralError(RuntimeError):
    pass


@dataclass
class SpectrumView:
    """Eigenpairs (w, V) of a symmetric operator sharing the model basis."""

    eigenvalues: np.ndarray
    vectors: np.ndarray
    model: DiscreteModel | None = None
    label: str = ""

    @property
    def n(self) -> int:
        return self.eigenvalues.size

    def apply_function(self, f: Callable, v: np.ndarray) -> np.ndarray:
        """V f(w) V^T v for a vector or a stack of columns."""
        fw = np.asarray(f(self.eigenvalues))
        coeff = self.vectors.T @ np.asarray(v)
        if coeff.ndim == 1:
            return self.vectors @ (fw * coeff)
        return self.vectors @ (fw[:, None] * coeff)

    def function_matrix(self, f: Callable, sym: bool = True) -> np.ndarray:
        fw = np.asarray(f(self.eigenvalues))
        mat = (self.vectors * fw[None, :]) @ self.vectors.T
        if sym:
            mat = (mat + mat.T) * 0.5
        return mat

    def resolvent_apply(self, z: complex, v: np.ndarray) -> np.ndarray:
        coeff = self.vectors.T @ np.asarray(v)
        if coeff.ndim == 1:
            return self.vectors @ (coeff / (self.eigenvalues - z))
        return self.vectors @ (coeff / (self.eigenvalues - z)[:, None])

    def transform(self, f: Callable, label: str = "") -> "SpectrumView":
        """The operator f(H) in the same eigenbasis (f monotone not required)."""
        return SpectrumView(np.asarray(f(self.eigenvalues)), self.vectors,
                            self.model, label or f"f({self.label})")


@dataclass
class SpectralData(SpectrumView):
    """Dense decomposition of one of the assembled operators."""

    which: str = "P"
    mode: str = "dense_eig"
    clamped: int = 0
    residual: float = 0.0
    ortho_residual: float = 0.0


def decompose(model: DiscreteModel, which: str = "P", mode: str = "dense",
              dense_cap: int = DENSE_CAP_DEFAULT, verify: bool = True) -> SpectralData:
    """Dense eigendecomposition of P, P0 or Ptilde.

    Refuses sizes above ``dense_cap``.  Slightly negative eigenvalues (from
    rounding) are clamped to zero with a logged warning; residual gates are
    checked on construction.
    """
    if mode != "dense":
        raise SpectralError("only dense mode is implemented; iterative mode "
                            "refuses full-spectrum requests by design")
    op = model.operator(which)
    n = op.shape[0]
    if n > dense_cap:
        raise SpectralError(
            f"dense mode refused: n={n} exceeds cap {dense_cap}")
    # divide-and-conquer keeps eigenvector orthonormality at machine level
    # even for clustered spectra (the MRRR default loses ~1e-11 there)
    w, v = sla.eigh(op.toarray(), driver="evd")
    scale = max(abs(w[0]), abs(w[-1]), 1e-300)
    clamped = int(np.sum(w < 0))
    if w[0] < -EIG_RESIDUAL_GATE * scale:
        raise SpectralError(
            f"operator {which} has significantly negative eigenvalue {w[0]:.3e}")
    if clamped:
        log.warning("clamped %d slightly negative eigenvalues of %s (min %.3e)",
                    clamped, which, w[0])
        w = np.maximum(w, 0.0)
    residual = ortho = 0.0
    if verify:
        if n <= 2500:
            recon = (v * w[None, :]) @ v.T
            residual = float(np.max(np.abs(op.toarray() - recon)) / scale)
            ortho = float(np.max(np.abs(v.T @ v - np.eye(n))))
        else:
            rng = np.random.default_rng(0)
            probes = rng.standard_normal((n, 8))
            recon = v @ (w[:, None] * (v.T @ probes))
            residual = float(np.max(np.abs(op @ probes - recon))
                             / (scale * np.max(np.abs(probes))))
            ortho = float(np.max(np.abs(v.T @ v[:, ::257] -
                                        np.eye(n)[:, ::257])))
        if residual > EIG_RESIDUAL_GATE:
            raise SpectralError(f"reconstruction residual {residual:.2e} above gate")
        if ortho > ORTHO_GATE:
            raise SpectralError(f"orthonormality residual {ortho:.2e} above gate")
    return SpectralData(eigenvalues=w, vectors=v, model=model, label=which,
                        which=which, clamped=clamped, residual=residual,
                        ortho_residual=ortho)


def apply_function(sd: SpectrumView, f: Callable, v: np.ndarray) -> np.ndarray:
    return sd.apply_function(f, v)


# ---------------------------------------------------------------------------
# square root by contour quadrature (spectral-data-free route)
# ---------------------------------------------------------------------------

class SqrtQuadratureResult(NamedTuple):
    value: np.ndarray
    sigma_ref: float
    smallest_eig: float
    worst_residual: float
    n_nodes: int


def _smallest_eig_estimate(op: sp.csr_matrix, solve, iters: int = 40) -> float:
    """Inverse power iteration with a deterministic start."""
    n = op.shape[0]
    v = np.ones(n) / np.sqrt(n)
    lam = 0.0
    for _ in range(iters):
        v = solve(v)
        nrm = np.linalg.norm(v)
        if nrm == 0:
            return 0.0
        v /= nrm
        lam = float(v @ (op @ v))
    return lam


def sqrt_quadrature(model: DiscreteModel, v: np.ndarray, n_nodes: int = 40,
                    which: str = "P", sigma_ref: float | None = None,
                    solve_tol: float = 1e-12) -> SqrtQuadratureResult:
    """P^(1/2) v through the resolvent contour formula.

    Gauss-Legendre nodes in theta after s = sigma_ref tan^2(theta); each
    (s + P) solve is a sparse LU with one step of iterative refinement when
    the relative residual exceeds ``solve_tol``.  sigma_ref defaults to the
    mean eigenvalue (trace / n), a median-scale estimate.
    """
    if n_nodes < 8:
        raise ValueError("need at least 8 quadrature nodes")
    op = model.operator(which).tocsc()
    n = op.shape[0]
    v = np.asarray(v, dtype=float)
    if sigma_ref is None:
        sigma_ref = float(op.diagonal().sum() / n)
    base_lu = spla.splu((op + 0.0 * sp.identity(n, format="csc")).tocsc())
    smallest = _smallest_eig_estimate(op, base_lu.solve)
    if smallest <= 0:
        log.warning("smallest-eigenvalue estimate %.3e is not positive; the "
                    "contour formula is singular on the kernel", smallest)

    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    theta = 0.25 * np.pi * (nodes + 1.0)
    wq = 0.25 * np.pi * weights
    acc = np.zeros_like(v)
    worst = 0.0
    ident = sp.identity(n, format="csc")
    for th, w in zip(theta, wq):
        s = sigma_ref * np.tan(th) ** 2
        mat = (op + s * ident).tocsc()
        lu = spla.splu(mat)
        x = lu.solve(v)
        res = np.linalg.norm(mat @ x - v) / max(np.linalg.norm(v), 1e-300)
        if res > solve_tol:
            x = x + lu.solve(v - mat @ x)
            res = np.linalg.norm(mat @ x - v) / max(np.linalg.norm(v), 1e-300)
        worst = max(worst, float(res))
        acc += w * (1.0 / np.cos(th) ** 2) * (op @ x)
    value = (2.0 * np.sqrt(sigma_ref) / np.pi) * acc
    return SqrtQuadratureResult(value, float(sigma_ref), float(smallest),
                                worst, n_nodes)


# ---------------------------------------------------------------------------
# smooth cutoffs and the dyadic partition
# ---------------------------------------------------------------------------

def smoothstep_c3(t):
    """C^3 polynomial step: 0 for t<=0, 1 for t>=1, 35t^4-84t^5+70t^6-20t^7."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return t**4 * (35.0 + t * (-84.0 + t * (70.0 - 20.0 * t)))


def cutoff_chi(x):
    """chi = 1 on (-inf, 1/2], 0 on [1, inf), C^3 smoothstep between."""
    x = np.asarray(x, dtype=float)
    return 1.0 - smoothstep_c3(2.0 * x - 1.0)


def highpass(x, threshold: float):
    """0 below threshold/2, 1 above threshold, smooth between."""
    return 1.0 - cutoff_chi(np.asarray(x, dtype=float) / threshold)


@dataclass
class DyadicPartition:
    """phi(x) = chi(x/2) - chi(x); sum over lambda = 2^n telescopes to 1.

    supp phi = [1/2, 2]; the enlarged phi_tilde equals one on supp phi with
    support in [1/4, 4].  Coverage of the partition is (2^-n_max, 1].
    """

    n_max: int
    support: tuple = (0.5, 2.0)
    coverage: tuple = field(init=False)

    def __post_init__(self):
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        self.coverage = (2.0 ** (-self.n_max), 1.0)

    @property
    def scales(self) -> np.ndarray:
        return 2.0 ** np.arange(self.n_max + 1)

    @staticmethod
    def phi(x):
        x = np.asarray(x, dtype=float)
        return cutoff_chi(x / 2.0) - cutoff_chi(x)

    @staticmethod
    def phi_tilde(x):
        x = np.asarray(x, dtype=float)
        return (1.0 - cutoff_chi(2.0 * x)) * cutoff_chi(x / 4.0)

    def partition_sum(self, x):
        x = np.asarray(x, dtype=float)
        total = np.zeros_like(x)
        for lam in self.scales:
            total += self.phi(lam * x)
        return total

    def min_on_interval(self, interval, samples: int = 4001) -> float:
        xs = np.linspace(interval[0], interval[1], samples)
        return float(np.min(self.phi(xs)))


def build_dyadic(n_max: int) -> DyadicPartition:
    part = DyadicPartition(n_max=n_max)
    xs = np.linspace(part.coverage[0] * (1 + 1e-9), 1.0, 2001)
    resid = float(np.max(np.abs(part.partition_sum(xs) - 1.0)))
    if resid > 1e-12:
        raise SpectralError(f"partition-of-unity residual {resid:.2e}")
    return part


# ---------------------------------------------------------------------------
# sharp spectral projectors
# ---------------------------------------------------------------------------

@dataclass
class SpectralWindow:
    """Orthogonal projector onto eigenvalues inside a closed interval."""

    interval: tuple
    mask: np.ndarray
    sd: SpectrumView

    @property
    def rank(self) -> int:
        return int(self.mask.sum())

    @property
    def basis(self) -> np.ndarray:
        return self.sd.vectors[:, self.mask]

    def matrix(self) -> np.ndarray:
        b = self.basis
        mat = b @ b.T
        return (mat + mat.T) * 0.5

    def apply(self, v: np.ndarray) -> np.ndarray:
        b = self.basis
        return b @ (b.T @ np.asarray(v))


def spectral_projector(sd: SpectrumView, interval) -> SpectralWindow:
    lo, hi = float(interval[0]), float(interval[1])
    mask = (sd.eigenvalues >= lo) & (sd.eigenvalues <= hi)
    win = SpectralWindow((lo, hi), mask, sd)
    if win.rank == 0:
        log.warning("spectral projector on [%g, %g] has rank 0; Mourre-type "
                    "experiments need callers to check the rank", lo, hi)
    return win


def export_eigenvalues(sd: SpectrumView, path) -> None:
    write_table(path, ["index", "eigenvalue"],
                [(k, sd.eigenvalues[k]) for k in range(sd.n)])


def operator_norm(matvec: Callable, rmatvec: Callable, n: int,
                  tol: float = 1e-8, maxiter: int = 200,
                  dtype=float) -> float:
    """Largest singular value by power iteration on M* M.

    Deterministic start (normalized ones vector with a fixed perturbation);
    stops at relative tolerance ``tol`` or after ``maxiter`` sweeps.
    """
    rng = np.random.default_rng(12345)
    v = np.ones(n, dtype=dtype) + 1e-3 * rng.standard_normal(n)
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(maxiter):
        av = matvec(v)
        u = rmatvec(av)
        nrm = np.linalg.norm(u)
        if nrm == 0.0:
            return 0.0
        new_sigma = float(np.sqrt(np.real(np.vdot(v, u))))
        v = u / nrm
        if sigma > 0 and abs(new_sigma - sigma) <= tol * new_sigma:
            return new_sigma
        sigma = new_sigma
    return sigma
