"""Asymptotically Euclidean metric families and hypothesis screens.

A metric here is a smooth field of symmetric positive-definite matrices
g_ij(x) on R^d approaching the identity like <x>^(-rho), together with its
inverse, the conformal factor det(g)^(1/4), and hand-coded derivatives of
g_ij - delta_ij up to third order.  Two screens accompany the families: a
decay check that measures sup |d^a (g - I)| <x>^(|a| + rho) over probe
spheres, and a geodesic ray integrator that looks (heuristically, never
certifying) for trapped trajectories.

All built-in families are analytic with closed-form derivatives; finite
differences never enter the decay measurements.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.stats import qmc

from .reporting import FAIL, INCONCLUSIVE, PASS, EstimateReport, fit_power_law

FAMILIES = ("flat", "radial_bump", "anisotropic_bump")


def japanese_bracket(x_sq):
    """<x> = (1 + |x|^2)^(1/2), taking |x|^2 as input."""
    return np.sqrt(1.0 + x_sq)


def _radial_power_derivs(x, s, order):
    """Derivatives of f(x) = (1+|x|^2)^(-s) up to ``order`` (<= 3).

    Returns a dict mapping derivative order m to an array of shape
    (npts, d, ..., d) with m trailing axes (symmetric in them).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    npts, d = x.shape
    r2 = np.sum(x * x, axis=1)
    base = 1.0 + r2
    f = {m: base ** (-(s + m)) for m in range(order + 1)}
    out = {0: f[0]}
    eye = np.eye(d)
    if order >= 1:
        out[1] = -2.0 * s * x * f[1][:, None]
    if order >= 2:
        out[2] = (-2.0 * s * f[1][:, None, None] * eye
                  + 4.0 * s * (s + 1) * f[2][:, None, None]
                  * x[:, :, None] * x[:, None, :])
    if order >= 3:
        xi = x[:, :, None, None]
        xj = x[:, None, :, None]
        xk = x[:, None, None, :]
        sym = (eye[None, :, :, None] * xk + eye[None, :, None, :] * xj
               + eye[None, None, :, :] * xi)
        out[3] = (4.0 * s * (s + 1) * f[2][:, None, None, None] * sym
                  - 8.0 * s * (s + 1) * (s + 2) * f[3][:, None, None, None]
                  * xi * xj * xk)
    return out


def _outer_xx_derivs(x, s, order):
    """Derivatives of t_ij(x) = x_i x_j (1+|x|^2)^(-s) up to ``order`` (<= 3).

    Shapes: order m gives (npts, d, d, d*m) with the two leading tensor axes
    (i, j) first and the m derivative axes trailing.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    npts, d = x.shape
    fd = _radial_power_derivs(x, s, order)
    eye = np.eye(d)
    xi = x[:, :, None]
    xj = x[:, None, :]
    out = {0: xi * xj * fd[0][:, None, None]}
    if order >= 1:
        f0 = fd[0][:, None, None, None]
        d1 = fd[1]  # (n, k)
        term = (eye[None, :, None, :] * xj[..., None] * f0
                + eye[None, None, :, :] * xi[..., None] * f0
                + xi[..., None] * xj[..., None] * d1[:, None, None, :])
        out[1] = term
    if order >= 2:
        f0 = fd[0][:, None, None, None, None]
        d1 = fd[1][:, None, None, :, None]  # derivative axis k
        d1l = fd[1][:, None, None, None, :]  # derivative axis l
        d2 = fd[2][:, None, None, :, :]
        dik = eye[None, :, None, :, None]
        djk = eye[None, None, :, :, None]
        dil = eye[None, :, None, None, :]
        djl = eye[None, None, :, None, :]
        xi2 = x[:, :, None, None, None]
        xj2 = x[:, None, :, None, None]
        out[2] = ((dik * djl + djk * dil) * f0
                  + (dik * xj2 + djk * xi2) * d1l
                  + (dil * xj2 + djl * xi2) * d1
                  + xi2 * xj2 * d2)
    if order >= 3:
        # axes of the result: (n, i, j, k, l, m) = (0, 1, 2, 3, 4, 5)
        def dd(a, b):
            shape = [1] * 6
            shape[a] = shape[b] = d
            return eye.reshape(shape)

        def xx(a):
            shape = [npts] + [1] * 5
            shape[a] = d
            return x.reshape(shape)

        def f1(b):
            return np.expand_dims(fd[1], tuple(a for a in (1, 2, 3, 4, 5) if a != b))

        def f2(b1, b2):
            return np.expand_dims(fd[2], tuple(a for a in (1, 2, 3, 4, 5)
                                               if a not in (b1, b2)))

        f3 = fd[3][:, None, None, :, :, :]
        out[3] = ((dd(1, 3) * dd(2, 4) + dd(2, 3) * dd(1, 4)) * f1(5)
                  + (dd(1, 3) * dd(2, 5) + dd(2, 3) * dd(1, 5)) * f1(4)
                  + (dd(1, 3) * xx(2) + dd(2, 3) * xx(1)) * f2(4, 5)
                  + (dd(1, 4) * dd(2, 5) + dd(2, 4) * dd(1, 5)) * f1(3)
                  + (dd(1, 4) * xx(2) + dd(2, 4) * xx(1)) * f2(3, 5)
                  + (dd(1, 5) * xx(2) + dd(2, 5) * xx(1)) * f2(3, 4)
                  + xx(1) * xx(2) * f3)
    return out


@dataclass
class MetricField:
    """A metric family instance with analytic derivative oracle.

    ``deviation_derivs(x, order)`` returns the derivatives of g - I; the
    metric itself, its inverse, and the conformal factor g(x) = det^(1/4)
    are exposed as vectorized evaluations over point arrays of shape
    (npts, d).
    """

    family: str
    dimension: int
    decay_rate: float
    amplitude: float
    derivative_mode: str = "analytic"
    max_derivative_order: int = 3
    _meta: dict = field(default_factory=dict, repr=False)

    def deviation(self, x) -> np.ndarray:
        return self.deviation_derivs(x, 0)[0]

    def deviation_derivs(self, x, order: int) -> dict:
        if order > self.max_derivative_order:
            raise ValueError(
                f"derivative oracle supports order <= {self.max_derivative_order}")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        npts, d = x.shape
        if d != self.dimension:
            raise ValueError(f"points have dimension {d}, metric has {self.dimension}")
        a, rho = self.amplitude, self.decay_rate
        eye = np.eye(d)
        if self.family == "flat" or a == 0.0:
            out = {0: np.zeros((npts, d, d))}
            for m in range(1, order + 1):
                out[m] = np.zeros((npts, d, d) + (d,) * m)
            return out
        rad = _radial_power_derivs(x, rho / 2.0, order)
        out = {}
        for m in range(order + 1):
            dev = a * rad[m][:, None, None, ...] * eye.reshape(
                (1, d, d) + (1,) * m)
            out[m] = dev
        if self.family == "anisotropic_bump":
            off = _outer_xx_derivs(x, (rho + 2.0) / 2.0, order)
            for m in range(order + 1):
                out[m] = out[m] + a * off[m]
        return out

    def entries(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.eye(self.dimension)[None] + self.deviation(x)

    def inverse(self, x) -> np.ndarray:
        return np.linalg.inv(self.entries(x))

    def det(self, x) -> np.ndarray:
        return np.linalg.det(self.entries(x))

    def conformal_factor(self, x) -> np.ndarray:
        """g(x) = det(metric)^(1/4)."""
        return self.det(x) ** 0.25

    def inverse_gradient(self, x) -> np.ndarray:
        """d_k g^{ij}(x) from d(G^-1) = -G^-1 (dG) G^-1, shape (n, d, d, d)."""
        ginv = self.inverse(x)
        dg = self.deviation_derivs(x, 1)[1]  # (n, i, j, k)
        return -np.einsum("nia,najk,nbj->nibk", ginv, dg, ginv)

    def is_flat(self) -> bool:
        return self.family == "flat" or self.amplitude == 0.0


def _positivity_probe_points(d: int, radius: float, n: int = 10000) -> np.ndarray:
    """Deterministic low-discrepancy probe set in [-radius, radius]^d plus 0."""
    sampler = qmc.Halton(d=d, scramble=False)
    pts = sampler.random(n) * 2.0 * radius - radius
    return np.vstack([np.zeros((1, d)), pts])


def make_metric(family: str, d: int, rho: float, amplitude: float,
                probe_radius: float = 50.0) -> MetricField:
    """Build a metric family instance and verify positive definiteness.

    radial_bump:       g_ij = (1 + a <x>^-rho) delta_ij
    anisotropic_bump:  adds a x_i x_j <x>^(-rho-2)
    Positivity is probed on a deterministic low-discrepancy set of 10^4
    points plus the origin; a failing amplitude raises ValueError.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown metric family {family!r}; choose from {FAMILIES}")
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if rho <= 0:
        raise ValueError("decay rate rho must be positive")
    m = MetricField(family=family, dimension=d, decay_rate=float(rho),
                    amplitude=float(amplitude))
    if not m.is_flat():
        pts = _positivity_probe_points(d, probe_radius)
        eigmin = np.linalg.eigvalsh(m.entries(pts))[:, 0]
        if eigmin.min() <= 0:
            bad = pts[int(np.argmin(eigmin))]
            raise ValueError(
                f"metric loses positive definiteness near x={np.round(bad, 3)} "
                f"(smallest eigenvalue {eigmin.min():.3g}); reduce |amplitude|")
    return m


def _probe_directions(d: int) -> np.ndarray:
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        th = np.linspace(0, 2 * np.pi, 16, endpoint=False)
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    dirs = np.array([v for v in itertools.product((-1, 0, 1), repeat=d)
                     if any(v)], dtype=float)
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def decay_check(m: MetricField, probe_radii, alpha_max: int = 2,
                rho_override: float | None = None) -> EstimateReport:
    """Measure sup |d^a (g_ij - delta_ij)| <x>^(|a| + rho) over probe spheres.

    Verdict is "consistent" (pass) when the per-radius sup shows no growth
    trend across the top half of the radii; checking against a rate faster
    than the family's true decay (via ``rho_override``) makes the weighted
    sup grow like a power of <x> and fails.
    """
    radii = np.sort(np.asarray(list(probe_radii), dtype=float))
    if alpha_max > m.max_derivative_order:
        raise ValueError("alpha_max exceeds the derivative oracle order")
    rho = m.decay_rate if rho_override is None else float(rho_override)
    dirs = _probe_directions(m.dimension)
    report = EstimateReport("decay-check", params={
        "family": m.family, "d": m.dimension, "rho": rho,
        "amplitude": m.amplitude, "alpha_max": alpha_max})
    sups = np.zeros((alpha_max + 1, radii.size))
    for ir, r in enumerate(radii):
        pts = dirs * r
        derivs = m.deviation_derivs(pts, alpha_max)
        w = japanese_bracket(np.sum(pts * pts, axis=1))
        for order in range(alpha_max + 1):
            flat = np.abs(derivs[order]).reshape(pts.shape[0], -1).max(axis=1)
            sups[order, ir] = float(np.max(flat * w ** (order + rho)))
    for order in range(alpha_max + 1):
        vals = sups[order]
        if vals.max() == 0.0:
            verdict, slope = PASS, 0.0
        else:
            top = max(2, radii.size // 2)
            fit = fit_power_law(radii[-top:], np.maximum(vals[-top:], 1e-300),
                                drop_lowest_octave=False)
            slope = fit.slope
            verdict = PASS if slope <= 0.1 else FAIL
        report.add_row(f"sup|d^{order}(g-I)|<x>^({order}+rho)", f"alpha={order}",
                       vals[-1], predicted=0.0, r2=slope,
                       verdict=verdict,
                       note="consistent" if verdict == PASS else "weighted sup grows")
    report.finalize()
    return report


@dataclass
class RayResult:
    escaped: bool
    escape_time: float
    p0_drift: float
    failed: bool = False


def _hamiltonian_rhs(m: MetricField):
    def rhs(t, y):
        d = m.dimension
        x, xi = y[:d][None, :], y[d:]
        ginv = m.inverse(x)[0]
        dginv = m.inverse_gradient(x)[0]  # (i, j, k)
        xdot = 2.0 * ginv @ xi
        xidot = -np.einsum("ijk,i,j->k", dginv, xi, xi)
        return np.concatenate([xdot, xidot])
    return rhs


def geodesic_escape(m: MetricField, n_rays: int, t_max: float, r_escape: float,
                    seed: int = 0, r_start: float = 2.0) -> EstimateReport:
    """Integrate the Hamiltonian flow of p0 = g^{jk} xi_j xi_k for sampled rays.

    Rays are seeded at low-discrepancy positions in the ball |x| <= r_start
    with momenta normalized to the unit cosphere p0 = 1.  Verdict "escaped"
    requires every ray to reach |x| > r_escape before t_max; otherwise the
    report says "possibly trapping".  This is a screen, not a certificate.
    """
    d = m.dimension
    rng = np.random.default_rng(seed)
    sampler = qmc.Halton(d=d, scramble=False)
    raw = sampler.random(n_rays) * 2.0 - 1.0
    positions = raw * r_start / max(1.0, np.sqrt(d))
    directions = rng.standard_normal((n_rays, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    rhs = _hamiltonian_rhs(m)

    def escape_event(t, y):
        return float(np.linalg.norm(y[:d]) - r_escape)
    escape_event.terminal = True
    escape_event.direction = 1.0

    results = []
    for x0, eta in zip(positions, directions):
        p0 = float(eta @ m.inverse(x0[None])[0] @ eta)
        xi0 = eta / np.sqrt(p0)
        y0 = np.concatenate([x0, xi0])
        try:
            sol = solve_ivp(rhs, (0.0, t_max), y0, rtol=1e-9, atol=1e-11,
                            events=escape_event, dense_output=False)
        except Exception:
            results.append(RayResult(False, np.inf, np.nan, failed=True))
            continue
        escaped = len(sol.t_events[0]) > 0
        t_esc = float(sol.t_events[0][0]) if escaped else np.inf
        yf = sol.y[:, -1]
        p0f = float(yf[d:] @ m.inverse(yf[:d][None])[0] @ yf[d:])
        drift = abs(p0f - 1.0)
        results.append(RayResult(escaped, t_esc, drift, failed=not sol.success))
    n_escaped = sum(r.escaped for r in results)
    n_failed = sum(r.failed for r in results)
    slowest = max((r.escape_time for r in results if r.escaped), default=np.inf)
    worst_drift = max((r.p0_drift for r in results if np.isfinite(r.p0_drift)),
                      default=np.nan)
    report = EstimateReport("geodesic-escape", params={
        "family": m.family, "d": d, "rho": m.decay_rate,
        "amplitude": m.amplitude, "n_rays": n_rays, "t_max": t_max,
        "r_escape": r_escape, "seed": seed})
    all_escaped = n_escaped == n_rays
    report.add_row("rays_escaped", f"of {n_rays}", n_escaped, predicted=n_rays,
                   verdict=PASS if all_escaped else FAIL,
                   note="escaped" if all_escaped else "possibly trapping")
    report.add_row("slowest_escape_time", "", slowest, note="")
    report.add_row("worst_p0_drift", "", worst_drift, predicted=1e-6,
                   verdict=PASS if worst_drift < 1e-6 else INCONCLUSIVE,
                   note=f"{n_failed} integrator failures" if n_failed else "")
    report.finalize()
    return report
