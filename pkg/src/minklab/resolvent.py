"""The flat Klein-Gordon resolvent ``R = (P - i)^{-1}``, ``P = d_t^2 - Delta_y``.

Per dual mode ``eta`` the resolvent is the convolution

    uhat(t) = (i / 2a) * int exp(-i |t - s| a) fhat(s) ds,     a = sqrt(|eta|^2 - i),

which splits into a causal part ``u-`` (``s < t``) and an anti-causal part
``u+`` (``s > t``).  Both are advanced with an exponential integrator: the
factor ``exp(-i a h)`` is exact and only ``fhat`` is interpolated inside a
step, so accuracy does not degrade as ``a1 ~ |eta|`` grows.  The s-integral
runs over the grid window; for sources supported inside the window this is
the exact truncation of the whole-line formula.

The time derivative needs no differencing: ``d_t uhat = (u- - u+) / 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import bumps
from .reports import NormReport
from .spectral_field import (GridSpec, SpaceTimeField, SpectralSymbolTable, build_symbol_table,
                             fourier_y, inverse_fourier_y, support_ok)

ORDERS = (1, 2, 4)
SKIP_REL = 1e-14


# ---------------------------------------------------------------------------
# exponential quadrature weights


def phi_moments(z, mmax: int) -> np.ndarray:
    """``psi_m(z) = int_0^1 exp(z s) s^m ds`` for ``m = 0..mmax``; shape ``(mmax+1,) + z.shape``."""
    z = np.asarray(z, dtype=complex)
    out = np.empty((mmax + 1,) + z.shape, dtype=complex)
    small = np.abs(z) < 1.0
    if np.any(small):
        zs = z[small]
        term = np.ones_like(zs)
        acc = [np.zeros_like(zs) for _ in range(mmax + 1)]
        for k in range(30):
            for m in range(mmax + 1):
                acc[m] += term / (k + m + 1)
            term = term * zs / (k + 1)
        for m in range(mmax + 1):
            out[m][small] = acc[m]
    big = ~small
    if np.any(big):
        zb = z[big]
        ez = np.exp(zb)
        p = (ez - 1.0) / zb
        out[0][big] = p
        for m in range(1, mmax + 1):
            p = (ez - m * p) / zb
            out[m][big] = p
    return out


def _lagrange_coeffs(nodes) -> np.ndarray:
    """Row q holds the monomial coefficients (increasing degree) of the q-th Lagrange basis polynomial."""
    nodes = [float(v) for v in nodes]
    rows = []
    for q, vq in enumerate(nodes):
        others = nodes[:q] + nodes[q + 1:]
        c = np.polynomial.polynomial.polyfromroots(others) if others else np.ones(1)
        rows.append(c / np.prod([vq - v for v in others]))
    return np.array(rows)


def step_weights(z, nodes) -> np.ndarray:
    """Weights ``W_q`` with ``int_0^1 exp(z v) P(v) dv = sum_q W_q P(nodes[q])`` for polynomial ``P``
    of degree ``< len(nodes)``.  Shape ``(len(nodes),) + z.shape``."""
    c = _lagrange_coeffs(nodes)
    psi = phi_moments(z, len(nodes) - 1)
    return np.tensordot(c, psi, axes=(1, 0))


@dataclass(frozen=True)
class ResolventPlan:
    """Discretised ``R`` on ``grid``.

    ``order`` selects the interpolant of ``fhat`` within a step: 1 is the
    exponential rectangle, 2 the exponential trapezoid (``fhat`` affine),
    4 uses the cubic through four neighbouring nodes (one-sided at the ends).
    ``support_band`` is the fraction of the window at each end where the
    source must vanish.
    """

    grid: GridSpec
    table: SpectralSymbolTable
    order: int = 4
    support_band: float = 0.1

    def __post_init__(self):
        if self.order not in ORDERS:
            raise ValueError(f"quadrature order must be one of {ORDERS}")
        if self.table.eta_abs.shape != self.grid.space_shape:
            raise ValueError("symbol table is not built on this grid's dual lattice")
        if self.order == 4 and self.grid.N_t < 4:
            raise ValueError("order 4 needs at least four time samples")
        if not 0.0 <= self.support_band < 0.5:
            raise ValueError("support_band must lie in [0, 0.5)")

    @classmethod
    def build(cls, grid: GridSpec, order: int = 4, support_band: float = 0.1) -> "ResolventPlan":
        return cls(grid, build_symbol_table(grid), order, support_band)

    @property
    def operator_bound(self) -> float:
        """``sup_eta 1/(a2 |a|)`` over the lattice: the constant in ``||Rf|| <= C ||f||``."""
        return float(np.max(1.0 / (self.table.a2 * self.table.r)))

    def margin_product(self, f: SpaceTimeField, level: float = 1e-10) -> float:
        """``a2(eta_max) * margin``: damping across the gap between the support of ``f``
        and the nearer window end.  Informational; large values mean the whole-line
        kernel would barely see sources outside the window."""
        live = np.nonzero(np.max(np.abs(f.values).reshape(f.grid.N_t, -1), axis=1) > level)[0]
        if live.size == 0:
            return math.inf
        t = f.grid.t
        gap = min(t[live[0]] - t[0], t[-1] - t[live[-1]])
        return float(np.min(self.table.a2) * gap)


def _nodes(order: int, N: int):
    """Per step: stencil start index; distinct (offset -> forward nodes, backward nodes)."""
    j = np.arange(N - 1)
    if order == 1:
        fwd_start, bwd_start = j, j + 1
        fwd = {0: [1.0]}
        bwd = {1: [1.0]}
        return fwd_start, bwd_start, fwd, bwd
    if order == 2:
        return j, j, {0: [1.0, 0.0]}, {0: [0.0, 1.0]}
    start = np.clip(j - 1, 0, N - 4)
    offsets = sorted(set((start - j).tolist()))
    fwd = {o: [float(1 - o - q) for q in range(4)] for o in offsets}   # v = j+1-k, k = j+o+q
    bwd = {o: [float(o + q) for q in range(4)] for o in offsets}       # v = k-j
    return start, start, fwd, bwd


def _increments(F: np.ndarray, h: float, z: np.ndarray, start: np.ndarray,
                nodes: dict) -> np.ndarray:
    """``inc[j] = h * sum_q W_q(z) F[start_j + q]`` for every step ``j``."""
    N = F.shape[0]
    j = np.arange(N - 1)
    inc = np.zeros((N - 1, F.shape[1]), dtype=complex)
    for off, vnodes in nodes.items():
        sel = np.nonzero(start - j == off)[0]
        if sel.size == 0:
            continue
        j0, j1 = sel[0], sel[-1] + 1          # steps sharing an offset are contiguous
        W = step_weights(z, vnodes)
        for q in range(len(vnodes)):
            inc[j0:j1] += W[q][None, :] * F[j0 + off + q:j1 + off + q]
    return h * inc


def _sweep(E: np.ndarray, inc: np.ndarray, forward: bool) -> np.ndarray:
    N = inc.shape[0] + 1
    u = np.zeros((N, inc.shape[1]), dtype=complex)
    if forward:
        for j in range(N - 1):
            u[j + 1] = E * u[j] + inc[j]
    else:
        for j in range(N - 2, -1, -1):
            u[j] = E * u[j + 1] + inc[j]
    return u


def _passes(a: np.ndarray, fhat: np.ndarray, h: float, order: int):
    N = fhat.shape[0]
    z = -1j * a * h
    E = np.exp(z)
    fs, bs, fn, bn = _nodes(order, N)
    return (_sweep(E, _increments(fhat, h, z, fs, fn), forward=True),
            _sweep(E, _increments(fhat, h, z, bs, bn), forward=False))


def mode_passes(plan: ResolventPlan, fhat: np.ndarray):
    """Causal and anti-causal integrals ``(u-, u+)`` for dual data ``fhat`` of shape
    ``(N_t, M)`` with ``M`` flattened modes.  Modes whose data never exceed ``SKIP_REL`` times the
    largest entry (transform roundoff of single-mode sources) are left at zero."""
    N, M = fhat.shape
    um = np.zeros((N, M), dtype=complex)
    up = np.zeros((N, M), dtype=complex)
    peak = np.max(np.abs(fhat), axis=0)
    live = np.nonzero(peak > SKIP_REL * peak.max(initial=0.0))[0]
    if live.size == 0:
        return um, up
    a = plan.table.a.reshape(-1)[live]
    um[:, live], up[:, live] = _passes(a, fhat[:, live], plan.grid.dt, plan.order)
    return um, up


def _check_support(plan: ResolventPlan, f: SpaceTimeField):
    if f.grid != plan.grid:
        raise ValueError("field and plan live on different grids")
    if f.spectral:
        raise ValueError("expects a physical-space field")
    if not support_ok(f, band=plan.support_band):
        raise ValueError(
            f"source does not vanish (<= 1e-10) in the outer {plan.support_band:.0%} "
            "of the time window")


@dataclass
class ResolventSolution:
    """Dual-space pieces of ``u = Rf``; everything else is derived from them."""

    plan: ResolventPlan
    fhat: np.ndarray
    u_minus: np.ndarray
    u_plus: np.ndarray

    def _field(self, vals) -> SpaceTimeField:
        g = self.plan.grid
        return SpaceTimeField(g, vals.reshape(g.shape), spectral=True)

    def uhat(self) -> SpaceTimeField:
        ainv = (0.5j / self.plan.table.a).reshape(-1)
        return self._field((self.u_minus + self.u_plus) * ainv[None])

    def dt_uhat(self) -> SpaceTimeField:
        return self._field(0.5 * (self.u_minus - self.u_plus))

    def u(self) -> SpaceTimeField:
        return inverse_fourier_y(self.uhat())

    def dt_u(self) -> SpaceTimeField:
        return inverse_fourier_y(self.dt_uhat())


def solve(plan: ResolventPlan, f: SpaceTimeField) -> ResolventSolution:
    _check_support(plan, f)
    fh = fourier_y(f).values.reshape(plan.grid.N_t, -1)
    um, up = mode_passes(plan, fh)
    return ResolventSolution(plan, fh, um, up)


def apply_resolvent(plan: ResolventPlan, f: SpaceTimeField) -> SpaceTimeField:
    """``u = (P - i)^{-1} f`` on the grid window."""
    return solve(plan, f).u()


def time_derivative(plan: ResolventPlan, f: SpaceTimeField) -> SpaceTimeField:
    """``d_t (P - i)^{-1} f`` from the split integrals, without differencing."""
    return solve(plan, f).dt_u()


def per_mode_quadrature(eta_abs: float, g, t: float, T0: float, T1: float,
                        epsrel: float = 1e-12) -> complex:
    """Adaptive-quadrature oracle ``(i/2a) int_{T0}^{T1} exp(-i|t-s|a) g(s) ds`` for one mode."""
    a = complex(SpectralSymbolTable.from_eta(np.array([eta_abs])).a[0])

    def piece(lo, hi):
        if hi <= lo:
            return 0.0
        kern = lambda s: np.exp(-1j * abs(t - s) * a) * g(s)
        re = integrate.quad(lambda s: kern(s).real, lo, hi, epsabs=1e-14, epsrel=epsrel, limit=500)[0]
        im = integrate.quad(lambda s: kern(s).imag, lo, hi, epsabs=1e-14, epsrel=epsrel, limit=500)[0]
        return re + 1j * im

    return 0.5j / a * (piece(T0, t) + piece(t, T1))


# ---------------------------------------------------------------------------
# checks and probes


D2_STENCIL = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0


def second_derivative_t(vals: np.ndarray, dt: float) -> np.ndarray:
    """Fourth-order central ``d_t^2`` on interior nodes ``2 .. N_t-3``."""
    N = vals.shape[0]
    out = np.zeros((N - 4,) + vals.shape[1:], dtype=vals.dtype)
    for k, c in enumerate(D2_STENCIL):
        out += c * vals[k:N - 4 + k]
    return out / dt ** 2


def first_derivative_t(vals: np.ndarray, dt: float) -> np.ndarray:
    """Fourth-order central ``d_t`` on interior nodes ``2 .. N_t-3``."""
    N = vals.shape[0]
    return (vals[0:N - 4] - 8 * vals[1:N - 3] + 8 * vals[3:N - 1] - vals[4:N]) / (12.0 * dt)


def residual_check(plan: ResolventPlan, f: SpaceTimeField,
                   sol: ResolventSolution | None = None) -> float:
    """``||(P - i)u - f|| / ||f||`` on interior time nodes; 0 when ``f = 0``.

    Evaluated mode by mode (``-Delta_y -> |eta|^2``), which by Parseval equals
    the physical-space ratio.
    """
    sol = sol or solve(plan, f)
    uh = sol.uhat().values.reshape(plan.grid.N_t, -1)
    fh = sol.fhat
    a_sq = (plan.table.eta_abs ** 2 - 1j).reshape(-1)
    res = second_derivative_t(uh, plan.grid.dt) + a_sq[None] * uh[2:-2] - fh[2:-2]
    den = np.linalg.norm(fh[2:-2])
    return 0.0 if den == 0 else float(np.linalg.norm(res) / den)


def random_interior_field(grid: GridSpec, rng: np.random.Generator,
                          band: float = 0.1, corr_time: float = 0.5) -> SpaceTimeField:
    """Complex noise, smoothed over ``corr_time`` in t and tapered to vanish in the
    outer ``band`` of the time window."""
    noise = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    tau = 2.0 * np.pi * np.fft.fftfreq(grid.N_t, d=grid.dt)
    damp = np.exp(-0.5 * (tau * corr_time) ** 2).reshape((-1,) + (1,) * grid.n)
    noise = np.fft.ifft(np.fft.fft(noise, axis=0) * damp, axis=0)
    span = grid.T1 - grid.T0
    lo, hi = grid.T0 + band * span, grid.T1 - band * span
    w = bumps.window(grid.t, lo, hi, 0.2 * (hi - lo))
    return SpaceTimeField(grid, noise * w.reshape((-1,) + (1,) * grid.n))


def _l2(vals: np.ndarray, grid: GridSpec, t_weight=None) -> float:
    axes = tuple(range(1, vals.ndim))
    slab = np.sum(np.abs(vals) ** 2, axis=axes)
    if t_weight is not None:
        slab = slab * np.abs(t_weight) ** 2
    return float(np.sqrt(integrate.trapezoid(slab, dx=grid.dt) * grid.deta ** grid.n))


def operator_norm_probe(plan: ResolventPlan, ensemble_size: int = 64, seed: int = 0) -> NormReport:
    """Largest ``||Rf|| / ||f||`` over random interior fields, next to the analytic constant."""
    rng = np.random.default_rng(seed)
    g = plan.grid
    M = int(np.prod(g.space_shape))
    a = plan.table.a.reshape(-1)
    ratios = []
    batch = max(1, 4096 // M)           # stack several fields as extra columns
    for lo in range(0, ensemble_size, batch):
        k = min(batch, ensemble_size - lo)
        fields = [random_interior_field(g, rng, band=plan.support_band) for _ in range(k)]
        for f in fields:
            _check_support(plan, f)
        fh = np.concatenate([fourier_y(f).values.reshape(g.N_t, M) for f in fields], axis=1)
        um, up = _passes(np.tile(a, k), fh, g.dt, plan.order)
        uh = (um + up) * np.tile(0.5j / a, k)[None]
        for i in range(k):
            cols = slice(i * M, (i + 1) * M)
            ratios.append(_l2(uh[:, cols], g) / _l2(fh[:, cols], g))
    bound = plan.operator_bound
    emp = max(ratios) if ratios else 0.0
    return NormReport(
        "operator_norm",
        {"empirical_max": emp, "empirical_mean": float(np.mean(ratios)) if ratios else 0.0,
         "analytic_sup": bound, "kernel_l1": 2.0, "ensemble_size": ensemble_size, "seed": seed},
        grid=plan.grid.as_dict(), oracle={"analytic_sup": 2.0},
        passed=bool(emp <= 2.0 and bound <= 2.0))


def _t_weight(grid: GridSpec, power: float) -> np.ndarray:
    return (1.0 + grid.t ** 2) ** (0.5 * power)


def smoothing_probe_locsmoy(plan: ResolventPlan, f: SpaceTimeField, eps: float = 0.1,
                            sol: ResolventSolution | None = None) -> float:
    """``||<t>^{-1/2-eps} Rf|| / ||<D_y>^{-1/2} f||``; 0 for ``f = 0``."""
    sol = sol or solve(plan, f)
    g = plan.grid
    jap = plan.table.jap.reshape(-1)
    den = _l2(sol.fhat * jap[None] ** -0.5, g)
    if den == 0:
        return 0.0
    num = _l2(sol.uhat().values.reshape(g.N_t, -1), g, _t_weight(g, -0.5 - eps))
    return num / den


def smoothing_probe_locsm2(plan: ResolventPlan, f: SpaceTimeField, eps: float = 0.1,
                           sol: ResolventSolution | None = None) -> tuple[float, float]:
    """``(||<t>^{-s} d_t u|| , ||<t>^{-s} <D_y> u||) / ||<t>^{s} f||`` with ``s = 1/2 + eps``."""
    sol = sol or solve(plan, f)
    g = plan.grid
    s = 0.5 + eps
    den = _l2(sol.fhat, g, _t_weight(g, s))
    if den == 0:
        return 0.0, 0.0
    w = _t_weight(g, -s)
    jap = plan.table.jap.reshape(-1)
    r_dt = _l2(sol.dt_uhat().values.reshape(g.N_t, -1), g, w) / den
    r_d = _l2(sol.uhat().values.reshape(g.N_t, -1) * jap[None], g, w) / den
    return r_dt, r_d


# ---------------------------------------------------------------------------
# frequency-scaled packets


def single_mode_grid(jap_star: float, T0: float, T1: float, dt: float,
                     N_y: int = 4) -> GridSpec:
    """1-d grid whose dual lattice contains ``|eta*| = sqrt(<eta*>^2 - 1)`` as mode ``k = 1``."""
    eta = math.sqrt(max(jap_star ** 2 - 1.0, 0.0))
    L = math.pi / eta if eta > 0 else math.pi
    N_t = int(round((T1 - T0) / dt)) + 1
    return GridSpec(1, L, N_y, T0, T1, N_t)


def mode_packet(grid: GridSpec, k: int, profile) -> SpaceTimeField:
    """``exp(i eta_k y) * profile(t)`` on a 1-d grid."""
    eta = math.pi * k / grid.L
    y = grid.y1
    vals = np.asarray(profile(grid.t), dtype=complex)[:, None] * np.exp(1j * eta * y)[None, :]
    return SpaceTimeField(grid, vals)


def scaled_resonant_profile(jap_star: float):
    """``chi(t / <eta*>) exp(i t a1(eta*))``: the time scale grows with the frequency."""
    eta = math.sqrt(max(jap_star ** 2 - 1.0, 0.0))
    a1 = float(SpectralSymbolTable.from_eta(np.array([eta])).a1[0])
    return lambda t: bumps.chi(t / jap_star) * np.exp(1j * a1 * t)


def gaussian_resonant_profile(jap_star: float, width: float = 1.0, center: float = 0.0):
    """``exp(-(t-center)^2 / (2 width^2)) exp(i t a1(eta*))``: fixed time scale."""
    eta = math.sqrt(max(jap_star ** 2 - 1.0, 0.0))
    a1 = float(SpectralSymbolTable.from_eta(np.array([eta])).a1[0])
    return lambda t: np.exp(-0.5 * ((t - center) / width) ** 2) * np.exp(1j * a1 * t)


def frequency_scan(profile_factory, jap_list=(1.0, 8.0, 64.0), eps: float = 0.1,
                   dt: float = 0.005, span: float = 10.0, pad: float = 40.0,
                   order: int = 4) -> list[dict]:
    """Smoothing ratios for single-mode packets ``exp(i eta* y) profile(t)`` at each ``<eta*>``.

    The window is ``[-T, T]`` with ``T = span * <eta*> + pad`` so the kernel tail,
    which decays like ``exp(-a2 |t|)`` with ``a2 ~ 1 / (2 <eta*>)``, is captured.
    """
    rows = []
    for jp in jap_list:
        T = span * jp + pad
        grid = single_mode_grid(jp, -T, T, dt)
        f = mode_packet(grid, 1 if jp > 1 else 0, profile_factory(jp))
        plan = ResolventPlan.build(grid, order=order)
        sol = solve(plan, f)
        r0 = smoothing_probe_locsmoy(plan, f, eps, sol)
        r1, r2 = smoothing_probe_locsm2(plan, f, eps, sol)
        rows.append({"jap": jp, "locsmoy": r0, "locsm2_dt": r1, "locsm2_D": r2})
    return rows
