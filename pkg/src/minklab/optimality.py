"""The counterexample showing the Sobolev index 1/2 cannot be raised.

The source, given per dual mode, is

    g(t, eta) = <eta>^{-(n+1)/2 - eps} chi(t/<eta>) exp(i t a1(eta)),

which is square integrable.  For ``0 < t < 1/4`` the resolvent formula opens
with a single sign and, after the multipliers ``exp(-i t A1) <D_y>^{1/2+eps}``,

    b_t(eta) = (i/2) <eta>^{1-n/2} a(eta)^{-1}
               int_{1/4}^{1} exp(-(s - t/<eta>) <eta> a2(eta)) chi(s) ds.

Since ``<eta> a2 -> 1/2``, ``|b_t| ~ <eta>^{-n/2}`` and ``int |b_t|^2 deta``
diverges logarithmically while ``int <eta>^{-2 eps} |b_t|^2 deta`` converges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from . import bumps
from .reports import NormReport
from .resolvent import ResolventPlan, solve
from .spectral_field import GridSpec, SpaceTimeField, SpectralSymbolTable, inverse_fourier_y

QUAD_EPSREL = 1e-10


@dataclass(frozen=True)
class CounterexampleParams:
    n: int = 1
    eps: float = 0.25
    t_obs: float = 0.1

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not 0.0 < self.t_obs < 0.25:
            raise ValueError("t_obs must lie in (0, 1/4)")


def chi_l2_squared() -> float:
    lo, hi = bumps.SUPPORT
    return integrate.quad(lambda s: float(bumps.chi(s)) ** 2, lo, hi, epsabs=0, epsrel=1e-12,
                          points=bumps.PLATEAU)[0]


def sphere_area(n: int) -> float:
    """Surface measure of the unit sphere in ``R^n`` (2 for ``n = 1``)."""
    return 2.0 * math.pi ** (n / 2) / special.gamma(n / 2)


def _symbols(eta):
    tab = SpectralSymbolTable.from_eta(np.atleast_1d(np.asarray(eta, dtype=float)))
    return tab


def source_g(params: CounterexampleParams, t, eta):
    """``<eta>^{-(n+1)/2-eps} chi(t/<eta>) exp(i t a1(eta))``, broadcasting ``t`` against ``|eta|``."""
    t = np.asarray(t, dtype=float)
    eta = np.abs(np.asarray(eta, dtype=float))
    tab = SpectralSymbolTable.from_eta(eta)
    amp = tab.jap ** (-(params.n + 1) / 2 - params.eps)
    return amp * bumps.chi(t / tab.jap) * np.exp(1j * t * tab.a1)


def _check_t(t: float):
    if not 0.0 < t < 0.25:
        raise ValueError(f"t={t} outside (0, 1/4), where the kernel formula applies")


def _profile_integral(t: float, jap: float, k: float, weight=None) -> float:
    """``int_{1/4}^1 exp(-(s - t/jap) k) chi(s) [weight(s)] ds``."""
    lo, hi = bumps.SUPPORT
    shift = t / jap
    if weight is None:
        fn = lambda s: math.exp(-(s - shift) * k) * float(bumps.chi(s))
    else:
        fn = lambda s: math.exp(-(s - shift) * k) * float(bumps.chi(s)) * weight(s)
    return integrate.quad(fn, lo, hi, epsabs=0, epsrel=QUAD_EPSREL, limit=200,
                          points=bumps.PLATEAU)[0]


def kernel_bt(params: CounterexampleParams, t: float, eta: float) -> complex:
    """``b_t(eta)`` by adaptive quadrature (relative error ~1e-10); ``eta`` is the radial variable."""
    _check_t(t)
    tab = _symbols(abs(eta))
    jap, a, a2 = float(tab.jap[0]), complex(tab.a[0]), float(tab.a2[0])
    J = _profile_integral(t, jap, jap * a2)
    return 0.5j * jap ** (1.0 - params.n / 2) / a * J


def kernel_bt_deta(params: CounterexampleParams, t: float, eta: float) -> complex:
    """Radial derivative ``d b_t / d|eta|`` via the differentiated integrand."""
    _check_t(t)
    e = abs(float(eta))
    tab = _symbols(e)
    jap, a, a2 = float(tab.jap[0]), complex(tab.a[0]), float(tab.a2[0])
    q = math.sqrt(e ** 4 + 1.0)
    da2 = -a2 ** 3 * (2.0 * e ** 3 / q + 2.0 * e)
    djap = e / jap
    dk = djap * a2 + jap * da2                      # d(<eta> a2)
    p = 1.0 - params.n / 2
    pref = jap ** p / a
    dpref = p * jap ** (p - 1) * djap / a - jap ** p * e / a ** 3   # da/deta = eta/a
    k = jap * a2
    J = _profile_integral(t, jap, k)
    # d/deta of -(s k - t a2) is -(s dk - t da2)
    dJ = _profile_integral(t, jap, k, weight=lambda s: -(s * dk - t * da2))
    return 0.5j * (dpref * J + pref * dJ)


def bt_grid(params: CounterexampleParams, t: float, etas) -> np.ndarray:
    """``b_t`` on many ``|eta|`` at once.

    Uses ``exp(-(s - t/<eta>) <eta> a2) = exp(t a2) exp(-s <eta> a2)``, so a single
    vector-valued adaptive quadrature in ``s`` serves every sample.
    """
    _check_t(t)
    etas = np.abs(np.asarray(etas, dtype=float))
    if etas.size == 0:
        return np.zeros(0, dtype=complex)
    tab = SpectralSymbolTable.from_eta(etas.ravel())
    k = tab.jap * tab.a2
    lo, hi = bumps.SUPPORT
    K = integrate.quad_vec(lambda s: np.exp(-s * k) * bumps.chi(s), lo, hi,
                           epsabs=0, epsrel=QUAD_EPSREL, points=bumps.PLATEAU)[0]
    b = 0.5j * tab.jap ** (1.0 - params.n / 2) / tab.a * np.exp(t * tab.a2) * K
    return b.reshape(etas.shape)


def _bounds(params, etas, t_list):
    vals = []
    for t in t_list:
        b = bt_grid(params, t, etas)
        jap = np.sqrt(1.0 + etas ** 2)
        vals.append(np.abs(b) * jap ** (params.n / 2))
    return np.array(vals)


def verify_bt_bounds(params: CounterexampleParams, eta_list=None, t_list=(0.01, 0.1, 0.24),
                     ceiling: float = 50.0, stability: float = 0.01,
                     deriv_samples: int = 64) -> NormReport:
    """Two-sided bound ``c <= <eta>^{n/2} |b_t| <= C`` over ``eta_list x t_list``.

    The sample is rerun on a doubled log grid; ``passed`` needs ``c > 0``,
    ``C/c <= ceiling`` and relative changes of ``c`` and ``C`` within ``stability``.
    """
    if eta_list is None:
        eta_list = np.logspace(0, 6, 1000)
    etas = np.sort(np.asarray(eta_list, dtype=float))
    if etas.size < 2:
        raise ValueError("need at least two eta samples")
    t_list = tuple(float(t) for t in t_list)
    for t in t_list:
        _check_t(t)
    scaled = _bounds(params, etas, t_list)
    fine = np.exp(np.linspace(np.log(etas[0]), np.log(etas[-1]), 2 * etas.size - 1))
    scaled_fine = _bounds(params, fine, t_list)
    c, C = float(scaled.min()), float(scaled.max())
    c2, C2 = float(scaled_fine.min()), float(scaled_fine.max())
    drift = max(abs(c2 - c) / c2, abs(C2 - C) / C2) if c2 > 0 else math.inf

    sub = etas[np.linspace(0, etas.size - 1, min(deriv_samples, etas.size)).astype(int)]
    dconst = max(abs(kernel_bt_deta(params, t, e)) * (1 + e * e) ** ((params.n / 2 + 1) / 2)
                 for t in t_list for e in sub)

    per_t = {f"{t:g}": [float(row.min()), float(row.max())] for t, row in zip(t_list, scaled)}
    passed = bool(c > 0 and C / c <= ceiling and drift <= stability)
    return NormReport(
        "bt_bounds",
        {"c": c, "C": C, "ratio": C / c if c > 0 else math.inf, "c_refined": c2,
         "C_refined": C2, "refinement_drift": drift, "deriv_const": float(dconst),
         "n_samples": int(etas.size), "n_samples_refined": int(fine.size),
         "t_list": list(t_list), "per_t": per_t},
        grid={"eta_min": float(etas[0]), "eta_max": float(etas[-1]), "n": params.n,
              "eps": params.eps},
        passed=passed)


# ---------------------------------------------------------------------------
# divergence scan

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


def _segment(params, lo, hi, s_list):
    """``|S^{n-1}| int_lo^hi rho^{n-1} <rho>^{2(s-1/2-eps)} |b_t(rho)|^2 drho`` for each ``s``.

    Segments away from the origin are integrated in ``log rho``."""
    if lo >= 1.0:
        u = 0.5 * (np.log(hi) - np.log(lo)) * _GL_NODES + 0.5 * (np.log(hi) + np.log(lo))
        rho = np.exp(u)
        w = 0.5 * (np.log(hi) - np.log(lo)) * _GL_WEIGHTS * rho
    else:
        rho = 0.5 * (hi - lo) * _GL_NODES + 0.5 * (hi + lo)
        w = 0.5 * (hi - lo) * _GL_WEIGHTS
    b2 = np.abs(bt_grid(params, params.t_obs, rho)) ** 2
    jap = np.sqrt(1.0 + rho ** 2)
    base = sphere_area(params.n) * rho ** (params.n - 1) * b2 * w
    return [float(np.sum(base * jap ** (2.0 * (s - 0.5 - params.eps)))) for s in s_list]


def default_lambdas(lam_max: float = 1e6, n_dyads: int = 16) -> list[float]:
    return [lam_max / 2.0 ** k for k in range(n_dyads, -1, -1)]


@dataclass
class DivergenceScan:
    params: CounterexampleParams
    lambdas: list
    s_list: list
    D: dict                  # s -> list of D(Lambda, s)

    def table(self) -> list[dict]:
        return [{"Lambda": lam, "s": s, "D": self.D[s][i]}
                for s in self.s_list for i, lam in enumerate(self.lambdas)]

    def value(self, lam: float, s: float) -> float:
        return self.D[s][self.lambdas.index(lam)]


def divergence_integrals(params: CounterexampleParams, lambdas, s_list) -> DivergenceScan:
    """``D(Lambda, s) = int_{|eta| <= Lambda} <eta>^{2(s-1/2-eps)} |b_t(t_obs, eta)|^2 deta``.

    Composite Gauss-Legendre over ``[0, 1]`` and dyadic shells ``[2^j, 2^{j+1}]``,
    split further at each requested ``Lambda``.
    """
    lams = sorted(float(x) for x in lambdas)
    if not lams:
        raise ValueError("Lambda list is empty")
    if lams[0] <= 0:
        raise ValueError("Lambda values must be positive")
    brk = {0.0, 1.0, *lams}
    p = 1.0
    while p < lams[-1]:
        brk.add(p)
        p *= 2.0
    brk = sorted(b for b in brk if b <= lams[-1])
    acc = np.zeros(len(s_list))
    at = {}
    for lo, hi in zip(brk[:-1], brk[1:]):
        acc = acc + np.array(_segment(params, lo, hi, s_list))
        at[hi] = acc.copy()
    D = {s: [float(at[lam][i]) for lam in lams] for i, s in enumerate(s_list)}
    return DivergenceScan(params, lams, list(s_list), D)


def divergence_scan(params: CounterexampleParams, lambdas=None, tail_from: float = 1e4,
                    drift_tol: float = 0.10, tail_tol: float = 0.05) -> NormReport:
    """The divergence dichotomy at ``s = 1/2 + eps`` versus ``s = 1/2``, plus the faster
    divergence at ``s = 1/2 + 2 eps``.

    Expects dyadic ``lambdas`` (each twice the previous).  ``passed`` requires
    ``alpha > 0`` with increments stable to ``drift_tol`` over the top three dyads,
    monotonically shrinking increments at ``s = 1/2`` and a relative tail
    ``(D(max) - D(tail_from)) / D(tail_from) <= tail_tol`` at ``s = 1/2``.
    """
    lams = sorted(default_lambdas() if lambdas is None else [float(x) for x in lambdas])
    if len(lams) < 4:
        raise ValueError("need at least four dyadic Lambda values")
    ratios = np.array(lams[1:]) / np.array(lams[:-1])
    if np.max(np.abs(ratios - 2.0)) > 1e-9:
        raise ValueError("Lambda list must be dyadic")
    eps = params.eps
    s_hi, s_half, s_fast = 0.5 + eps, 0.5, 0.5 + 2 * eps
    extra = [tail_from] if tail_from not in lams and lams[0] < tail_from < lams[-1] else []
    scan = divergence_integrals(params, lams + extra, [s_hi, s_half, s_fast])

    def series(s):
        return np.array([scan.value(lam, s) for lam in lams])

    Dhi, Dh, Df = series(s_hi), series(s_half), series(s_fast)
    inc_hi, inc_h, inc_f = np.diff(Dhi), np.diff(Dh), np.diff(Df)
    alphas = inc_hi[-3:] / math.log(2.0)
    alpha = float(np.mean(alphas))
    drift = float((alphas.max() - alphas.min()) / abs(alpha)) if alpha != 0 else math.inf
    top = np.log(np.array(lams[-3:]))
    fit = np.polyfit(top, Dhi[-3:], 1)
    resid = float(np.max(np.abs(np.polyval(fit, top) - Dhi[-3:])))
    geo = inc_h[1:] / inc_h[:-1]
    geometric = bool(np.all(geo[-5:] < 1.0))
    d_tail = scan.value(tail_from, s_half) if tail_from in scan.lambdas else math.nan
    tail = float((Dh[-1] - d_tail) / d_tail) if d_tail and np.isfinite(d_tail) else math.nan
    lam_top = np.log(np.array(lams[-4:]))
    power = float(np.polyfit(lam_top[1:], np.log(inc_f[-3:]), 1)[0])

    passed = bool(alpha > 0 and drift <= drift_tol and geometric
                  and np.isfinite(tail) and tail <= tail_tol)
    rows = [{"Lambda": lam, "s": s, "D": scan.value(lam, s),
             "fit_residual": resid if s == s_hi else None}
            for s in (s_hi, s_half, s_fast) for lam in lams]
    return NormReport(
        "divergence",
        {"alpha": alpha, "alpha_per_dyad": alphas.tolist(), "alpha_drift": drift,
         "fit_slope": float(fit[0]), "fit_intercept": float(fit[1]), "fit_residual": resid,
         "half_increment_ratios": geo.tolist(), "half_geometric": geometric,
         "half_tail_ratio": tail, "tail_from": tail_from,
         "fast_power_exponent": power, "table": rows},
        grid={"n": params.n, "eps": eps, "t_obs": params.t_obs,
              "Lambda_min": lams[0], "Lambda_max": lams[-1]},
        passed=passed)


# ---------------------------------------------------------------------------
# end-to-end check against the space-time solver


def crossvalidation_grid(lam0: float = 48.0, N_y: int = 1024, L: float = 32.0,
                         N_t: int = 16384, t_obs: float = 0.1, pad: float = 2.0) -> GridSpec:
    """Window ``[-pad, <lam0> + pad]`` shifted by less than one step so ``t_obs`` is a node."""
    T0, T1 = -pad, math.sqrt(1.0 + lam0 ** 2) + pad
    dt = (T1 - T0) / (N_t - 1)
    m = round((t_obs - T0) / dt)
    T0 = t_obs - m * dt
    return GridSpec(1, L, N_y, T0, T0 + (N_t - 1) * dt, N_t)


def crossvalidate_with_resolvent(params: CounterexampleParams, lam0: float = 48.0,
                                 grid: GridSpec | None = None, order: int = 4,
                                 zero_band: bool = False) -> NormReport:
    """Run the band-limited source through the space-time solver and compare
    ``exp(-i t A1) <D_y>^{1/2+eps} u`` at ``t_obs`` with ``b_t`` mode by mode."""
    if params.n != 1:
        raise ValueError("cross-validation is implemented for n = 1")
    grid = grid or crossvalidation_grid(lam0, t_obs=params.t_obs)
    if grid.eta_max <= lam0:
        raise ValueError(f"grid resolves |eta| <= {grid.eta_max:.3g} < Lambda0 = {lam0} "
                         "(Nyquist violation)")
    jap0 = math.sqrt(1.0 + lam0 ** 2)
    if grid.T0 > 0.0 or grid.T1 < jap0:
        raise ValueError("time window must cover [0, <Lambda0>]")
    j_obs = grid.index_of_time(params.t_obs)

    eta = grid.eta1
    band = np.abs(eta) <= lam0
    ghat = source_g(params, grid.t[:, None], eta[None, :]) * band[None, :]
    if zero_band:
        ghat = np.zeros_like(ghat)
    f = inverse_fourier_y(SpaceTimeField(grid, ghat, spectral=True))
    lead = (0.0 - grid.T0) / (grid.T1 - grid.T0)
    trail = (grid.T1 - jap0) / (grid.T1 - grid.T0)
    plan = ResolventPlan.build(grid, order=order, support_band=0.9 * min(lead, trail))
    del ghat
    sol = solve(plan, f)
    del f
    tab = plan.table
    ainv = 0.5j / tab.a
    uh = (sol.u_minus[j_obs] + sol.u_plus[j_obs]) * ainv
    lhs = np.exp(-1j * params.t_obs * tab.a1) * tab.jap ** (0.5 + params.eps) * uh
    idx = np.nonzero(band)[0]
    rhs = np.zeros(idx.size, dtype=complex) if zero_band else \
        bt_grid(params, params.t_obs, eta[idx])
    num = np.abs(lhs[idx] - rhs)
    den = np.abs(rhs)
    rel = np.where(den > 0, num / np.where(den > 0, den, 1.0), num)
    err = float(rel.max()) if rel.size else 0.0
    return NormReport(
        "crossvalidation",
        {"max_rel_error": err, "n_modes": int(idx.size), "lam0": lam0, "order": order,
         "worst_eta": float(eta[idx[np.argmax(rel)]]) if rel.size else 0.0},
        grid=grid.as_dict(), oracle={"max_rel_error": 1e-4}, passed=bool(err <= 1e-4))
