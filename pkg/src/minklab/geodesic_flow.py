"""Hamilton flow of ``p(x, xi) = 1/2 xi^T g^{-1}(x) xi``: integration, escape
certificates, momentum envelopes and completeness probes.

The integrator is a Dormand-Prince 5(4) embedded pair.  It is written for a
batch of initial data: every member carries its own time and step size and
all active members advance together, so ensembles of thousands of shots cost
roughly as much numpy work as a handful of scalar runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import integrate

from .metric import MetricSpec, covector_causal_type, grad_p, hamiltonian
from .reports import NormReport

# Dormand-Prince 5(4)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
                187 / 2100, 1 / 40])
_E = _B - _B4

R0_LADDER = (2.0, 5.0, 10.0, 20.0, 50.0)


@dataclass(frozen=True)
class PhaseState:
    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=float))
        if self.x.shape != self.xi.shape or self.x.ndim != 1:
            raise ValueError("x and xi must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.xi))):
            raise ValueError("phase state has non-finite entries")


@dataclass(frozen=True)
class EscapeCertificate:
    t_star: float
    radius: float
    radial_derivative: float
    M_local: float
    direction: int = 1


@dataclass(frozen=True)
class Escaped:
    t_exit: float
    certificate: EscapeCertificate


@dataclass(frozen=True)
class ReachedMaxTime:
    t: float


@dataclass(frozen=True)
class StepFailure:
    t_fail: float
    reason: str


Terminal = Union[Escaped, ReachedMaxTime, StepFailure]


@dataclass(frozen=True)
class ForwardNonTrapped:
    certificate: EscapeCertificate


@dataclass(frozen=True)
class Undetermined:
    reason: str = "escape radius not crossed outward"


@dataclass(frozen=True)
class Trajectory:
    """Accepted steps of one integration; ``x``/``xi`` have shape ``(K, d)``."""

    times: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    terminal: Terminal
    p_values: np.ndarray
    direction: int = 1
    n_rejected: int = 0

    def __len__(self):
        return len(self.times)

    @property
    def states(self) -> list[PhaseState]:
        return [PhaseState(a, b) for a, b in zip(self.x, self.xi)]

    @property
    def final(self) -> PhaseState:
        return PhaseState(self.x[-1], self.xi[-1])

    def p_drift(self) -> float:
        """``max_k |p_k - p_0| / (1 + |p_0|)``."""
        p0 = self.p_values[0]
        return float(np.max(np.abs(self.p_values - p0)) / (1.0 + abs(p0)))


# ---------------------------------------------------------------------------
# vector field and escape function


def _rhs(m: MetricSpec, y):
    d = m.dim
    dx, dxi = grad_p(m, y[:, :d], y[:, d:])
    return np.concatenate([dxi, -dx], axis=1)


def hp2_radius_squared(m: MetricSpec, x, xi):
    """Second Hamilton derivative ``H_p^2(|x|^2)`` along the flow.

    With ``q = H_p |x|^2 = 2 x . dp/dxi`` this is the Poisson bracket
    ``dp/dxi . dq/dx - dp/dx . dq/dxi``.  Only first derivatives of the dual
    metric enter, because ``q`` is linear in the metric.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    psi, dpsi = m._psi_grad(x)
    e = m._e
    gx = x @ m.g0 + psi[:, None] * (x @ e)          # g^{-1} x
    gxi = xi @ m.g0 + psi[:, None] * (xi @ e)       # g^{-1} xi = dp/dxi
    dpx = 0.5 * np.einsum("ij,ij->i", xi, xi @ e)[:, None] * dpsi
    dq_dx = 2.0 * gxi + 2.0 * np.einsum("ij,ij->i", x, xi @ e)[:, None] * dpsi
    dq_dxi = 2.0 * gx
    return np.einsum("ij,ij->i", gxi, dq_dx) - np.einsum("ij,ij->i", dpx, dq_dxi)


def _certificate(m, t, x, xi, direction):
    _, dxi = grad_p(m, x, xi)
    xi_norm2 = float(xi @ xi)
    return EscapeCertificate(
        t_star=float(t), radius=float(np.linalg.norm(x)),
        radial_derivative=float(direction * 2.0 * (x @ dxi)),
        M_local=float(hp2_radius_squared(m, x, xi)[0] / xi_norm2),
        direction=direction)


# ---------------------------------------------------------------------------
# batched integrator


def integrate_ensemble(m: MetricSpec, x0, xi0, t_end: float, tol: float = 1e-10,
                       escape_radius: float | None = None, max_steps: int = 200_000,
                       ) -> list[Trajectory]:
    """Integrate the Hamilton equations for every row of ``x0``/``xi0``.

    ``t_end < 0`` integrates backward.  With ``escape_radius`` set, a member
    stops as soon as ``|y| > escape_radius`` and ``|y|^2`` is non-decreasing in
    the direction of integration.
    """
    if not (1e-12 <= tol <= 1e-3):
        raise ValueError(f"tol must lie in [1e-12, 1e-3], got {tol}")
    if t_end == 0:
        raise ValueError("t_end must be non-zero")
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    xi0 = np.atleast_2d(np.asarray(xi0, dtype=float))
    d = m.dim
    if x0.shape[1] != d or xi0.shape != x0.shape:
        raise ValueError(f"initial data must have shape (N, {d})")
    nmem = len(x0)
    direction = 1 if t_end > 0 else -1
    span = abs(float(t_end))
    h_min = 1e-13 * span
    rtol = atol = tol

    y = np.concatenate([x0, xi0], axis=1)
    k_first = _rhs(m, y)
    t = np.zeros(nmem)

    # starting step: Hairer, Norsett & Wanner, Solving ODEs I, II.4
    sc = atol + rtol * np.abs(y)
    d0 = np.sqrt(np.mean((y / sc) ** 2, axis=1))
    d1 = np.sqrt(np.mean((k_first / sc) ** 2, axis=1))
    h0 = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / np.maximum(d1, 1e-300))
    h0 = np.minimum(h0, span)
    y1 = y + (direction * h0)[:, None] * k_first
    f1 = _rhs(m, y1)
    d2 = np.sqrt(np.mean(((f1 - k_first) / sc) ** 2, axis=1)) / h0
    dmax = np.maximum(d1, d2)
    h1 = np.where(dmax <= 1e-15, np.maximum(1e-6, h0 * 1e-3), (0.01 / np.maximum(dmax, 1e-300)) ** 0.2)
    h = np.minimum(np.minimum(100 * h0, h1), span)

    active = np.ones(nmem, dtype=bool)
    terminal: list[Terminal | None] = [None] * nmem
    steps = np.zeros(nmem, dtype=int)
    rejected = np.zeros(nmem, dtype=int)
    hist_idx = [np.arange(nmem)]
    hist_t = [t.copy()]
    hist_y = [y.copy()]

    while active.any():
        idx = np.flatnonzero(active)
        yi = y[idx]
        hi = h[idx]
        hs = (direction * hi)[:, None]
        ks = [k_first[idx]]
        for s in range(1, 7):
            acc = yi.copy()
            for j, a in enumerate(_A[s]):
                if a != 0.0:
                    acc += hs * (a * ks[j])
            ks.append(_rhs(m, acc))
        y_new = yi.copy()
        err = np.zeros_like(yi)
        for j in range(7):
            if _B[j] != 0.0:
                y_new += hs * (_B[j] * ks[j])
            err += hs * (_E[j] * ks[j])
        scale = atol + rtol * np.maximum(np.abs(yi), np.abs(y_new))
        errn = np.max(np.abs(err) / scale, axis=1)
        errn = np.where(np.isfinite(errn), errn, np.inf)
        ok = errn <= 1.0

        # step size update
        fac = np.where(errn == 0.0, 5.0, 0.9 * np.power(np.maximum(errn, 1e-300), -0.2))
        fac = np.clip(fac, 0.2, 5.0)
        fac = np.where(ok, fac, np.minimum(fac, 1.0))
        h_next = hi * fac

        acc_idx = idx[ok]
        if acc_idx.size:
            t[acc_idx] += hi[ok]
            y[acc_idx] = y_new[ok]
            k_first[acc_idx] = ks[6][ok]
            steps[acc_idx] += 1
            hist_idx.append(acc_idx)
            hist_t.append(direction * t[acc_idx])
            hist_y.append(y[acc_idx].copy())
        rej_idx = idx[~ok]
        rejected[rej_idx] += 1

        h[idx] = h_next
        for loc, k in enumerate(idx):
            if ok[loc]:
                remaining = span - t[k]
                if escape_radius is not None:
                    xk = y[k, :d]
                    rk = np.sqrt(xk @ xk)
                    if rk > escape_radius:
                        rad = direction * 2.0 * (xk @ k_first[k, :d])
                        if rad >= 0.0:
                            cert = _certificate(m, direction * t[k], xk, y[k, d:], direction)
                            terminal[k] = Escaped(direction * t[k], cert)
                            active[k] = False
                            continue
                if remaining <= 1e-14 * span:
                    terminal[k] = ReachedMaxTime(direction * t[k])
                    active[k] = False
                    continue
                if steps[k] >= max_steps:
                    terminal[k] = StepFailure(direction * t[k], "max_steps exceeded")
                    active[k] = False
                    continue
                h[k] = min(h[k], remaining)
            if active[k] and h[k] < h_min:
                terminal[k] = StepFailure(direction * t[k], "step size underflow")
                active[k] = False

    all_idx = np.concatenate(hist_idx)
    all_t = np.concatenate(hist_t)
    all_y = np.concatenate(hist_y)
    order = np.argsort(all_idx, kind="stable")
    all_idx, all_t, all_y = all_idx[order], all_t[order], all_y[order]
    bounds = np.searchsorted(all_idx, np.arange(nmem + 1))
    p_all = hamiltonian(m, all_y[:, :d], all_y[:, d:])
    out = []
    for k in range(nmem):
        sl = slice(bounds[k], bounds[k + 1])
        out.append(Trajectory(times=all_t[sl], x=all_y[sl, :d], xi=all_y[sl, d:],
                              terminal=terminal[k], p_values=p_all[sl],
                              direction=direction, n_rejected=int(rejected[k])))
    return out


def integrate_hamilton(m: MetricSpec, s0: PhaseState, t_end: float, tol: float = 1e-10,
                       escape_radius: float | None = None, max_steps: int = 200_000,
                       ) -> Trajectory:
    """Single-shot wrapper around :func:`integrate_ensemble`."""
    return integrate_ensemble(m, s0.x[None], s0.xi[None], t_end, tol=tol,
                              escape_radius=escape_radius, max_steps=max_steps)[0]


# ---------------------------------------------------------------------------


def null_lift(m: MetricSpec, x, xi_y, branch: int = 1) -> PhaseState:
    """Complete spatial momentum ``xi_y`` to a null covector at ``x``.

    Solves ``A xi_t^2 + 2 B xi_t + C = 0`` where the coefficients are the
    blocks of ``g^{-1}(x)``; ``branch=+1`` takes the larger root.
    """
    x = np.asarray(x, dtype=float)
    xi_y = np.asarray(xi_y, dtype=float)
    if xi_y.shape != (m.n,):
        raise ValueError(f"xi_y must have shape ({m.n},)")
    if not np.any(xi_y != 0):
        raise ValueError("xi_y must be non-zero")
    if branch not in (1, -1):
        raise ValueError("branch must be +1 or -1")
    g = m.dual_metric(x)
    a = g[0, 0]
    b = g[0, 1:] @ xi_y
    c = xi_y @ g[1:, 1:] @ xi_y
    disc = b * b - a * c
    assert disc >= 0.0, "no real null root; metric is not Lorentzian here"
    if a == 0.0:
        roots = np.array([-c / (2.0 * b)] * 2)
    else:
        # cancellation-free pair of roots
        q = -(b + np.copysign(np.sqrt(disc), b))
        roots = np.array([q / a, c / q if q != 0.0 else q / a])
    xi_t = roots.max() if branch > 0 else roots.min()
    return PhaseState(x, np.concatenate([[xi_t], xi_y]))


def classify_trapping(m: MetricSpec, traj: Trajectory, R0: float):
    """Certify escape from the first sampled state with ``|y| > R0`` moving outward."""
    if isinstance(traj.terminal, Escaped) and traj.terminal.certificate.radius > R0:
        return ForwardNonTrapped(traj.terminal.certificate)
    r = np.linalg.norm(traj.x, axis=1)
    _, dxi = grad_p(m, traj.x, traj.xi)
    rad = traj.direction * 2.0 * np.einsum("ij,ij->i", traj.x, dxi)
    hits = np.flatnonzero((r > R0) & (rad >= 0.0))
    if hits.size == 0:
        return Undetermined()
    k = hits[0]
    return ForwardNonTrapped(_certificate(m, traj.times[k], traj.x[k], traj.xi[k],
                                          traj.direction))


def escape_function_check(m: MetricSpec, R0: float, n_samples: int = 20000,
                          seed: int = 0) -> NormReport:
    """Sampled minimum of ``H_p^2(|x|^2)`` over ``R0 <= |x| <= 10 R0``, ``|xi| = 1``."""
    if not R0 > 1:
        raise ValueError(f"R0 must exceed 1, got {R0}")
    rng = np.random.default_rng(seed)
    d = m.dim
    u = rng.standard_normal((n_samples, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    x = u * rng.uniform(R0, 10.0 * R0, n_samples)[:, None]
    xi = rng.standard_normal((n_samples, d))
    xi /= np.linalg.norm(xi, axis=1, keepdims=True)
    vals = hp2_radius_squared(m, x, xi)
    k = int(np.argmin(vals))
    M = float(vals[k])
    return NormReport(
        "escape_function",
        {"M_estimate": M, "argmin_x": x[k].tolist(), "argmin_xi": xi[k].tolist(),
         "mean": float(vals.mean())},
        grid={"R0": R0, "n_samples": n_samples, "seed": seed},
        passed=M > 0.0)


def select_r0(m: MetricSpec, ladder=R0_LADDER, threshold: float = 0.1,
              n_samples: int = 20000, seed: int = 0) -> tuple[float, NormReport]:
    """Smallest ladder radius whose ``M_estimate`` exceeds ``threshold``."""
    rep = None
    for R0 in ladder:
        rep = escape_function_check(m, R0, n_samples, seed)
        if rep["M_estimate"] > threshold:
            return R0, rep
    raise RuntimeError(f"no R0 in {tuple(ladder)} passes the escape-function check "
                       f"(last M_estimate {rep['M_estimate']:.3g})")


def momentum_envelope(traj: Trajectory) -> tuple[float, float]:
    """``(min |eta|, max |eta|)`` over the trajectory."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    norms = np.linalg.norm(traj.xi, axis=1)
    return float(norms.min()), float(norms.max())


def c_mu_constant(mu: float) -> float:
    """``int_0^inf (1 + s^2)^{-(1+mu)/2} ds``.

    The tail ``s > 1`` is mapped by ``s -> 1/s`` to
    ``int_0^1 u^{mu-1} (1 + u^2)^{-(1+mu)/2} du``, integrated with the
    algebraic end-point weight when ``mu < 1`` so the singularity at 0 is exact.
    """
    if not mu > 0:
        raise ValueError(f"C_mu diverges for mu <= 0 (got {mu})")
    e = -(1.0 + mu) / 2.0
    head, _ = integrate.quad(lambda s: (1.0 + s * s) ** e, 0.0, 1.0,
                             epsabs=0.0, epsrel=1e-13)
    if mu < 1.0:
        tail, _ = integrate.quad(lambda u: (1.0 + u * u) ** e, 0.0, 1.0,
                                 weight="alg", wvar=(mu - 1.0, 0.0),
                                 epsabs=0.0, epsrel=1e-13)
    else:
        tail, _ = integrate.quad(lambda u: u ** (mu - 1.0) * (1.0 + u * u) ** e, 0.0, 1.0,
                                 epsabs=0.0, epsrel=1e-13)
    return head + tail


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DirectionReport:
    status: str                 # "escaped" | "complete_so_far" | "suspect"
    terminal: Terminal
    C1: float
    C2: float
    t_exit: float | None


@dataclass(frozen=True)
class CompletenessReport:
    forward: DirectionReport
    backward: DirectionReport
    causal_type: str = ""

    @property
    def suspect(self) -> bool:
        return "suspect" in (self.forward.status, self.backward.status)


def _direction_report(traj: Trajectory) -> DirectionReport:
    c1, c2 = momentum_envelope(traj)
    term = traj.terminal
    if isinstance(term, Escaped) and np.isfinite(c2):
        return DirectionReport("escaped", term, c1, c2, term.t_exit)
    if isinstance(term, ReachedMaxTime) and np.isfinite(c2):
        return DirectionReport("complete_so_far", term, c1, c2, None)
    return DirectionReport("suspect", term, c1, c2, None)


def completeness_ensemble(m: MetricSpec, x0, xi0, t_max: float, tol: float = 1e-10,
                          R0: float | None = None) -> list[CompletenessReport]:
    """Integrate every shot to ``+t_max`` and ``-t_max`` with escape detection."""
    if R0 is None:
        R0, _ = select_r0(m)
    fwd = integrate_ensemble(m, x0, xi0, t_max, tol=tol, escape_radius=R0)
    bwd = integrate_ensemble(m, x0, xi0, -t_max, tol=tol, escape_radius=R0)
    out = []
    for k, (f, b) in enumerate(zip(fwd, bwd)):
        ctype = covector_causal_type(m, f.x[0], f.xi[0])
        out.append(CompletenessReport(_direction_report(f), _direction_report(b), ctype))
    return out


def completeness_probe(m: MetricSpec, s0: PhaseState, t_max: float, tol: float = 1e-10,
                       R0: float | None = None) -> CompletenessReport:
    return completeness_ensemble(m, s0.x[None], s0.xi[None], t_max, tol, R0)[0]
