"""Dual Lorentzian metrics on R^{n+1} and the geodesic Hamiltonian.

Coordinates are ``x = (x_0, x_1, ..., x_n)`` with ``x_0`` the time
coordinate.  The flat dual metric is ``diag(-1, 1, ..., 1)``.  Perturbed
metrics have the form

    g^{-1}(x) = g0^{-1} + eps * <x>^{-mu} * phi(x) * E

where ``phi`` is a bounded scalar profile from a small catalog and ``E`` is a
constant symmetric matrix.  Each profile carries closed-form gradient and
Hessian, so the Hamilton vector field is exact.

All evaluators accept a single point of shape ``(d,)`` or a batch ``(m, d)``
with ``d = n + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .reports import NormReport

TOL_NULL = 1e-9


class SignatureError(ValueError):
    """Raised when a metric fails to be Lorentzian at a sampled point."""

    def __init__(self, point, eigenvalues):
        self.point = np.asarray(point)
        self.eigenvalues = np.asarray(eigenvalues)
        super().__init__(
            f"dual metric is not Lorentzian at x={self.point.tolist()} "
            f"(eigenvalues {np.round(self.eigenvalues, 6).tolist()})")


# ---------------------------------------------------------------------------
# scalar profiles: value, gradient, Hessian for a batch of points (m, d)


def _product(f, g):
    fv, fg, fh = f
    gv, gg, gh = g
    val = fv * gv
    grad = fv[:, None] * gg + gv[:, None] * fg
    if fh is None or gh is None:
        return val, grad, None
    hess = (fv[:, None, None] * gh + gv[:, None, None] * fh
            + fg[:, :, None] * gg[:, None, :] + gg[:, :, None] * fg[:, None, :])
    return val, grad, hess


def _gaussian(x, width, want_hess=True):
    # exp(-|x|^2 / (2 width^2))
    m, d = x.shape
    c = 1.0 / width**2
    val = np.exp(-0.5 * c * np.einsum("ij,ij->i", x, x))
    grad = -c * x * val[:, None]
    if not want_hess:
        return val, grad, None
    hess = val[:, None, None] * (c * c * x[:, :, None] * x[:, None, :]
                                 - c * np.eye(d)[None])
    return val, grad, hess


def japanese_power(x, s, want_hess=True):
    """``<x>^s`` with gradient and Hessian, where ``<x> = (1 + |x|^2)^(1/2)``."""
    m, d = x.shape
    q = 1.0 + np.einsum("ij,ij->i", x, x)
    val = q ** (0.5 * s)
    dq = s * q ** (0.5 * s - 1.0)
    grad = dq[:, None] * x
    if not want_hess:
        return val, grad, None
    hess = (dq[:, None, None] * np.eye(d)[None]
            + (s * (s - 2.0) * q ** (0.5 * s - 2.0))[:, None, None]
            * x[:, :, None] * x[:, None, :])
    return val, grad, hess


def _radial_bump(x, want_hess=True):
    return _gaussian(x, 1.0, want_hess)


def _cosine_bump(x, want_hess=True):
    m, d = x.shape
    k = np.zeros(d)
    k[0], k[1] = 1.0, -1.0
    phase = x @ k
    c = (np.cos(phase), -np.sin(phase)[:, None] * k,
         -np.cos(phase)[:, None, None] * np.outer(k, k)[None] if want_hess else None)
    return _product(c, _gaussian(x, 2.0, want_hess))


def _angular(x, want_hess=True):
    # (1 + 2 x_0 x_1) / (1 + |x|^2): bounded, homogeneous of degree 0 at infinity
    m, d = x.shape
    num = 1.0 + 2.0 * x[:, 0] * x[:, 1]
    ngrad = np.zeros((m, d))
    ngrad[:, 0] = 2.0 * x[:, 1]
    ngrad[:, 1] = 2.0 * x[:, 0]
    nhess = None
    if want_hess:
        nhess = np.zeros((m, d, d))
        nhess[:, 0, 1] = nhess[:, 1, 0] = 2.0
    return _product((num, ngrad, nhess), japanese_power(x, -2.0, want_hess))


def _e00(d):
    e = np.zeros((d, d))
    e[0, 0] = 1.0
    return e


def _e01(d):
    e = np.zeros((d, d))
    e[0, 1] = e[1, 0] = 1.0
    return e


@dataclass(frozen=True)
class Shape:
    """Catalog entry: scalar profile ``phi`` and the constant matrix ``E``."""

    name: str
    profile: Callable
    matrix: Callable
    sup_phi: float
    doc: str


CATALOG: dict[str, Shape] = {
    "radial_bump": Shape(
        "radial_bump", _radial_bump, _e00, 1.0,
        "phi = exp(-|x|^2/2), E = e_0 e_0^T; shifts g^{00} near the origin"),
    "cosine_offdiag": Shape(
        "cosine_offdiag", _cosine_bump, _e01, 1.0,
        "phi = cos(x_0 - x_1) exp(-|x|^2/8), E = e_0 e_1^T + e_1 e_0^T"),
    "angular_offdiag": Shape(
        "angular_offdiag", _angular, _e01, 1.0,
        "phi = (1 + 2 x_0 x_1)/<x>^2, E = e_0 e_1^T + e_1 e_0^T; "
        "non-decaying profile, so the decay comes from <x>^{-mu} alone"),
}


# ---------------------------------------------------------------------------


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


@dataclass(frozen=True)
class MetricSpec:
    """Dual metric ``x -> g^{-1}(x)`` on R^{n+1} with decay rate ``mu``."""

    n: int
    mu: float = 1.0
    eps_pert: float = 0.0
    shape_id: str | None = None
    _g0: np.ndarray = field(init=False, repr=False, compare=False)
    _e: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"spatial dimension must be a positive integer, got {self.n}")
        if not self.mu > 0:
            raise ValueError(f"decay rate mu must be positive, got {self.mu}")
        if self.eps_pert < 0:
            raise ValueError(f"eps_pert must be non-negative, got {self.eps_pert}")
        if self.shape_id is not None and self.shape_id not in CATALOG:
            raise KeyError(f"unknown metric shape {self.shape_id!r}; "
                           f"available: {sorted(CATALOG)}")
        d = self.n + 1
        g0 = np.eye(d)
        g0[0, 0] = -1.0
        g0.setflags(write=False)
        e = np.zeros((d, d)) if self.shape_id is None else CATALOG[self.shape_id].matrix(d)
        e.setflags(write=False)
        object.__setattr__(self, "_g0", g0)
        object.__setattr__(self, "_e", e)

    @property
    def dim(self) -> int:
        return self.n + 1

    @property
    def g0(self) -> np.ndarray:
        return self._g0

    @property
    def is_flat(self) -> bool:
        return self.shape_id is None or self.eps_pert == 0.0

    @property
    def sup_perturbation(self) -> float:
        """``eps * sup|B|`` where ``B = phi E`` (max-entry norm)."""
        if self.is_flat:
            return 0.0
        return self.eps_pert * CATALOG[self.shape_id].sup_phi * np.abs(self._e).max()

    def perturbation(self, x):
        """Scalar coefficient ``psi = eps <x>^{-mu} phi`` with gradient and Hessian.

        Batched: returns arrays of shape ``(m,)``, ``(m, d)``, ``(m, d, d)``.
        """
        xb, _ = _as_batch(x)
        m, d = xb.shape
        if self.is_flat:
            return np.zeros(m), np.zeros((m, d)), np.zeros((m, d, d))
        phi = CATALOG[self.shape_id].profile(xb)
        val, grad, hess = _product(japanese_power(xb, -self.mu), phi)
        e = self.eps_pert
        return e * val, e * grad, e * hess

    def _psi_grad(self, xb):
        # value and gradient only; cheaper path for the flow
        m, d = xb.shape
        if self.is_flat:
            return np.zeros(m), np.zeros((m, d))
        phi = CATALOG[self.shape_id].profile(xb, want_hess=False)
        val, grad, _ = _product(japanese_power(xb, -self.mu, want_hess=False), phi)
        return self.eps_pert * val, self.eps_pert * grad

    def dual_metric(self, x):
        """``g^{jk}(x)``: shape ``(d, d)`` for one point, ``(m, d, d)`` for a batch."""
        xb, single = _as_batch(x)
        psi, _ = self._psi_grad(xb)
        out = self._g0[None] + psi[:, None, None] * self._e[None]
        return out[0] if single else out

    def dual_metric_derivatives(self, x):
        """``d/dx_i g^{jk}(x)`` stacked as ``(..., i, j, k)``."""
        xb, single = _as_batch(x)
        _, grad = self._psi_grad(xb)
        out = grad[:, :, None, None] * self._e[None, None]
        return out[0] if single else out


def minkowski(n: int) -> MetricSpec:
    """Flat dual metric ``diag(-1, 1, ..., 1)`` on R^{n+1}."""
    return MetricSpec(n=n)


def _signature_samples(dim: int, radius: float, n_dense: int, seed: int):
    rng = np.random.default_rng(seed)
    pts = [np.zeros((1, dim))]
    # dense ball: uniform in volume plus a finer core where bumps live
    for r_max, count in ((min(radius, 4.0), n_dense // 2), (radius, n_dense // 2)):
        v = rng.standard_normal((count, dim))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        r = r_max * rng.random(count) ** (1.0 / dim)
        pts.append(v * r[:, None])
    # dyadic shells beyond the ball
    r = radius
    while r <= 1e4 * max(radius, 1.0):
        v = rng.standard_normal((64, dim))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        pts.append(r * v)
        r *= 2.0
    return np.concatenate(pts)


def check_signature(m: MetricSpec, radius: float = 200.0, n_dense: int = 20000,
                    seed: int = 0) -> None:
    """Raise :class:`SignatureError` at the first sampled non-Lorentzian point."""
    if m.is_flat:
        return
    pts = _signature_samples(m.dim, radius, n_dense, seed)
    ev = np.linalg.eigvalsh(m.dual_metric(pts))
    ok = (ev[:, 0] < 0) & (ev[:, 1] > 0)
    if not ok.all():
        k = int(np.flatnonzero(~ok)[0])
        raise SignatureError(pts[k], ev[k])


def perturbed_family(n: int, mu: float, eps_pert: float, shape_id: str = "radial_bump",
                     r0: float = 20.0) -> MetricSpec:
    """Catalog metric ``g0^{-1} + eps <x>^{-mu} phi E``, checked to be Lorentzian
    on a dense ball of radius ``10 * r0`` and on dyadic shells beyond."""
    m = MetricSpec(n=n, mu=mu, eps_pert=eps_pert, shape_id=shape_id)
    check_signature(m, radius=10.0 * r0)
    return m


# ---------------------------------------------------------------------------
# Hamiltonian p(x, xi) = 1/2 xi^T g^{-1}(x) xi


def hamiltonian(m: MetricSpec, x, xi):
    xb, single = _as_batch(x)
    xib, _ = _as_batch(xi)
    psi, _ = m._psi_grad(xb)
    flat = np.einsum("ij,jk,ik->i", xib, m.g0, xib)
    pert = np.einsum("ij,jk,ik->i", xib, m._e, xib)
    p = 0.5 * (flat + psi * pert)
    return p[0] if single else p


def grad_p(m: MetricSpec, x, xi):
    """Return ``(dp/dx, dp/dxi)``; ``dp/dxi = g^{-1}(x) xi``."""
    xb, single = _as_batch(x)
    xib, _ = _as_batch(xi)
    psi, dpsi = m._psi_grad(xb)
    exi = xib @ m._e
    dxi = xib @ m.g0 + psi[:, None] * exi
    dx = 0.5 * np.einsum("ij,ij->i", xib, exi)[:, None] * dpsi
    if single:
        return dx[0], dxi[0]
    return dx, dxi


def primal_metric(m: MetricSpec, x):
    """Matrix inverse of the dual metric."""
    gi = m.dual_metric(x)
    cond = np.linalg.cond(gi)
    if np.any(~np.isfinite(cond)) or np.any(cond > 1e14):
        raise np.linalg.LinAlgError("dual metric is singular; signature invariant violated")
    return np.linalg.inv(gi)


def causal_type(m: MetricSpec, x, v, tol_null: float = TOL_NULL) -> str:
    """Classify a tangent vector ``v`` at ``x`` as null, timelike or spacelike."""
    v = np.asarray(v, dtype=float)
    q = v @ primal_metric(m, x) @ v
    if abs(q) <= tol_null * (v @ v):
        return "null"
    return "timelike" if q < 0 else "spacelike"


def covector_causal_type(m: MetricSpec, x, xi, tol_null: float = TOL_NULL) -> str:
    """Causal type of the velocity ``g^{-1}(x) xi`` of a covector, read off ``p``."""
    xi = np.asarray(xi, dtype=float)
    q = 2.0 * hamiltonian(m, x, xi)
    if abs(q) <= tol_null * (xi @ xi):
        return "null"
    return "timelike" if q < 0 else "spacelike"


# ---------------------------------------------------------------------------


def _shell_points(dim, r_lo, r_hi, count, rng):
    v = rng.standard_normal((count, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = r_lo + (r_hi - r_lo) * rng.random(count)
    return v * r[:, None]


def symbol_class_check(m: MetricSpec, order: int = 2, radii=(1e2, 1e3, 1e4),
                       n_per_shell: int = 2000, seed: int = 0) -> NormReport:
    """Measure ``sup |d^alpha (g^{jk} - g0^{jk})| <x>^{mu + |alpha|}`` for ``|alpha| <= order``.

    Samples the core ball ``|x| <= 4`` and dyadic shells ``[2^k, 2^{k+1})`` up to
    each radius in ``radii``.  ``const_<a>_R<r>`` is the sup over the ball of
    radius ``r``; ``shell_<a>`` lists per-shell sups.  A depth is flagged as a
    violation when the shell sups keep rising over the last three shells by a
    combined factor above 1.5.
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    rng = np.random.default_rng(seed)
    dim = m.dim
    emax = np.abs(m._e).max() if not m.is_flat else 0.0
    r_top = max(radii)
    shells = [(0.0, 4.0)]
    r = 4.0
    while r < r_top:
        shells.append((r, min(2.0 * r, r_top)))
        r *= 2.0
    shell_sup = {a: [] for a in range(order + 1)}
    for lo, hi in shells:
        pts = _shell_points(dim, lo, hi, n_per_shell, rng)
        if lo == 0.0:
            pts = np.vstack([np.zeros((1, dim)), pts])
        jp = np.sqrt(1.0 + np.einsum("ij,ij->i", pts, pts))
        val, grad, hess = m.perturbation(pts)
        # max over entries of E times |d^alpha psi|; depth >0 takes max over components
        blocks = [np.abs(val), np.abs(grad).max(axis=1), np.abs(hess).max(axis=(1, 2))]
        for a in range(order + 1):
            shell_sup[a].append(float(np.max(emax * blocks[a] * jp ** (m.mu + a))))
    values = {}
    violations = []
    outer = np.array([hi for _, hi in shells])
    for a in range(order + 1):
        s = np.array(shell_sup[a])
        values[f"shell_{a}"] = s.tolist()
        for rr in radii:
            values[f"const_{a}_R{rr:g}"] = float(s[outer <= rr * (1 + 1e-12)].max())
        tail = s[-3:]
        if len(tail) == 3 and np.all(np.diff(tail) > 0) and tail[-1] > 1.5 * tail[0] > 0:
            violations.append(a)
    values["violations"] = violations
    return NormReport("symbol_class", values,
                      grid={"radii": list(radii), "n_per_shell": n_per_shell,
                            "shell_edges": outer.tolist()},
                      passed=not violations)


def decay_profile(m: MetricSpec, r_max: float = 1e4, n_per_shell: int = 2000, seed: int = 1):
    """Per dyadic shell beyond radius 1: ``(r_lo, max |g - g0| <x>^mu)``."""
    rng = np.random.default_rng(seed)
    out = []
    r = 1.0
    emax = np.abs(m._e).max() if not m.is_flat else 0.0
    while r < r_max:
        pts = _shell_points(m.dim, r, 2 * r, n_per_shell, rng)
        jp = np.sqrt(1.0 + np.einsum("ij,ij->i", pts, pts))
        val, _, _ = m.perturbation(pts)
        out.append((r, float(np.max(emax * np.abs(val) * jp ** m.mu))))
        r *= 2.0
    return out
