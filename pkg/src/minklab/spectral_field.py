"""Space-time grid functions with Fourier-multiplier calculus in ``y``.

Conventions
-----------
The spatial box is ``[-L, L)^n`` with ``N_y`` points per axis, so
``y_j = -L + j dy`` with ``dy = 2L/N_y`` and the dual lattice is
``eta_k = pi k / L`` for ``k`` in ``[-N_y/2, N_y/2)`` (stored in FFT order).
The transform approximates the continuum one,

    fhat(eta_k) = (2 pi)^{-n/2} dy^n  sum_j  exp(-i y_j . eta_k) f(y_j),

so Parseval reads ``sum |f|^2 dy^n == sum |fhat|^2 deta^n`` exactly, with
``deta = pi/L``.  The constant field 1 maps to ``(2L)^n (2 pi)^{-n/2}`` at
``eta = 0`` and zero elsewhere.

The time axis ``t_i = T0 + i dt``, ``i = 0..N_t-1``, includes both ends.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field as dc_field
from typing import Callable, Union

import numpy as np
from scipy import integrate

from .reports import NormReport


@dataclass(frozen=True)
class GridSpec:
    n: int
    L: float
    N_y: int
    T0: float
    T1: float
    N_t: int

    def __post_init__(self):
        if self.n not in (1, 2, 3):
            raise ValueError(f"spatial dimension must be 1, 2 or 3, got {self.n}")
        if self.N_y < 2 or self.N_y & (self.N_y - 1):
            raise ValueError(f"N_y must be a power of two, got {self.N_y}")
        if not self.T0 < self.T1:
            raise ValueError("require T0 < T1")
        if self.N_t < 2:
            raise ValueError("need at least two time samples")
        if not self.L > 0:
            raise ValueError("box half-width L must be positive")

    @property
    def dy(self) -> float:
        return 2.0 * self.L / self.N_y

    @property
    def deta(self) -> float:
        return np.pi / self.L

    @property
    def dt(self) -> float:
        return (self.T1 - self.T0) / (self.N_t - 1)

    @property
    def t(self) -> np.ndarray:
        return self.T0 + self.dt * np.arange(self.N_t)

    @property
    def y1(self) -> np.ndarray:
        return -self.L + self.dy * np.arange(self.N_y)

    @property
    def eta1(self) -> np.ndarray:
        """1-d dual lattice in FFT order."""
        return np.pi / self.L * np.fft.fftfreq(self.N_y, d=1.0 / self.N_y)

    @property
    def eta_max(self) -> float:
        return np.pi * (self.N_y // 2) / self.L

    @property
    def space_shape(self) -> tuple[int, ...]:
        return (self.N_y,) * self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N_t,) + self.space_shape

    def y_mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*([self.y1] * self.n), indexing="ij")

    def eta_mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*([self.eta1] * self.n), indexing="ij")

    def eta_abs(self) -> np.ndarray:
        return np.sqrt(sum(e * e for e in self.eta_mesh()))

    def index_of_time(self, t: float) -> int:
        """Grid index of ``t``; raises unless ``t`` sits on a node."""
        i = (t - self.T0) / self.dt
        k = int(round(i))
        if abs(i - k) > 1e-9 or not 0 <= k < self.N_t:
            raise ValueError(f"t={t} is not a grid node")
        return k

    def as_dict(self) -> dict:
        return {"n": self.n, "L": self.L, "N_y": self.N_y, "T0": self.T0,
                "T1": self.T1, "N_t": self.N_t}


@dataclass
class SpaceTimeField:
    """Complex samples on ``grid``; ``spectral`` marks values indexed by ``eta``."""

    grid: GridSpec
    values: np.ndarray
    spectral: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values have shape {self.values.shape}, grid needs {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field has non-finite entries")

    @classmethod
    def zeros(cls, grid: GridSpec, spectral: bool = False) -> "SpaceTimeField":
        return cls(grid, np.zeros(grid.shape, dtype=complex), spectral)

    @classmethod
    def from_function(cls, grid: GridSpec, func: Callable) -> "SpaceTimeField":
        """Sample ``func(t, *y)`` on the physical grid (broadcast arrays)."""
        t = grid.t.reshape((-1,) + (1,) * grid.n)
        ys = [y[None] for y in grid.y_mesh()]
        return cls(grid, np.broadcast_to(func(t, *ys), grid.shape).astype(complex))

    def copy(self) -> "SpaceTimeField":
        return SpaceTimeField(self.grid, self.values.copy(), self.spectral)


# ---------------------------------------------------------------------------
# symbol table


@dataclass(frozen=True)
class SpectralSymbolTable:
    """``a(eta) = sqrt(|eta|^2 - i) = a1 - i a2`` with ``a2 > 0`` on an array of ``|eta|``.

    Assembled from the half-angle form: ``a = r (cos th + i sin th)`` with
    ``r = (|eta|^4 + 1)^{1/4}``,
    ``sin^2 th = 1 / (2 sqrt(|eta|^4+1) (sqrt(|eta|^4+1) + |eta|^2))`` and
    ``sin th < 0``.
    """

    eta_abs: np.ndarray
    a: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    r: np.ndarray
    jap: np.ndarray

    @classmethod
    def from_eta(cls, eta_abs) -> "SpectralSymbolTable":
        e = np.abs(np.asarray(eta_abs, dtype=float))
        e2 = e * e
        q = np.sqrt(e2 * e2 + 1.0)          # |eta|^4 + 1 under a root, overflow-free to 1e77
        r = np.sqrt(q)
        sin2 = 1.0 / (2.0 * q * (q + e2))
        sin_th = -np.sqrt(sin2)
        cos_th = np.sqrt(1.0 - sin2)
        a1 = r * cos_th
        a2 = -r * sin_th
        return cls(e, a1 - 1j * a2, a1, a2, r, np.sqrt(1.0 + e2))

    @classmethod
    def build(cls, grid: GridSpec) -> "SpectralSymbolTable":
        return cls.from_eta(grid.eta_abs())

    def invariant_errors(self) -> dict[str, float]:
        """Relative residuals of the closed-form identities; all should be ~1e-16."""
        e2 = self.eta_abs ** 2
        target = e2 - 1j
        q = np.sqrt(e2 * e2 + 1.0)
        return {
            "square": float(np.max(np.abs(self.a ** 2 - target) / np.abs(target))),
            "modulus": float(np.max(np.abs(self.r - q ** 0.5) / q ** 0.5)),
            "imag": float(np.max(np.abs(self.a2 - 2 ** -0.5 * (q + e2) ** -0.5) / self.a2)),
            "a2_min": float(np.min(self.a2)),
        }

    def equivalence_constants(self) -> dict[str, float]:
        """Smallest ``C`` with ``C^-1 <eta> <= r <= C <eta>`` and the same for
        ``a2`` against ``<eta>^-1``, measured on this table."""
        rr = self.r / self.jap
        aa = self.a2 * self.jap
        return {"C_r": float(max(rr.max(), 1.0 / rr.min())),
                "C_a2": float(max(aa.max(), 1.0 / aa.min()))}


def build_symbol_table(grid: GridSpec) -> SpectralSymbolTable:
    return SpectralSymbolTable.build(grid)


# ---------------------------------------------------------------------------
# transforms


def _phase_and_axes(grid: GridSpec):
    k = np.fft.fftfreq(grid.N_y, d=1.0 / grid.N_y).astype(int)
    sign = np.where(k % 2 == 0, 1.0, -1.0)         # exp(i L eta_k) = (-1)^k
    phase = np.ones(grid.space_shape)
    for ax in range(grid.n):
        shape = [1] * grid.n
        shape[ax] = grid.N_y
        phase = phase * sign.reshape(shape)
    return phase, tuple(range(1, grid.n + 1))


def fourier_y(f: SpaceTimeField) -> SpaceTimeField:
    if f.spectral:
        raise ValueError("field is already in the dual representation")
    g = f.grid
    phase, axes = _phase_and_axes(g)
    scale = (g.dy / np.sqrt(2.0 * np.pi)) ** g.n
    vals = np.fft.fftn(f.values, axes=axes) * (phase * scale)[None]
    return SpaceTimeField(g, vals, spectral=True)


def inverse_fourier_y(f: SpaceTimeField) -> SpaceTimeField:
    if not f.spectral:
        raise ValueError("field is not in the dual representation")
    g = f.grid
    phase, axes = _phase_and_axes(g)
    scale = (g.deta / np.sqrt(2.0 * np.pi)) ** g.n * g.N_y ** g.n
    vals = np.fft.ifftn(f.values * phase[None], axes=axes) * scale
    return SpaceTimeField(g, vals, spectral=False)


# ---------------------------------------------------------------------------
# multipliers; a symbol is an array on the dual lattice or table -> array

Symbol = Union[np.ndarray, Callable[[SpectralSymbolTable], np.ndarray]]


def japanese(s: float) -> Callable:
    return lambda tab: tab.jap ** s


def a_inverse() -> Callable:
    return lambda tab: 1.0 / tab.a


def exp_minus_i_tau_a(tau: float) -> Callable:
    return lambda tab: np.exp(-1j * tau * tab.a)


def exp_i_tau_a1(tau: float) -> Callable:
    return lambda tab: np.exp(1j * tau * tab.a1)


def a2_power(s: float) -> Callable:
    return lambda tab: tab.a2 ** s


def evaluate_symbol(symbol: Symbol, table: SpectralSymbolTable) -> np.ndarray:
    vals = symbol(table) if callable(symbol) else np.asarray(symbol)
    vals = np.broadcast_to(vals, table.eta_abs.shape)
    if not np.all(np.isfinite(vals)):
        raise ValueError("symbol is not finite on the dual lattice")
    return vals


def apply_multiplier(f: SpaceTimeField, symbol: Symbol,
                     table: SpectralSymbolTable | None = None,
                     inverse: bool = False) -> SpaceTimeField:
    """Multiply by ``symbol(eta)`` (or its reciprocal) in the dual variable.

    The result has the same representation as the input.
    """
    if table is None:
        table = build_symbol_table(f.grid)
    sym = evaluate_symbol(symbol, table)
    if inverse:
        smin = np.min(np.abs(sym))
        if not smin > 0:
            raise ValueError("cannot invert a symbol that vanishes on the dual lattice")
        sym = 1.0 / sym
    if f.spectral:
        return SpaceTimeField(f.grid, f.values * sym[None], spectral=True)
    fh = fourier_y(f)
    fh.values *= sym[None]
    return inverse_fourier_y(fh)


# ---------------------------------------------------------------------------
# norms


def _t_integral(grid: GridSpec, slab: np.ndarray) -> float:
    return float(integrate.trapezoid(slab, dx=grid.dt, axis=0))


def l2_norm(f: SpaceTimeField, t_weight: np.ndarray | None = None) -> float:
    """Trapezoid in ``t``, exact lattice sum in ``y`` (or ``eta``)."""
    g = f.grid
    cell = g.deta ** g.n if f.spectral else g.dy ** g.n
    axes = tuple(range(1, g.n + 1))
    slab = np.sum(np.abs(f.values) ** 2, axis=axes) * cell
    if t_weight is not None:
        slab = slab * np.abs(t_weight) ** 2
    return float(np.sqrt(_t_integral(g, slab)))


def dual_norm(fh: SpaceTimeField, weight: np.ndarray,
              t_weight: np.ndarray | None = None) -> float:
    """``|| t_weight(t) weight(eta) fhat ||`` for a dual-space field."""
    g = fh.grid
    axes = tuple(range(1, g.n + 1))
    slab = np.sum(np.abs(fh.values * weight[None]) ** 2, axis=axes) * g.deta ** g.n
    if t_weight is not None:
        slab = slab * np.abs(t_weight) ** 2
    return float(np.sqrt(_t_integral(g, slab)))


def norms(f: SpaceTimeField, k: float = 0.5, w: float = 0.0,
          table: SpectralSymbolTable | None = None) -> NormReport:
    """L2, ``H^k_y``, ``<t>^w``-weighted L2 and the ``A_2^{-k}`` norm of ``f``."""
    if not -2.0 <= k <= 2.0:
        raise ValueError("k must lie in [-2, 2]")
    g = f.grid
    table = table or build_symbol_table(g)
    fh = f if f.spectral else fourier_y(f)
    l2 = dual_norm(fh, np.ones(g.space_shape))
    hk = dual_norm(fh, table.jap ** k)
    a2n = dual_norm(fh, table.a2 ** (-k))
    tw = (1.0 + g.t ** 2) ** (0.5 * w)
    weighted = dual_norm(fh, np.ones(g.space_shape), t_weight=tw)
    ratio = a2n / hk if hk > 0 else 0.0
    return NormReport("norms", {"L2": l2, f"H{k:g}": hk, "Hk": hk, "A2": a2n,
                                "A2_over_Hk": ratio, f"weighted_t{w:g}": weighted},
                      grid=g.as_dict())


def support_ok(f: SpaceTimeField, band: float = 0.1, level: float = 1e-10) -> bool:
    """True when ``|f| <= level`` on the first and last ``band`` fraction of time nodes."""
    nb = max(1, int(np.ceil(band * f.grid.N_t)))
    v = np.abs(f.values)
    return bool(v[:nb].max() <= level and v[-nb:].max() <= level)


def spacetime_sobolev_norm(f: SpaceTimeField, k: float) -> float:
    """``H^k(R^{n+1})`` norm with weight ``(1 + tau^2 + |eta|^2)^{k/2}``.

    Time is transformed on the period ``N_t dt``; the field must vanish in a
    10% band at both ends of the window so periodisation is harmless.
    """
    if f.spectral:
        raise ValueError("expects a physical-space field")
    if not support_ok(f):
        raise ValueError("field does not vanish near the ends of the time window; "
                         "periodic extension in t would corrupt the norm")
    g = f.grid
    fh = fourier_y(f)
    ft = np.fft.fft(fh.values, axis=0) * (g.dt / np.sqrt(2.0 * np.pi))
    tau = 2.0 * np.pi * np.fft.fftfreq(g.N_t, d=g.dt)
    dtau = 2.0 * np.pi / (g.N_t * g.dt)
    e2 = g.eta_abs() ** 2
    wt = (1.0 + tau.reshape((-1,) + (1,) * g.n) ** 2 + e2[None]) ** k
    return float(np.sqrt(np.sum(wt * np.abs(ft) ** 2) * dtau * g.deta ** g.n))


# ---------------------------------------------------------------------------
# serialisation

_MAGIC = b"STF1"


def field_to_bytes(f: SpaceTimeField) -> bytes:
    """``STF1`` | uint32 ndim | uint64 dims... | complex64 row-major (little endian)."""
    dims = f.values.shape
    head = _MAGIC + struct.pack("<I", len(dims)) + struct.pack(f"<{len(dims)}Q", *dims)
    return head + np.ascontiguousarray(f.values, dtype="<c8").tobytes()


def array_from_bytes(buf: bytes) -> np.ndarray:
    if buf[:4] != _MAGIC:
        raise ValueError("not a field file (bad magic)")
    (ndim,) = struct.unpack_from("<I", buf, 4)
    dims = struct.unpack_from(f"<{ndim}Q", buf, 8)
    off = 8 + 8 * ndim
    count = int(np.prod(dims))
    data = np.frombuffer(buf, dtype="<c8", count=count, offset=off)
    if off + 8 * count != len(buf):
        raise ValueError("field file size does not match its header")
    return data.reshape(dims).astype(complex)


def field_from_bytes(buf: bytes, grid: GridSpec, spectral: bool = False) -> SpaceTimeField:
    return SpaceTimeField(grid, array_from_bytes(buf), spectral)


def write_field(path, f: SpaceTimeField) -> None:
    with open(path, "wb") as fh:
        fh.write(field_to_bytes(f))


def read_field(path, grid: GridSpec, spectral: bool = False) -> SpaceTimeField:
    with open(path, "rb") as fh:
        return field_from_bytes(fh.read(), grid, spectral)


def field_to_csv(f: SpaceTimeField, max_points: int = 100_000) -> str:
    """One row per sample: ``t, y_1..y_n, re, im`` (physical fields only)."""
    if f.spectral:
        raise ValueError("CSV export is for physical-space fields")
    g = f.grid
    if f.values.size > max_points:
        raise ValueError(f"grid too large for CSV export ({f.values.size} samples)")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"y{i + 1}" for i in range(g.n)] + ["re", "im"])
    ys = [y.ravel() for y in g.y_mesh()]
    for i, t in enumerate(g.t):
        row = f.values[i].ravel()
        for j in range(row.size):
            w.writerow([repr(float(t))] + [repr(float(y[j])) for y in ys]
                       + [repr(float(row[j].real)), repr(float(row[j].imag))])
    return buf.getvalue()


def field_from_csv(text: str, grid: GridSpec) -> SpaceTimeField:
    rows = list(csv.reader(io.StringIO(text)))[1:]
    vals = np.array([complex(float(r[-2]), float(r[-1])) for r in rows])
    return SpaceTimeField(grid, vals.reshape(grid.shape))
