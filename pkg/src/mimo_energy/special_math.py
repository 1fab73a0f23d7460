"""Special functions and small numerical primitives.

Bessel J0/J1 (and the J1 derivative), zero tables, an oscillation-aware
adaptive Gauss-Legendre rule, the Gaussian tail function and its inverse, and a
Kolmogorov-Smirnov normality statistic.  Everything here is a pure function
of its inputs.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Callable

import numpy as np

__all__ = [
    "ZeroKind",
    "BesselZeroTable",
    "QuadratureSpec",
    "QuadratureError",
    "ZeroSearchError",
    "KSResult",
    "bessel_j0",
    "bessel_j1",
    "bessel_j1_prime",
    "find_bessel_zeros",
    "integrate",
    "phi_coefficient",
    "gaussian_q",
    "gaussian_q_inv",
    "ks_normality",
]

_SERIES_LIMIT = 8.0
_ASYMPTOTIC_LIMIT = 25.0
_SERIES_TERMS = 60
_HANKEL_TERMS = 30


class ZeroKind(str, enum.Enum):
    """Which function's positive zeros a table holds."""

    J1 = "ZerosOfJ1"
    J1_PRIME = "ZerosOfJ1Prime"

    @classmethod
    def parse(cls, value: "ZeroKind | str") -> "ZeroKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip()
        for member in cls:
            if key in (member.value, member.name, member.value.lower(), member.name.lower()):
                return member
        raise ValueError(f"unknown zero kind {value!r}; expected ZerosOfJ1 or ZerosOfJ1Prime")


class QuadratureError(ArithmeticError):
    """Adaptive quadrature ran out of subdivisions before meeting tolerance."""

    def __init__(self, message: str, estimate: float, error: float):
        super().__init__(f"{message} (estimate={estimate!r}, achieved error={error:.3e})")
        self.estimate = estimate
        self.error = error


class ZeroSearchError(ArithmeticError):
    """Sign-change scan failed to bracket the requested number of zeros."""


@dataclass(frozen=True)
class QuadratureSpec:
    abs_tol: float = 1e-13
    rel_tol: float = 1e-12
    max_subdivisions: int = 200_000

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("quadrature tolerances must be positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")


@dataclass(frozen=True)
class BesselZeroTable:
    kind: ZeroKind
    zeros: tuple[float, ...]
    achieved_tolerance: float

    def __len__(self):
        return len(self.zeros)

    def as_array(self) -> np.ndarray:
        return np.array(self.zeros)


@dataclass(frozen=True)
class KSResult:
    statistic: float
    p_value: float
    n: int


def _check_finite(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise ValueError("Bessel functions require finite arguments")


def _series(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Returns (J0(x), J1(x)/x) from the power series; accurate for |x| <= 8.
    q = -0.25 * x * x
    t0 = np.ones_like(x)
    t1 = np.full_like(x, 0.5)
    s0 = t0.copy()
    s1 = t1.copy()
    for k in range(1, _SERIES_TERMS):
        t0 = t0 * q / (k * k)
        t1 = t1 * q / (k * (k + 1))
        s0 += t0
        s1 += t1
    return s0, s1


def _miller(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Backward recurrence normalised by J0 + 2*sum(J_2k) = 1; x > 0.
    top = int(np.max(x))
    m = 2 * ((top + 40 + int(12 * top ** (1 / 3))) // 2)
    j_next = np.zeros_like(x)
    j_cur = np.full_like(x, 1e-30)
    norm = np.zeros_like(x)
    j0 = j1 = None
    for n in range(m, 0, -1):
        j_prev = (2.0 * n / x) * j_cur - j_next
        j_next, j_cur = j_cur, j_prev
        # j_cur now holds J_{n-1}
        if (n - 1) % 2 == 0 and n - 1 > 0:
            norm += 2.0 * j_cur
        if n - 1 == 1:
            j1 = j_cur.copy()
        big = np.abs(j_cur) > 1e250
        if np.any(big):
            scale = np.where(big, 1e-250, 1.0)
            j_cur = j_cur * scale
            j_next = j_next * scale
            norm = norm * scale
            if j1 is not None:
                j1 = j1 * scale
    j0 = j_cur
    norm += j0
    return j0 / norm, j1 / norm


def _hankel(x: np.ndarray, order: int) -> np.ndarray:
    mu = 4.0 * order * order
    p = np.ones_like(x)
    q = np.zeros_like(x)
    term = np.ones_like(x)
    for k in range(1, _HANKEL_TERMS):
        term = term * (mu - (2 * k - 1) ** 2) / (k * 8.0 * x)
        if k % 2 == 1:
            q += term if (k // 2) % 2 == 0 else -term
        else:
            p += -term if (k // 2) % 2 == 1 else term
    chi = x - (0.5 * order + 0.25) * np.pi
    return np.sqrt(2.0 / (np.pi * x)) * (p * np.cos(chi) - q * np.sin(chi))


def _j0_j1(x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (J0, J1, J1/x) evaluated on |x| (J1 sign fixed by caller)."""
    ax = np.abs(np.asarray(x, dtype=float))
    _check_finite(ax)
    j0 = np.empty_like(ax)
    j1 = np.empty_like(ax)
    j1_over_x = np.empty_like(ax)

    small = ax <= _SERIES_LIMIT
    mid = (ax > _SERIES_LIMIT) & (ax < _ASYMPTOTIC_LIMIT)
    large = ax >= _ASYMPTOTIC_LIMIT
    if np.any(small):
        xs = ax[small]
        a, b = _series(xs)
        j0[small], j1_over_x[small] = a, b
        j1[small] = b * xs
    if np.any(mid):
        xm = ax[mid]
        a, b = _miller(xm)
        j0[mid], j1[mid] = a, b
        j1_over_x[mid] = b / xm
    if np.any(large):
        xl = ax[large]
        j0[large] = _hankel(xl, 0)
        j1[large] = _hankel(xl, 1)
        j1_over_x[large] = j1[large] / xl
    return j0, j1, j1_over_x


def _unwrap(x, value):
    return float(value) if np.ndim(x) == 0 else value


def bessel_j0(x):
    """Bessel function of the first kind, order zero.  Accepts scalars or arrays."""
    j0, _, _ = _j0_j1(x)
    return _unwrap(x, j0)


def bessel_j1(x):
    """Bessel function of the first kind, order one (odd in x)."""
    _, j1, _ = _j0_j1(x)
    j1 = np.where(np.asarray(x) < 0, -j1, j1)
    return _unwrap(x, j1)


def bessel_j1_prime(x):
    """d/dx J1(x) = J0(x) - J1(x)/x, with the limit 1/2 at the origin."""
    j0, _, j1_over_x = _j0_j1(x)
    return _unwrap(x, j0 - j1_over_x)


_TARGETS = {
    ZeroKind.J1: bessel_j1,
    ZeroKind.J1_PRIME: bessel_j1_prime,
}


def find_bessel_zeros(kind: ZeroKind | str, count: int, tol: float = 1e-13) -> BesselZeroTable:
    """First ``count`` positive zeros of J1 or J1'.

    Sign changes are located on a pi/4 grid, then every bracket is bisected
    (all brackets at once) until its width drops below ``tol``.
    """
    kind = ZeroKind.parse(kind)
    if count < 1:
        raise ValueError("count must be >= 1")
    if not tol > 0:
        raise ValueError("tol must be positive")
    return _zero_table(kind, int(count), float(tol))


@functools.lru_cache(maxsize=64)
def _zero_table(kind: ZeroKind, count: int, tol: float) -> BesselZeroTable:
    target = _TARGETS[kind]
    step = np.pi / 4
    bound = (count + 2) * np.pi
    # J1 vanishes at the origin, so its scan starts one step out.
    grid = np.arange(step, bound + step, step)
    values = target(grid)
    flips = np.nonzero(np.sign(values[:-1]) * np.sign(values[1:]) < 0)[0]
    exact = np.nonzero(values == 0.0)[0]
    if exact.size:
        raise ZeroSearchError("scan grid landed exactly on a zero; cannot bracket")
    if flips.size < count:
        raise ZeroSearchError(
            f"found only {flips.size} sign changes of {kind.value} below {bound:.3f}, "
            f"needed {count}"
        )
    flips = flips[:count]
    lo = grid[flips].copy()
    hi = grid[flips + 1].copy()
    f_lo = values[flips].copy()
    for _ in range(200):
        if np.all(hi - lo <= tol):
            break
        mid = 0.5 * (lo + hi)
        f_mid = target(mid)
        left = np.sign(f_mid) == np.sign(f_lo)
        lo = np.where(left, mid, lo)
        f_lo = np.where(left, f_mid, f_lo)
        hi = np.where(left, hi, mid)
    zeros = 0.5 * (lo + hi)
    residual = float(np.max(np.abs(target(zeros))))
    if not np.all(np.diff(zeros) > 1.0):
        raise ZeroSearchError("zero table is not separated by more than 1; scan skipped a root")
    return BesselZeroTable(kind, tuple(float(z) for z in zeros), residual)


def _evaluate(f: Callable, x: np.ndarray) -> np.ndarray:
    try:
        y = np.asarray(f(x), dtype=float)
        if y.shape == x.shape:
            return y
    except (TypeError, ValueError):
        pass
    return np.array([float(f(float(v))) for v in x])


_EPS = np.finfo(float).eps
_ROUNDOFF_FACTOR = 50.0
# integrands like J0(k t) with k t ~ 1e3 carry relative noise near eps * k t
_LOCAL_NOISE = 2000.0 * _EPS
_GL_LOW = np.polynomial.legendre.leggauss(10)
_GL_HIGH = np.polynomial.legendre.leggauss(20)
# both rules mapped to [0, 1]: nodes and weights
_NODES = np.concatenate([(_GL_LOW[0] + 1.0) / 2.0, (_GL_HIGH[0] + 1.0) / 2.0])
_W_LOW = _GL_LOW[1] / 2.0
_W_HIGH = _GL_HIGH[1] / 2.0
_N_LOW = _W_LOW.size


def integrate(
    f: Callable,
    a: float,
    b: float,
    spec: QuadratureSpec | None = None,
    *,
    frequency: float = 0.0,
) -> float:
    """Adaptive Gauss-Legendre quadrature of ``f`` over [a, b].

    Each panel is integrated with 10- and 20-point rules; their difference is
    the (pessimistic) error estimate and the 20-point value is kept.  ``f`` is
    called with numpy arrays when it supports them.  For integrands
    oscillating like J0(frequency * t) the starting panels are no wider than
    pi / frequency.  Raises QuadratureError carrying the best estimate when
    the tolerance is not met within ``spec.max_subdivisions`` splits.
    """
    spec = spec or QuadratureSpec()
    if not a < b:
        raise ValueError("integrate requires a < b")
    width = b - a
    n0 = 2
    if frequency > 0:
        n0 = max(n0, int(math.ceil(width * frequency / math.pi)))
    edges = np.linspace(a, b, n0 + 1)
    lo, hi = edges[:-1], edges[1:]

    done_sum = 0.0
    done_abs = 0.0
    done_err = 0.0
    splits = 0
    while lo.size:
        h = hi - lo
        pts = lo[:, None] + h[:, None] * _NODES
        fv = _evaluate(f, pts.ravel()).reshape(pts.shape)
        if not np.all(np.isfinite(fv)):
            raise ValueError("integrand is not finite on the integration interval")
        low = h * (fv[:, :_N_LOW] @ _W_LOW)
        high = h * (fv[:, _N_LOW:] @ _W_HIGH)
        err = np.abs(high - low)
        absval = h * (np.abs(fv[:, _N_LOW:]) @ _W_HIGH)

        estimate = done_sum + float(np.sum(high))
        # cancelling integrands cannot beat rounding on the integral of |f|
        floor = _ROUNDOFF_FACTOR * _EPS * (done_abs + float(np.sum(absval)))
        budget = max(spec.abs_tol, spec.rel_tol * abs(estimate), floor)
        # a panel is also done once its error is at the noise level of its own |f|
        ok = (err <= budget * h / width) | (err <= _LOCAL_NOISE * absval)
        done_sum += float(np.sum(high[ok]))
        done_abs += float(np.sum(absval[ok]))
        done_err += float(np.sum(err[ok]))

        bad = ~ok
        if not np.any(bad):
            break
        splits += int(np.count_nonzero(bad))
        if splits > spec.max_subdivisions:
            raise QuadratureError(
                "adaptive quadrature exceeded max_subdivisions",
                estimate,
                done_err + float(np.sum(err[bad])),
            )
        mids = 0.5 * (lo[bad] + hi[bad])
        lo = np.concatenate([lo[bad], mids])
        hi = np.concatenate([mids, hi[bad]])
    return done_sum


def phi_coefficient(k: float, beta: float, spec: QuadratureSpec | None = None) -> float:
    """Radial projection 2 * int_0^1 J0(k t) t^(beta+1) dt."""
    if not k > 0:
        raise ValueError("k must be positive")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    return 2.0 * integrate(
        lambda t: bessel_j0(k * t) * t ** (beta + 1.0), 0.0, 1.0, spec, frequency=k
    )


_STD_NORMAL = NormalDist()


def gaussian_q(z: float) -> float:
    """Standard normal tail probability P(Z > z)."""
    z = float(z)
    if math.isnan(z):
        raise ValueError("gaussian_q of NaN")
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def gaussian_q_inv(p: float) -> float:
    """Inverse of gaussian_q on (0, 1)."""
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"gaussian_q_inv needs 0 < p < 1, got {p!r}")
    z = -_STD_NORMAL.inv_cdf(p)
    for _ in range(3):
        density = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        if density == 0.0:
            break
        z += (gaussian_q(z) - p) / density
    return z


def _kolmogorov_sf(lam: float) -> float:
    if lam <= 0:
        return 1.0
    if lam < 1.18:
        # Small-lambda form of the CDF converges fast here.
        s = sum(
            math.exp(-((2 * j - 1) ** 2) * math.pi**2 / (8 * lam * lam)) for j in range(1, 8)
        )
        return max(0.0, min(1.0, 1.0 - math.sqrt(2 * math.pi) / lam * s))
    s = sum((-1) ** (j - 1) * math.exp(-2 * j * j * lam * lam) for j in range(1, 101))
    return max(0.0, min(1.0, 2.0 * s))


def ks_normality(samples, loc: float | None = None, scale: float | None = None) -> KSResult:
    """Kolmogorov-Smirnov distance of standardized samples from N(0, 1).

    Samples are standardized by their own mean and (ddof=1) standard
    deviation unless ``loc``/``scale`` are given.  The p-value uses the
    asymptotic Kolmogorov distribution with Stephens' small-n correction.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 8:
        raise ValueError("ks_normality needs at least 8 samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    mu = float(np.mean(x)) if loc is None else float(loc)
    sd = float(np.std(x, ddof=1)) if scale is None else float(scale)
    if not sd > 0:
        raise ValueError("degenerate sample set: zero variance")
    z = np.sort((x - mu) / sd)
    n = z.size
    cdf = np.array([_STD_NORMAL.cdf(v) for v in z])
    i = np.arange(1, n + 1)
    d = float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))
    root = math.sqrt(n)
    return KSResult(d, _kolmogorov_sf((root + 0.12 + 0.11 / root) * d), n)
