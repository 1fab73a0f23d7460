"""Channels, zero-forcing transmit power, and energy accumulation along walks."""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import scipy.linalg

from .cell_model import CellGeometry, MobilityParams, inverse_path_gain, path_gain, reflect_step
from .special_math import ZeroKind

__all__ = [
    "FadingMode",
    "SystemConfig",
    "ChannelMatrix",
    "SingularChannelError",
    "EnergyTrace",
    "sample_fading",
    "channel_matrix",
    "zf_power",
    "achievable_rate",
    "hardened_power",
    "simulate_energy",
    "simulate_energy_batch",
]

COND_LIMIT = 1e12
_FADING_BLOCK = 256  # time steps of fading drawn per call in Exact mode


class FadingMode(str, enum.Enum):
    EXACT = "Exact"
    HARDENED = "Hardened"

    @classmethod
    def parse(cls, value) -> "FadingMode":
        if isinstance(value, cls):
            return value
        for m in cls:
            if str(value).strip().lower() in (m.value.lower(), m.name.lower()):
                return m
        raise ValueError(f"unknown fading mode {value!r}; expected Exact or Hardened")


class SingularChannelError(np.linalg.LinAlgError):
    def __init__(self, condition: float, detail: str = ""):
        msg = f"Gram matrix is singular or ill-conditioned (condition estimate {condition:.3e})"
        super().__init__(msg + (f": {detail}" if detail else ""))
        self.condition = condition


@dataclass(frozen=True)
class SystemConfig:
    K: int
    N: int
    rho: float
    geom: CellGeometry
    mob: MobilityParams
    horizon_T: float
    sigma2: float = 1.0
    time_step: float | None = None
    fading_mode: FadingMode = FadingMode.HARDENED
    tau_d: float = 0.0
    zero_kind: ZeroKind = ZeroKind.J1
    mode_count: int = 60

    def __post_init__(self):
        object.__setattr__(self, "fading_mode", FadingMode.parse(self.fading_mode))
        object.__setattr__(self, "zero_kind", ZeroKind.parse(self.zero_kind))
        if self.time_step is None:
            object.__setattr__(self, "time_step", self.mob.step_time_xi)
        if not (isinstance(self.K, (int, np.integer)) and isinstance(self.N, (int, np.integer))):
            raise ValueError("K and N must be integers")
        if not 0 < self.K < self.N:
            raise ValueError(f"requires K < N (got K={self.K}, N={self.N})")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if not self.time_step > 0:
            raise ValueError("time_step must be positive")
        if not self.horizon_T >= self.time_step:
            raise ValueError("horizon_T must be at least time_step")
        if not self.tau_d >= 0:
            raise ValueError("tau_d must be non-negative")
        if self.mode_count < 1:
            raise ValueError("mode_count must be >= 1")

    @property
    def c(self) -> float:
        return self.K / self.N

    @property
    def load_factor(self) -> float:
        """c / (1 - c) = K / (N - K)."""
        return self.K / (self.N - self.K)

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.horizon_T / self.time_step - 1e-9))

    def with_(self, **changes) -> "SystemConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "K": int(self.K),
            "N": int(self.N),
            "rho": self.rho,
            "sigma2": self.sigma2,
            "beta": self.geom.pathloss_beta,
            "r0": self.geom.cutoff_r0,
            "R": self.geom.radius_R,
            "ell": self.mob.step_length_ell,
            "xi": self.mob.step_time_xi,
            "T": self.horizon_T,
            "time_step": self.time_step,
            "fading_mode": self.fading_mode.value,
            "tau_d": self.tau_d,
            "zero_kind": self.zero_kind.value,
            "mode_count": int(self.mode_count),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SystemConfig":
        return cls(
            K=int(d["K"]),
            N=int(d["N"]),
            rho=float(d["rho"]),
            sigma2=float(d.get("sigma2", 1.0)),
            geom=CellGeometry(float(d["R"]), float(d["r0"]), float(d["beta"])),
            mob=MobilityParams(float(d["ell"]), float(d["xi"])),
            horizon_T=float(d["T"]),
            time_step=None if d.get("time_step") is None else float(d["time_step"]),
            fading_mode=d.get("fading_mode", FadingMode.HARDENED),
            tau_d=float(d.get("tau_d", 0.0)),
            zero_kind=d.get("zero_kind", ZeroKind.J1),
            mode_count=int(d.get("mode_count", 60)),
        )

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class ChannelMatrix:
    entries: np.ndarray  # (..., K, N) complex
    per_ue_gains: np.ndarray  # (..., K)


@dataclass
class EnergyTrace:
    energy: float
    times: np.ndarray
    power: np.ndarray
    retries: int = 0


def sample_fading(rng: np.random.Generator, K: int, N: int, size: tuple = ()) -> np.ndarray:
    """i.i.d. CN(0, 1) entries, shape ``size + (K, N)``."""
    if K < 1 or N < 1:
        raise ValueError("K and N must be >= 1")
    z = rng.standard_normal(tuple(size) + (K, N, 2))
    return (z[..., 0] + 1j * z[..., 1]) * np.sqrt(0.5)


def channel_matrix(fading: np.ndarray, positions, geom: CellGeometry) -> ChannelMatrix:
    """Scale fading rows by sqrt(g_k); leading batch dimensions broadcast."""
    fading = np.asarray(fading)
    gains = np.asarray(path_gain(positions, geom), dtype=float)
    try:
        if fading.ndim < 2 or gains.ndim < 1 or gains.shape[-1] != fading.shape[-2]:
            raise ValueError
        np.broadcast_shapes(gains.shape, fading.shape[:-1])
    except ValueError:
        raise ValueError(
            f"dimension mismatch: fading {fading.shape} vs {gains.shape} user positions"
        ) from None
    return ChannelMatrix(np.sqrt(gains)[..., None] * fading, gains)


def _gram(H: np.ndarray) -> np.ndarray:
    return H @ np.conj(np.swapaxes(H, -1, -2))


def zf_power(H, rho: float = 1.0):
    """rho * tr((H H^H)^{-1}) via Cholesky of the K x K Gram matrix.

    Accepts a ChannelMatrix or a raw (..., K, N) array; batched input gives
    a batched result.
    """
    entries = H.entries if isinstance(H, ChannelMatrix) else np.asarray(H)
    if entries.ndim < 2:
        raise ValueError("channel must be at least two-dimensional")
    K = entries.shape[-2]
    gram = _gram(entries.astype(complex))
    try:
        L = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        cond = float(np.max(np.linalg.cond(gram.reshape(-1, K, K))))
        raise SingularChannelError(cond, "Cholesky factorisation failed") from None
    diag = np.abs(np.diagonal(L, axis1=-2, axis2=-1))
    cond_est = (np.max(diag, axis=-1) / np.min(diag, axis=-1)) ** 2
    if np.any(~np.isfinite(cond_est)) or np.any(cond_est > COND_LIMIT):
        raise SingularChannelError(float(np.max(cond_est)))
    eye = np.eye(K, dtype=complex)
    if L.ndim == 2:
        Linv = scipy.linalg.solve_triangular(L, eye, lower=True)
    else:
        Linv = np.linalg.solve(L, np.broadcast_to(eye, L.shape))
    # tr(G^-1) = ||L^-1||_F^2
    tr = np.sum(Linv.real**2 + Linv.imag**2, axis=(-2, -1))
    out = rho * tr
    return float(out) if np.ndim(out) == 0 else out


def achievable_rate(rho: float, sigma2: float) -> float:
    """Per-user spectral efficiency log2(1 + rho / sigma^2) in bit/s/Hz."""
    if rho < 0 or not sigma2 > 0:
        raise ValueError("rho must be >= 0 and sigma2 > 0")
    return math.log2(1.0 + rho / sigma2)


def hardened_power(positions, cfg: SystemConfig):
    """Deterministic equivalent rho * c/(1-c) * mean_k 1/g(x_k)."""
    inv = np.asarray(inverse_path_gain(positions, cfg.geom))
    out = cfg.rho * cfg.load_factor * np.mean(inv, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def _mobility_index(cfg: SystemConfig) -> np.ndarray:
    # walk step count completed at each slot start t_j = j * time_step
    j = np.arange(cfg.n_steps)
    return np.floor(j * cfg.time_step / cfg.mob.step_time_xi + 1e-9).astype(int)


def _walk_radii(cfg: SystemConfig, rngs: Sequence[np.random.Generator]) -> np.ndarray:
    """Squared radii of all users at every needed walk step, shape (B, n_walk + 1, K)."""
    K, R, ell = cfg.K, cfg.geom.radius_R, cfg.mob.step_length_ell
    n_walk = int(_mobility_index(cfg)[-1])
    B = len(rngs)
    pos = np.empty((B, K, 2))
    cos_t = np.empty((B, n_walk, K))
    sin_t = np.empty((B, n_walk, K))
    for b, rng in enumerate(rngs):
        pos[b] = _uniform_disk_points(rng, R, K)
        theta = rng.random((n_walk, K)) * (2.0 * np.pi)
        cos_t[b] = np.cos(theta)
        sin_t[b] = np.sin(theta)
    r2 = np.empty((B, n_walk + 1, K))
    r2[:, 0] = pos[..., 0] ** 2 + pos[..., 1] ** 2
    for s in range(n_walk):
        pos = reflect_step(pos, cos_t[:, s], sin_t[:, s], ell, R)
        r2[:, s + 1] = pos[..., 0] ** 2 + pos[..., 1] ** 2
    return r2


def _uniform_disk_points(rng: np.random.Generator, R: float, K: int) -> np.ndarray:
    u = rng.random(K)
    angle = rng.random(K) * (2.0 * np.pi)
    rad = R * np.sqrt(u)
    return np.stack([rad * np.cos(angle), rad * np.sin(angle)], axis=-1)


def _exact_power(inv_gain: np.ndarray, cfg: SystemConfig, rng: np.random.Generator):
    """ZF power per slot with a fresh fading draw each slot; inv_gain is (n, K)."""
    n, K = inv_gain.shape
    sqrt_g = np.sqrt(1.0 / inv_gain)
    power = np.empty(n)
    bad: list[int] = []
    for start in range(0, n, _FADING_BLOCK):
        stop = min(n, start + _FADING_BLOCK)
        W = sample_fading(rng, K, cfg.N, size=(stop - start,))
        H = sqrt_g[start:stop, :, None] * W
        try:
            power[start:stop] = zf_power(H, cfg.rho)
        except SingularChannelError:
            for j in range(start, stop):
                try:
                    power[j] = zf_power(H[j - start], cfg.rho)
                except SingularChannelError:
                    bad.append(j)
    for j in bad:
        # one retry with fresh fading, drawn after the regular stream
        W = sample_fading(rng, K, cfg.N)
        power[j] = zf_power(sqrt_g[j, :, None] * W, cfg.rho)
    return power, len(bad)


def simulate_energy_batch(
    cfg: SystemConfig, rngs: Sequence[np.random.Generator]
) -> list[EnergyTrace]:
    """Run one energy trial per generator; trial b draws only from ``rngs[b]``.

    Draw order per trial: initial positions, all walk directions, then
    fading (Exact mode).  Energy is the left Riemann sum of slot power.
    """
    r2 = _walk_radii(cfg, rngs)
    idx = _mobility_index(cfg)
    beta, r0 = cfg.geom.pathloss_beta, cfg.geom.cutoff_r0
    inv_gain = np.power(r2[:, idx], 0.5 * beta) + r0**beta
    times = np.arange(cfg.n_steps) * cfg.time_step
    out = []
    for b, rng in enumerate(rngs):
        retries = 0
        if cfg.fading_mode is FadingMode.HARDENED:
            power = cfg.rho * cfg.load_factor * np.mean(inv_gain[b], axis=-1)
        else:
            power, retries = _exact_power(inv_gain[b], cfg, rng)
        energy = float(np.sum(power) * cfg.time_step)
        out.append(EnergyTrace(energy, times, power, retries))
    return out


def simulate_energy(cfg: SystemConfig, rng: np.random.Generator) -> EnergyTrace:
    """Total transmit energy over [0, T] for one independent realisation."""
    return simulate_energy_batch(cfg, [rng])[0]
