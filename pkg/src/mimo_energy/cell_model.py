"""Circular cell: path loss, reflecting random walk, and the diffusion propagator."""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import special as sp

from .special_math import (
    QuadratureSpec,
    ZeroKind,
    bessel_j0,
    find_bessel_zeros,
    phi_coefficient,
)

__all__ = [
    "CellGeometry",
    "MobilityParams",
    "Trajectory",
    "PropagatorParams",
    "path_gain",
    "inverse_path_gain",
    "sample_uniform_disk",
    "reflect_step",
    "step_random_walk",
    "make_trajectory",
    "write_trajectories_csv",
    "radial_modes",
    "propagator",
    "required_mode_count",
    "radial_moment_covariance",
    "stationary_radial_variance",
    "points_from_polar",
]

# Points further than R*(1 + _EDGE_SLACK) from the centre count as outside.
_EDGE_SLACK = 1e-12
_MAX_REFLECTIONS = 64
_DECAY_FLOOR = 1e-16


@dataclass(frozen=True)
class CellGeometry:
    radius_R: float
    cutoff_r0: float
    pathloss_beta: float

    def __post_init__(self):
        if not self.cutoff_r0 >= 0:
            raise ValueError("cutoff_r0 must be >= 0")
        if not self.radius_R > self.cutoff_r0:
            raise ValueError("radius_R must exceed cutoff_r0")
        if not self.pathloss_beta > 0:
            raise ValueError("pathloss_beta must be positive")


@dataclass(frozen=True)
class MobilityParams:
    step_length_ell: float
    step_time_xi: float

    def __post_init__(self):
        if not (self.step_length_ell > 0 and self.step_time_xi > 0):
            raise ValueError("step length and step time must be positive")

    @property
    def diffusion_D(self) -> float:
        return self.step_length_ell**2 / (4.0 * self.step_time_xi)

    @classmethod
    def from_diffusion(cls, diffusion_D: float, step_length_ell: float) -> "MobilityParams":
        """Walk with step ``ell`` whose continuum limit has diffusion constant D."""
        return cls(step_length_ell, step_length_ell**2 / (4.0 * diffusion_D))


@dataclass
class Trajectory:
    ue_id: int
    times: np.ndarray
    positions: np.ndarray  # shape (n, 2)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        if self.times.shape[0] != self.positions.shape[0]:
            raise ValueError("times and positions must have the same length")


@dataclass(frozen=True)
class PropagatorParams:
    mode_count: int = 40
    zero_kind: ZeroKind = ZeroKind.J1

    def __post_init__(self):
        if self.mode_count < 1:
            raise ValueError("mode_count must be >= 1")
        object.__setattr__(self, "zero_kind", ZeroKind.parse(self.zero_kind))


def _radius(position) -> np.ndarray:
    p = np.asarray(position, dtype=float)
    if p.shape[-1] != 2:
        raise ValueError("positions must have a trailing dimension of 2")
    return np.hypot(p[..., 0], p[..., 1])


def _check_inside(r: np.ndarray, R: float) -> None:
    if np.any(r > R * (1.0 + _EDGE_SLACK)):
        raise ValueError(f"position outside the cell of radius {R}")


def inverse_path_gain(position, geom: CellGeometry):
    """1/g(x) = |x|^beta + r0^beta."""
    r = _radius(position)
    _check_inside(r, geom.radius_R)
    out = r**geom.pathloss_beta + geom.cutoff_r0**geom.pathloss_beta
    return float(out) if out.ndim == 0 else out


def path_gain(position, geom: CellGeometry):
    """Distance-dependent gain g(x) = 1/(|x|^beta + r0^beta)."""
    inv = np.asarray(inverse_path_gain(position, geom))
    if np.any(inv == 0):
        raise ValueError("path gain diverges at the origin when r0 = 0")
    out = 1.0 / inv
    return float(out) if out.ndim == 0 else out


def sample_uniform_disk(rng: np.random.Generator, R: float, size=None) -> np.ndarray:
    """Uniform point(s) in the disk of radius R, shape ``size + (2,)``."""
    if not R > 0:
        raise ValueError("R must be positive")
    u = rng.random(size)
    angle = rng.random(size) * (2.0 * np.pi)
    rad = R * np.sqrt(u)
    return np.stack([rad * np.cos(angle), rad * np.sin(angle)], axis=-1)


def reflect_step(pos, cos_t, sin_t, ell: float, R: float) -> np.ndarray:
    """Move by ``ell`` along (cos_t, sin_t), reflecting specularly off |x| = R.

    Works elementwise on any batch shape.  The returned points satisfy
    |x| <= R exactly.
    """
    pos = np.asarray(pos, dtype=float)
    x = pos[..., 0] + ell * np.asarray(cos_t)
    y = pos[..., 1] + ell * np.asarray(sin_t)
    r2 = x * x + y * y
    out = np.stack(np.broadcast_arrays(x, y), axis=-1)
    exits = r2 > R * R
    if np.any(exits):
        if exits.ndim == 0:
            cx, cy = np.atleast_1d(cos_t), np.atleast_1d(sin_t)
            return _reflect_exiting(pos.reshape(1, 2), cx, cy, ell, R)[0]
        idx = np.nonzero(exits)
        cx = np.broadcast_to(cos_t, exits.shape)[idx]
        cy = np.broadcast_to(sin_t, exits.shape)[idx]
        out[idx] = _reflect_exiting(np.broadcast_to(pos, out.shape)[idx], cx, cy, ell, R)
    return out


def _reflect_exiting(pos: np.ndarray, ux: np.ndarray, uy: np.ndarray, ell: float, R: float):
    x = pos[:, 0].copy()
    y = pos[:, 1].copy()
    ux = ux.copy()
    uy = uy.copy()
    left = np.full(x.shape, float(ell))
    active = np.ones(x.shape, dtype=bool)
    for _ in range(_MAX_REFLECTIONS):
        i = np.nonzero(active)[0]
        if i.size == 0:
            break
        b = x[i] * ux[i] + y[i] * uy[i]
        c = x[i] * x[i] + y[i] * y[i] - R * R
        s = -b + np.sqrt(np.maximum(b * b - c, 0.0))
        s = np.maximum(s, 0.0)
        hit = s < left[i]
        move = np.where(hit, s, left[i])
        x[i] += move * ux[i]
        y[i] += move * uy[i]
        left[i] -= move
        h = i[hit]
        if h.size:
            # snap onto the circle, then mirror the direction about the tangent
            scale = R / np.hypot(x[h], y[h])
            x[h] *= scale
            y[h] *= scale
            nx, ny = x[h] / R, y[h] / R
            dot = ux[h] * nx + uy[h] * ny
            ux[h] -= 2.0 * dot * nx
            uy[h] -= 2.0 * dot * ny
            _skip_chords(x, y, ux, uy, left, h, R)
        active[i[~hit]] = False
    else:
        raise RuntimeError("reflection did not terminate")
    r2 = x * x + y * y
    over = r2 > R * R
    if np.any(over):
        shrink = (R / np.sqrt(r2[over])) * (1.0 - 4e-16)
        x[over] *= shrink
        y[over] *= shrink
    return np.stack([x, y], axis=-1)


def _skip_chords(x, y, ux, uy, left, h, R):
    """Advance walkers at the wall over all whole chords left in the step.

    Inside a circle every reflected chord has the same length and turns
    position and direction by the same angle, so grazing paths with many
    bounces cost one rotation instead of one iteration per bounce.
    """
    chord = np.maximum(-2.0 * (x[h] * ux[h] + y[h] * uy[h]), 0.0)
    tiny = chord <= 1e-12 * R
    n = np.where(tiny, 0.0, np.floor(left[h] / np.where(tiny, 1.0, chord)))
    x1 = x[h] + chord * ux[h]
    y1 = y[h] + chord * uy[h]
    turn = np.arctan2(x[h] * y1 - y[h] * x1, x[h] * x1 + y[h] * y1)
    # tangential limit: the walker slides along the wall for the rest of the step
    angle = np.where(tiny, np.sign(x[h] * uy[h] - y[h] * ux[h]) * left[h] / R, n * turn)
    left[h] = np.where(tiny, 0.0, left[h] - n * chord)
    ca, sa = np.cos(angle), np.sin(angle)
    x[h], y[h] = ca * x[h] - sa * y[h], sa * x[h] + ca * y[h]
    ux[h], uy[h] = ca * ux[h] - sa * uy[h], sa * ux[h] + ca * uy[h]


def step_random_walk(
    pos, rng: np.random.Generator, mob: MobilityParams, R: float, theta=None
) -> np.ndarray:
    """One random-walk step of length ell with a uniform direction."""
    pos = np.asarray(pos, dtype=float)
    _check_inside(_radius(pos), R)
    if theta is None:
        theta = rng.random(pos.shape[:-1]) * (2.0 * np.pi)
    return reflect_step(pos, np.cos(theta), np.sin(theta), mob.step_length_ell, R)


def make_trajectory(
    start, n_steps: int, mob: MobilityParams, R: float, rng: np.random.Generator, ue_id: int = 0
) -> Trajectory:
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    pos = np.asarray(start, dtype=float).reshape(2)
    _check_inside(_radius(pos), R)
    positions = np.empty((n_steps + 1, 2))
    positions[0] = pos
    theta = rng.random(n_steps) * (2.0 * np.pi)
    c, s = np.cos(theta), np.sin(theta)
    for j in range(n_steps):
        pos = reflect_step(pos, c[j], s[j], mob.step_length_ell, R)
        positions[j + 1] = pos
    return Trajectory(ue_id, np.arange(n_steps + 1) * mob.step_time_xi, positions)


def write_trajectories_csv(path, trajectories: Iterable[Trajectory]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ue_id", "t", "x", "y"])
        for tr in trajectories:
            for t, (x, y) in zip(tr.times, tr.positions):
                w.writerow([tr.ue_id, repr(float(t)), repr(float(x)), repr(float(y))])


@dataclass(frozen=True)
class RadialModes:
    """Angular-order-zero modes: wavenumbers, projections of r^beta, J0 at k."""

    k: np.ndarray
    phi: np.ndarray
    j0_at_k: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        # Var[r^beta]-share of each mode, in units of R^(2 beta)
        return self.phi**2 / self.j0_at_k**2


@functools.lru_cache(maxsize=32)
def radial_modes(zero_kind: ZeroKind, mode_count: int, beta: float) -> RadialModes:
    zero_kind = ZeroKind.parse(zero_kind)
    k = find_bessel_zeros(zero_kind, mode_count).as_array()
    spec = QuadratureSpec(abs_tol=1e-15, rel_tol=1e-11)
    phi = np.array([phi_coefficient(float(ki), beta, spec) for ki in k])
    return RadialModes(k, phi, np.asarray(bessel_j0(k)))


@functools.lru_cache(maxsize=256)
def _neumann_zeros(order: int, count: int) -> np.ndarray:
    return sp.jnp_zeros(order, count)


def required_mode_count(tau: float, rel: float = 1e-10) -> int:
    """Radial modes needed so the last term is below ``rel`` of the first at Dt/R^2 = tau."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    k_needed = math.sqrt(-math.log(rel) / tau)
    return max(1, int(math.ceil(k_needed / math.pi)) + 1)


def propagator(
    x, x0, t: float, geom: CellGeometry, mob: MobilityParams, pp: PropagatorParams | None = None
):
    """Transition density of reflected diffusion in the disk (zero radial flux at R).

    Sum over Neumann eigenmodes of all angular orders, ``pp.mode_count``
    radial modes each; angular orders stop once their slowest mode has
    decayed below 1e-16.
    """
    pp = pp or PropagatorParams()
    if not t > 0:
        raise ValueError("propagator requires t > 0")
    R = geom.radius_R
    x = np.asarray(x, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    r, r0 = _radius(x), _radius(x0)
    _check_inside(r, R)
    _check_inside(r0, R)
    dtheta = np.arctan2(x[..., 1], x[..., 0]) - np.arctan2(x0[..., 1], x0[..., 0])
    s, s0 = r / R, r0 / R
    tau = mob.diffusion_D * t / R**2
    area = np.pi * R**2

    total = np.full(np.broadcast(s, s0).shape, 1.0 / area)
    k0 = find_bessel_zeros(pp.zero_kind, pp.mode_count).as_array()
    k0 = k0[np.exp(-(k0**2) * tau) >= _DECAY_FLOOR]
    decay = np.exp(-(k0**2) * tau)
    j0k = np.asarray(bessel_j0(k0))
    terms = (
        np.asarray(bessel_j0(np.multiply.outer(s, k0)))
        * np.asarray(bessel_j0(np.multiply.outer(s0, k0)))
        * decay
        / j0k**2
    )
    total = total + terms.sum(axis=-1) / area

    m_max = int(math.ceil(math.sqrt(37.0 / tau))) + 1
    for m in range(1, m_max + 1):
        km = _neumann_zeros(m, pp.mode_count)
        decay = np.exp(-(km**2) * tau)
        if decay[0] < _DECAY_FLOOR:
            break
        # modes that have already decayed contribute nothing at double precision
        keep = decay >= _DECAY_FLOOR
        km, decay = km[keep], decay[keep]
        norm = (1.0 - m * m / km**2) * sp.jv(m, km) ** 2
        radial = sp.jv(m, np.multiply.outer(s, km)) * sp.jv(m, np.multiply.outer(s0, km))
        total = total + 2.0 * np.cos(m * dtheta) * (radial * decay / norm).sum(axis=-1) / area
    return float(total) if total.ndim == 0 else total


def radial_moment_covariance(
    t,
    t_prime,
    geom: CellGeometry,
    mob: MobilityParams,
    pp: PropagatorParams | None = None,
    *,
    form: str = "transient",
):
    """Covariance of |x(t)|^beta and |x(t')|^beta for a walker started uniformly.

    ``form="transient"`` is the start-averaged conditional covariance built
    from F(t - t') - F(t + t'); it vanishes at t = t' = 0 and grows towards
    the stationary variance.  ``form="stationary"`` keeps only the F(t - t')
    term, which is the unconditional covariance of a walker whose start is
    itself drawn uniformly.  Vectorised over t and t_prime.
    """
    pp = pp or PropagatorParams()
    if form not in ("transient", "stationary"):
        raise ValueError("form must be 'transient' or 'stationary'")
    t = np.asarray(t, dtype=float)
    tp = np.asarray(t_prime, dtype=float)
    if np.any(t < 0) or np.any(tp < 0):
        raise ValueError("times must be non-negative")
    R, beta = geom.radius_R, geom.pathloss_beta
    modes = radial_modes(pp.zero_kind, pp.mode_count, float(beta))
    rate = modes.k**2 * mob.diffusion_D / R**2
    lag = np.abs(t - tp)[..., None]
    cov = np.exp(-rate * lag)
    if form == "transient":
        cov = cov * -np.expm1(-rate * 2.0 * np.minimum(t, tp)[..., None])
    out = R ** (2 * beta) * (cov * modes.weights).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def stationary_radial_variance(geom: CellGeometry) -> float:
    """Var[|x|^beta] for x uniform in the disk."""
    b = geom.pathloss_beta
    return geom.radius_R ** (2 * b) * (1.0 / (b + 1.0) - 4.0 / (b + 2.0) ** 2)


def points_from_polar(r: Sequence[float], angle: Sequence[float]) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    angle = np.asarray(angle, dtype=float)
    return np.stack([r * np.cos(angle), r * np.sin(angle)], axis=-1)
