"""Closed-form large-system moments of the transmit energy, outage, and battery sizing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cell_model import PropagatorParams, radial_moment_covariance
from .channel_engine import SystemConfig, achievable_rate
from .special_math import (
    QuadratureSpec,
    ZeroKind,
    bessel_j0,
    find_bessel_zeros,
    gaussian_q,
    gaussian_q_inv,
    integrate,
    phi_coefficient,
)

__all__ = [
    "ThetaTerm",
    "ThetaSeries",
    "MomentPair",
    "ThetaConvergenceError",
    "inverse_gain_moment",
    "mean_energy",
    "saturation_integral",
    "theta",
    "variance_mobility",
    "variance_mobility_from_covariance",
    "variance_fading",
    "moments",
    "outage_probability",
    "battery_requirement",
    "theory_report",
    "REFERENCE_TABLE",
    "reference_comparison",
]

MAX_THETA_TERMS = 500

# (zero kind, beta, quadrature tol) -> phi values in zero order, grown on demand
_PHI_CACHE: dict[tuple, list[float]] = {}

# Published mean/variance pairs for the validation scenarios, kept for side-by-side
# reporting only.  Shared constants: R=1, r0=0.1, rho=1, ell=0.05, xi=0.0025.
REFERENCE_TABLE = (
    {"label": "K=16 N=32 beta=4 T=2", "K": 16, "N": 32, "beta": 4.0, "T": 2.0, "mean": 1.33, "var": 0.015},
    {"label": "K=16 N=64 beta=4 T=2", "K": 16, "N": 64, "beta": 4.0, "T": 2.0, "mean": 0.889, "var": 0.0067},
    {"label": "K=16 N=32 beta=4 T=10", "K": 16, "N": 32, "beta": 4.0, "T": 10.0, "mean": 6.668, "var": 0.0891},
    {"label": "K=16 N=64 beta=4 T=10", "K": 16, "N": 64, "beta": 4.0, "T": 10.0, "mean": 4.445, "var": 0.0396},
    {"label": "K=64 N=128 beta=4 T=2", "K": 64, "N": 128, "beta": 4.0, "T": 2.0, "mean": 0.889, "var": 0.0067},
    {"label": "K=64 N=128 beta=6 T=2", "K": 64, "N": 128, "beta": 6.0, "T": 2.0, "mean": 1.0, "var": 0.0029},
    {"label": "K=64 N=128 beta=4 T=10", "K": 64, "N": 128, "beta": 4.0, "T": 10.0, "mean": 4.445, "var": 0.0396},
    {"label": "K=64 N=128 beta=6 T=10", "K": 64, "N": 128, "beta": 6.0, "T": 10.0, "mean": 5.0, "var": 0.0169},
)


class ThetaConvergenceError(ArithmeticError):
    def __init__(self, message: str, partial: "ThetaSeries"):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class ThetaTerm:
    k: float
    phi: float
    time_integral: float
    value: float


@dataclass
class ThetaSeries:
    zero_kind: ZeroKind
    terms: list[ThetaTerm]
    total: float
    truncation_bound: float

    def table(self) -> list[dict]:
        return [
            {"i": i + 1, "k": t.k, "phi": t.phi, "time_integral": t.time_integral, "term": t.value}
            for i, t in enumerate(self.terms)
        ]


@dataclass(frozen=True)
class MomentPair:
    mean_energy: float
    variance_mobility: float
    variance_fading: float = 0.0
    variance_total: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.variance_mobility < 0 or self.variance_fading < 0:
            raise ValueError("variances must be non-negative")
        total = self.variance_mobility + self.variance_fading
        if self.variance_total is None:
            object.__setattr__(self, "variance_total", total)
        elif not math.isclose(self.variance_total, total, rel_tol=1e-12, abs_tol=0.0):
            raise ValueError("variance_total must equal variance_mobility + variance_fading")

    @classmethod
    def from_mean_variance(cls, mean: float, variance: float) -> "MomentPair":
        return cls(float(mean), float(variance), 0.0)

    @property
    def std(self) -> float:
        return math.sqrt(self.variance_total)


def inverse_gain_moment(order: int, geom) -> float:
    """E[(1/g)^order] for a user uniform in the disk, order 1 or 2.

    With 1/g = r^b + r0^b and E[r^p] = 2 R^p / (p + 2) under the uniform
    density 2r/R^2 the expansion is exact.
    """
    R, r0, b = geom.radius_R, geom.cutoff_r0, geom.pathloss_beta
    if order == 1:
        return 2.0 * R**b / (b + 2.0) + r0**b
    if order == 2:
        return 2.0 * R ** (2 * b) / (2 * b + 2.0) + 4.0 * r0**b * R**b / (b + 2.0) + r0 ** (2 * b)
    raise ValueError("order must be 1 or 2")


def _printed_second_moment(geom) -> float:
    # Variant whose r^(2b) term lacks the factor 2; reported, never used.
    R, r0, b = geom.radius_R, geom.cutoff_r0, geom.pathloss_beta
    return R ** (2 * b) / (2 * b + 2.0) + 4.0 * r0**b * R**b / (b + 2.0) + r0 ** (2 * b)


def mean_energy(cfg: SystemConfig) -> float:
    return cfg.horizon_T * cfg.rho * cfg.load_factor * inverse_gain_moment(1, cfg.geom)


def saturation_integral(a: float) -> float:
    """int_0^1 (1 - exp(-a t))^2 dt."""
    if a < 0:
        raise ValueError("a must be non-negative")
    if a < 1.0:
        # alternating series sum_{n>=2} (-1)^n (2^n - 2) a^n / ((n+1) n!)
        total, fact, power = 0.0, 1.0, 1.0
        for n in range(1, 40):
            fact *= n
            power *= a
            if n >= 2:
                total += (-1) ** n * (2.0**n - 2.0) * power / ((n + 1) * fact)
        return total
    return 1.0 + 2.0 * math.expm1(-a) / a - math.expm1(-2.0 * a) / (2.0 * a)


def theta(
    cfg: SystemConfig,
    rel_tol: float = 1e-8,
    zero_kind: ZeroKind | str | None = None,
    max_terms: int = MAX_THETA_TERMS,
) -> ThetaSeries:
    """Mode sum of 2 phi_i^2 / (k_i^2 J0(k_i)^2) * int_0^1 (1 - e^{-a_i t})^2 dt.

    a_i = k_i^2 D T / R^2.  Summation stops once three consecutive terms fall
    below ``rel_tol`` times the partial sum and a power-law tail estimate is
    below ``rel_tol`` times the total.
    """
    if not rel_tol > 0:
        raise ValueError("rel_tol must be positive")
    kind = ZeroKind.parse(zero_kind if zero_kind is not None else cfg.zero_kind)
    zeros = find_bessel_zeros(kind, max_terms).as_array()
    scale = cfg.mob.diffusion_D * cfg.horizon_T / cfg.geom.radius_R**2
    quad_tol = min(1e-10, rel_tol * 0.1)
    phis = _PHI_CACHE.setdefault((kind, float(cfg.geom.pathloss_beta), quad_tol), [])

    terms: list[ThetaTerm] = []
    total = 0.0
    small_run = 0
    tail = math.inf
    for i, k in enumerate(zeros.tolist()):
        if i == len(phis):
            spec = QuadratureSpec(abs_tol=1e-18, rel_tol=quad_tol)
            phis.append(phi_coefficient(float(k), cfg.geom.pathloss_beta, spec))
        phi = phis[i]
        j0 = bessel_j0(k)
        ti = saturation_integral(k * k * scale)
        value = 2.0 * phi * phi / (k * k * j0 * j0) * ti
        terms.append(ThetaTerm(float(k), phi, ti, value))
        total += value
        small_run = small_run + 1 if value <= rel_tol * total else 0
        if small_run >= 3:
            tail = _tail_estimate(terms)
            if tail <= rel_tol * total:
                return ThetaSeries(kind, terms, total, tail)
    raise ThetaConvergenceError(
        f"Theta did not converge in {max_terms} terms: total={total:.6e}, "
        f"last term={terms[-1].value:.3e}, tail estimate={tail:.3e}",
        ThetaSeries(kind, terms, total, tail),
    )


def _tail_estimate(terms: list[ThetaTerm]) -> float:
    last, prev = terms[-1], terms[-2]
    if last.value == 0.0:
        return 0.0
    if prev.value <= last.value:
        return math.inf
    p = math.log(prev.value / last.value) / math.log(last.k / prev.k)
    if p <= 1.5:
        return math.inf
    # sum_{j > n} t_n (k_n / k_j)^p with zero spacing ~ pi
    return last.value * last.k / ((p - 1.0) * math.pi)


def _mobility_prefactor(cfg: SystemConfig) -> float:
    R, b = cfg.geom.radius_R, cfg.geom.pathloss_beta
    return (
        cfg.horizon_T * R**2 / (cfg.mob.diffusion_D * cfg.K)
        * cfg.rho**2 * cfg.load_factor**2 * R ** (2 * b)
    )


def variance_mobility(cfg: SystemConfig, series: ThetaSeries | None = None) -> float:
    """Energy variance from user motion, (T R^2 / (D K)) (rho c R^b / (1-c))^2 Theta."""
    series = series if series is not None else theta(cfg)
    return _mobility_prefactor(cfg) * series.total


def variance_mobility_from_covariance(
    cfg: SystemConfig, pp: PropagatorParams | None = None, rel_tol: float = 1e-6
) -> float:
    """Same variance by integrating the radial-moment covariance over [0, T]^2."""
    pp = pp or PropagatorParams(cfg.mode_count, cfg.zero_kind)
    geom, mob = cfg.geom, cfg.mob
    inner_spec = QuadratureSpec(abs_tol=1e-14, rel_tol=rel_tol * 0.1)
    outer_spec = QuadratureSpec(abs_tol=1e-14, rel_tol=rel_tol)

    def inner(t: float) -> float:
        if t <= 0.0:
            return 0.0
        return integrate(
            lambda tp: radial_moment_covariance(t, tp, geom, mob, pp), 0.0, t, inner_spec
        )

    double = 2.0 * integrate(
        lambda ts: np.array([inner(float(t)) for t in np.atleast_1d(ts)]),
        0.0,
        cfg.horizon_T,
        outer_spec,
    )
    return cfg.rho**2 * cfg.load_factor**2 / cfg.K * double


def variance_fading(cfg: SystemConfig) -> float:
    """Fast-fading share, T tau_d rho^2 c^3 / ((1-c)^3 K^2) E[1/g^2]."""
    c = cfg.c
    return (
        cfg.horizon_T * cfg.tau_d * cfg.rho**2 * c**3 / (1.0 - c) ** 3 / cfg.K**2
        * inverse_gain_moment(2, cfg.geom)
    )


def moments(cfg: SystemConfig, series: ThetaSeries | None = None) -> MomentPair:
    return MomentPair(mean_energy(cfg), variance_mobility(cfg, series), variance_fading(cfg))


def outage_probability(threshold_eta: float, moments: MomentPair) -> float:
    """Gaussian approximation of Pr(E_T > eta)."""
    if not moments.variance_total > 0:
        raise ValueError("outage probability needs a positive variance")
    return gaussian_q((threshold_eta - moments.mean_energy) / moments.std)


def battery_requirement(epsilon: float, moments: MomentPair) -> float:
    """Smallest battery level whose Gaussian outage probability is epsilon."""
    return moments.std * gaussian_q_inv(epsilon) + moments.mean_energy


def theory_report(cfg: SystemConfig, rel_tol: float = 1e-8) -> dict:
    series = theta(cfg, rel_tol)
    m = moments(cfg, series)
    alt_kind = ZeroKind.J1_PRIME if series.zero_kind is ZeroKind.J1 else ZeroKind.J1
    try:
        alt = theta(cfg, rel_tol, zero_kind=alt_kind, max_terms=40)
        alt_note = f"Theta with {alt_kind.value} (not used): {alt.total:.6g}"
    except ThetaConvergenceError as exc:
        alt_note = (
            f"Theta with {alt_kind.value} (not used) does not converge: "
            f"partial sum {exc.partial.total:.6g} after {len(exc.partial.terms)} terms"
        )
    notes = [
        "second inverse-gain moment uses E[r^(2b)] = 2R^(2b)/(2b+2); the variant "
        f"without the factor 2 would give {_printed_second_moment(cfg.geom):.6g} "
        f"instead of {inverse_gain_moment(2, cfg.geom):.6g}",
        alt_note,
        "variance_fading scales as 1/K^2 and variance_mobility as 1/K",
    ]
    return {
        "inputs": cfg.to_dict(),
        "cfg_digest": cfg.digest(),
        "c": cfg.c,
        "diffusion_D": cfg.mob.diffusion_D,
        "achievable_rate_bits_per_hz": achievable_rate(cfg.rho, cfg.sigma2),
        "mean_energy": m.mean_energy,
        "variance_mobility": m.variance_mobility,
        "variance_fading": m.variance_fading,
        "variance_total": m.variance_total,
        "std_total": m.std,
        "theta": {
            "zero_kind": series.zero_kind.value,
            "total": series.total,
            "truncation_bound": series.truncation_bound,
            "n_terms": len(series.terms),
            "terms": series.table(),
        },
        "notes": notes,
    }


def reference_comparison(cfg: SystemConfig) -> list[dict]:
    """Closed-form moments next to the published reference values.

    Each reference row is re-evaluated with its own K, N, beta, T and the
    remaining constants of ``cfg``.  Ratios far from 1 are expected: the
    reference means are not reproduced by the closed-form mean.
    """
    rows = []
    for ref in REFERENCE_TABLE:
        c = cfg.with_(
            K=ref["K"],
            N=ref["N"],
            horizon_T=ref["T"],
            geom=type(cfg.geom)(cfg.geom.radius_R, cfg.geom.cutoff_r0, ref["beta"]),
        )
        m = moments(c)
        rows.append(
            {
                "label": ref["label"],
                "reference_mean": ref["mean"],
                "reference_variance": ref["var"],
                "theory_mean": m.mean_energy,
                "theory_variance": m.variance_total,
                "mean_ratio": ref["mean"] / m.mean_energy,
                "variance_ratio": ref["var"] / m.variance_total,
            }
        )
    return rows
