"""Repeated energy trials, sample summaries, and theory-versus-simulation reports."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import analytics
from .channel_engine import EnergyTrace, SystemConfig, simulate_energy_batch
from .special_math import gaussian_q, ks_normality

__all__ = [
    "EnergySamples",
    "MomentSummary",
    "TrialFailedError",
    "trial_rng",
    "run_trials",
    "summarize",
    "validate_theorem1",
    "step_size_sweep",
    "CHUNK_TRIALS",
]

# Trials are always simulated in these fixed index blocks, so the arithmetic
# done for trial i never depends on how many workers are used.
CHUNK_TRIALS = 16
Z95 = 1.959963984540054


class TrialFailedError(RuntimeError):
    def __init__(self, trial: int, cause: Exception):
        super().__init__(f"trial {trial} failed: {cause}")
        self.trial = trial
        self.cause = cause


@dataclass
class EnergySamples:
    values: np.ndarray
    master_seed: int
    n_trials: int
    cfg_digest: str
    traces: list[EnergyTrace] | None = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.n_trials,):
            raise ValueError("values length must equal n_trials")


@dataclass(frozen=True)
class MomentSummary:
    n: int
    mean: float
    variance: float
    mean_ci95: tuple[float, float]
    variance_ci95: tuple[float, float]
    ks_stat: float
    ks_pvalue: float

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mean": self.mean,
            "variance": self.variance,
            "mean_ci95": list(self.mean_ci95),
            "variance_ci95": list(self.variance_ci95),
            # NaN (too few samples) is not valid JSON
            "ks_stat": None if math.isnan(self.ks_stat) else self.ks_stat,
            "ks_pvalue": None if math.isnan(self.ks_pvalue) else self.ks_pvalue,
        }


def trial_rng(master_seed: int, trial: int) -> np.random.Generator:
    """Independent counter-based stream for one trial."""
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(trial),))
    return np.random.Generator(np.random.Philox(seq))


def _run_chunk(cfg: SystemConfig, master_seed: int, first: int, last: int, keep_traces: bool):
    rngs = [trial_rng(master_seed, i) for i in range(first, last)]
    try:
        traces = simulate_energy_batch(cfg, rngs)
    except Exception:
        # find the culprit by replaying trials one at a time
        traces = []
        for i in range(first, last):
            try:
                traces.extend(simulate_energy_batch(cfg, [trial_rng(master_seed, i)]))
            except Exception as exc:
                raise TrialFailedError(i, exc) from exc
    energies = [t.energy for t in traces]
    return first, energies, (traces if keep_traces else None)


def run_trials(
    cfg: SystemConfig,
    n_trials: int,
    master_seed: int,
    workers: int = 1,
    keep_traces: bool = False,
) -> EnergySamples:
    """Simulate ``n_trials`` independent energy realisations.

    Trial i draws only from ``trial_rng(master_seed, i)``; output is
    bitwise identical for any ``workers`` (0 means one per CPU).
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if workers == 0:
        workers = os.cpu_count() or 1
    bounds = [(a, min(n_trials, a + CHUNK_TRIALS)) for a in range(0, n_trials, CHUNK_TRIALS)]
    values = np.empty(n_trials)
    traces: list | None = [None] * n_trials if keep_traces else None

    def collect(result):
        first, energies, chunk_traces = result
        values[first : first + len(energies)] = energies
        if traces is not None:
            traces[first : first + len(energies)] = chunk_traces

    if workers <= 1 or len(bounds) == 1:
        for a, b in bounds:
            collect(_run_chunk(cfg, master_seed, a, b, keep_traces))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_chunk, cfg, master_seed, a, b, keep_traces) for a, b in bounds]
            for fut in futures:
                collect(fut.result())
    return EnergySamples(values, int(master_seed), n_trials, cfg.digest(), traces)


def summarize(samples: EnergySamples | np.ndarray) -> MomentSummary:
    """Sample moments with normal-approximation 95% intervals and a KS shape test.

    The KS fields are NaN below the 8 samples the test needs.
    """
    x = samples.values if isinstance(samples, EnergySamples) else np.asarray(samples, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("summarize needs at least 2 samples")
    mean = float(np.mean(x))
    var = float(np.var(x, ddof=1))
    if not var > 0:
        raise ValueError("degenerate samples: zero variance")
    half = Z95 * math.sqrt(var / n)
    m4 = float(np.mean((x - mean) ** 4))
    var_of_var = max((m4 - var * var * (n - 3) / (n - 1)) / n, 0.0)
    vhalf = Z95 * math.sqrt(var_of_var)
    ks_stat = ks_p = math.nan
    if n >= 8:
        ks = ks_normality(x)
        ks_stat, ks_p = ks.statistic, ks.p_value
    return MomentSummary(
        n, mean, var, (mean - half, mean + half), (max(0.0, var - vhalf), var + vhalf),
        ks_stat, ks_p,
    )


def _histogram(z: np.ndarray, bins: int = 40, span: float = 4.0) -> list[dict]:
    edges = np.linspace(-span, span, bins + 1)
    counts, _ = np.histogram(z, bins=edges)
    rows = []
    for lo, hi, c in zip(edges[:-1], edges[1:], counts):
        expected = z.size * (gaussian_q(lo) - gaussian_q(hi))
        rows.append({"lo": float(lo), "hi": float(hi), "count": int(c), "expected_normal": expected})
    return rows


def tail_curve(values: np.ndarray, cfg: SystemConfig, m: analytics.MomentPair, points: int = 41):
    """Empirical and Gaussian Pr(E_T / T > alpha) on a grid around the mean."""
    T = cfg.horizon_T
    center, spread = m.mean_energy / T, 4.0 * m.std / T
    alphas = np.linspace(center - spread, center + spread, points)
    per_time = np.sort(values / T)
    rows = []
    for a in alphas:
        emp = 1.0 - np.searchsorted(per_time, a, side="right") / per_time.size
        rows.append(
            {
                "alpha": float(a),
                "empirical": float(emp),
                "theory": analytics.outage_probability(a * T, m),
            }
        )
    return rows


def validate_theorem1(
    cfg: SystemConfig,
    n_trials: int = 2000,
    seed: int = 0,
    workers: int = 1,
    samples: EnergySamples | None = None,
    mean_tol: float = 0.05,
    var_tol: float = 0.15,
    ks_alpha: float = 0.01,
) -> dict:
    """Compare simulated energies with the Gaussian large-system prediction."""
    if samples is None:
        samples = run_trials(cfg, n_trials, seed, workers)
    summary = summarize(samples)
    m = analytics.moments(cfg)
    mean_err = abs(summary.mean - m.mean_energy) / m.mean_energy
    var_err = abs(summary.variance - m.variance_total) / m.variance_total
    z_theory = (samples.values - m.mean_energy) / m.std
    ks_theory = ks_normality(samples.values, loc=m.mean_energy, scale=m.std)
    checks = {
        "mean_within_tol": mean_err <= mean_tol,
        "variance_within_tol": var_err <= var_tol,
        "ks_normal": summary.ks_pvalue > ks_alpha,
    }
    return {
        "cfg_digest": cfg.digest(),
        "inputs": cfg.to_dict(),
        "n_trials": samples.n_trials,
        "master_seed": samples.master_seed,
        "summary": summary.to_dict(),
        "theory": {
            "mean_energy": m.mean_energy,
            "variance_mobility": m.variance_mobility,
            "variance_fading": m.variance_fading,
            "variance_total": m.variance_total,
        },
        "mean_rel_error": mean_err,
        "variance_rel_error": var_err,
        "ks": {"statistic": summary.ks_stat, "p_value": summary.ks_pvalue},
        "ks_theory_standardized": {"statistic": ks_theory.statistic, "p_value": ks_theory.p_value},
        "tolerances": {"mean": mean_tol, "variance": var_tol, "ks_alpha": ks_alpha},
        "checks": checks,
        "passed": all(checks.values()),
        "histogram": _histogram(z_theory),
        "tail_curve": tail_curve(samples.values, cfg, m),
        "reference_comparison": analytics.reference_comparison(cfg),
    }


def step_size_sweep(
    cfg: SystemConfig, step_lengths, n_trials: int, seed: int, workers: int = 1
) -> list[dict]:
    """Re-run with shorter walk steps at fixed diffusion constant."""
    D = cfg.mob.diffusion_D
    m = analytics.moments(cfg)
    rows = []
    for ell in step_lengths:
        mob = type(cfg.mob).from_diffusion(D, float(ell))
        c = cfg.with_(mob=mob, time_step=mob.step_time_xi)
        s = summarize(run_trials(c, n_trials, seed, workers))
        rows.append(
            {
                "ell": float(ell),
                "xi": mob.step_time_xi,
                "mean": s.mean,
                "variance": s.variance,
                "mean_rel_error": abs(s.mean - m.mean_energy) / m.mean_energy,
                "variance_rel_error": abs(s.variance - m.variance_total) / m.variance_total,
            }
        )
    return rows
