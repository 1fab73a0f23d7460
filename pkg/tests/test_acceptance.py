"""Acceptance suite: one timed check per criterion, each reporting PASS or FAIL."""

import json
import os
import time

import numpy as np
import pytest
import scipy.special
from conftest import make_cfg, record_acceptance

from mimo_energy import analytics, cli, montecarlo, special_math
from mimo_energy.cell_model import (
    CellGeometry,
    MobilityParams,
    PropagatorParams,
    path_gain,
    radial_moment_covariance,
    reflect_step,
    sample_uniform_disk,
)
from mimo_energy.channel_engine import channel_matrix, hardened_power, sample_fading, zf_power
from mimo_energy.special_math import (
    ZeroKind,
    bessel_j1,
    bessel_j1_prime,
    find_bessel_zeros,
    gaussian_q,
    gaussian_q_inv,
    phi_coefficient,
)

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def test_special_functions():
    special_math._zero_table.cache_clear()  # time a cold start
    t0 = time.perf_counter()
    z1 = find_bessel_zeros(ZeroKind.J1, 10).as_array()
    z1p = find_bessel_zeros(ZeroKind.J1_PRIME, 10).as_array()
    res_j1 = float(np.max(np.abs(bessel_j1(z1))))
    res_j1p = float(np.max(np.abs(bessel_j1_prime(z1p))))
    ks = [0.5, 1.0, 2.7, *z1[:3], 9.3, 21.0]
    phi_err = max(abs(phi_coefficient(float(k), 0.0) - 2 * scipy.special.j1(k) / k) for k in ks)
    ps = [1e-12, 1e-8, 1e-4, 0.01, 0.2, 0.5, 0.8, 0.99, 1 - 1e-6]
    q_err = max(abs(gaussian_q(gaussian_q_inv(p)) - p) / p for p in ps)
    elapsed = time.perf_counter() - t0
    ok = res_j1 <= 1e-10 and res_j1p <= 1e-10 and phi_err <= 1e-10 and q_err <= 1e-9 and elapsed < 1.0
    record_acceptance(
        1, ok,
        f"|J1(zeros)| max {res_j1:.1e}, |J1'(zeros)| max {res_j1p:.1e}, "
        f"phi(beta=0) error {phi_err:.1e}, Q round-trip rel error {q_err:.1e}",
        elapsed, 1.0,
    )
    assert ok


def test_inverse_wishart_hardening():
    t0 = time.perf_counter()
    K, N, rho, draws = 16, 32, 1.0, 5000
    cfg = make_cfg(K=K, N=N, rho=rho)
    rng = np.random.default_rng(2024)
    pos = sample_uniform_disk(rng, 1.0, K)
    g = path_gain(pos, cfg.geom)
    H = channel_matrix(sample_fading(rng, K, N, size=(draws,)), pos, cfg.geom)
    p = zf_power(H, rho)
    mc = float(p.mean())
    exact = rho * float(np.sum(1.0 / g)) / (N - K)
    hard = hardened_power(pos, cfg)
    err_exact = abs(mc - exact) / exact
    err_hard = abs(mc - hard) / hard
    elapsed = time.perf_counter() - t0
    ok = err_exact <= 0.02 and err_hard <= 0.08 and elapsed < 30.0
    record_acceptance(
        2, ok,
        f"MC mean {mc:.5g} vs finite-K {exact:.5g} ({100 * err_exact:.2f}% <= 2%), "
        f"vs hardened {hard:.5g} ({100 * err_hard:.2f}% <= 8%)",
        elapsed, 30.0,
    )
    assert ok


def _walk_covariances(tau, rng, starts=10_000, replicas=10, steps=1600):
    """Brute-force covariance of r^4 at (t, t) and (t, t/2) with Dt/R^2 = tau.

    Each uniform start is followed by ``replicas`` independent walks; the
    within-start covariance averaged over starts estimates the covariance
    conditional on the start, averaged over uniform starts.
    """
    ell = np.sqrt(4.0 * tau / steps)
    mob = MobilityParams(ell, 1.0)  # D = ell^2 / 4, t = steps
    start = sample_uniform_disk(rng, 1.0, starts)
    pos = np.repeat(start[:, None, :], replicas, axis=1)
    half = steps // 2
    rec = {}
    for j in range(1, steps + 1):
        theta = rng.random((starts, replicas)) * (2.0 * np.pi)
        pos = reflect_step(pos, np.cos(theta), np.sin(theta), ell, 1.0)
        if j in (half, steps):
            rec[j] = (pos[..., 0] ** 2 + pos[..., 1] ** 2) ** 2
    out = []
    for a, b, t, tp in ((rec[steps], rec[steps], steps, steps), (rec[steps], rec[half], steps, half)):
        da = a - a.mean(axis=1, keepdims=True)
        db = b - b.mean(axis=1, keepdims=True)
        per_start = (da * db).sum(axis=1) / (replicas - 1)
        est = float(per_start.mean())
        se = float(per_start.std(ddof=1) / np.sqrt(starts))
        out.append((float(t), float(tp), est, se))
    return mob, out


def test_mobility_covariance_oracle():
    t0 = time.perf_counter()
    geom = CellGeometry(1.0, 0.1, 4.0)
    rng = np.random.default_rng(99)
    worst = {ZeroKind.J1: 0.0, ZeroKind.J1_PRIME: 0.0}
    rows = []
    for tau in (0.05, 0.2, 1.0):
        mob, points = _walk_covariances(tau, rng)
        for t, tp, est, se in points:
            for kind in worst:
                theory = radial_moment_covariance(t, tp, geom, mob, PropagatorParams(60, kind))
                z = abs(est - theory) / se
                worst[kind] = max(worst[kind], z)
                rows.append((tau, t, tp, kind.value, est, theory, z))
    elapsed = time.perf_counter() - t0
    for r in rows:
        print("tau=%.2f t=%g t'=%g %-16s sim %.6g theory %.6g  |z| %.2f" % r)
    ok = worst[ZeroKind.J1] <= 3.0 and elapsed < 120.0
    record_acceptance(
        3, ok,
        f"10^5 walks per Dt/R^2 in {{0.05, 0.2, 1}}: ZerosOfJ1 max |z| {worst[ZeroKind.J1]:.2f} <= 3; "
        f"losing kind ZerosOfJ1Prime max |z| {worst[ZeroKind.J1_PRIME]:.3g}",
        elapsed, 120.0,
    )
    assert ok
    assert worst[ZeroKind.J1_PRIME] > 3.0


def test_route_equivalence():
    analytics._PHI_CACHE.clear()
    t0 = time.perf_counter()
    cfg = make_cfg()
    assert cfg.mob.diffusion_D == pytest.approx(0.25)
    via_theta = analytics.variance_mobility(cfg)
    via_cov = analytics.variance_mobility_from_covariance(cfg)
    rel = abs(via_theta - via_cov) / via_cov
    elapsed = time.perf_counter() - t0
    ok = rel <= 0.01 and elapsed < 10.0
    record_acceptance(
        4, ok,
        f"A2 via Theta {via_theta:.9g}, via covariance integral {via_cov:.9g}, rel diff {rel:.1e} <= 1%",
        elapsed, 10.0,
    )
    assert ok


@pytest.mark.slow
def test_gaussian_limit_at_desk_scale():
    t0 = time.perf_counter()
    cfg = cli.load_config(os.path.join(ROOT, "configs", "validation.cfg"))
    assert (cfg.K, cfg.N, cfg.geom.pathloss_beta, cfg.fading_mode.value) == (64, 128, 4.0, "Hardened")
    rep = montecarlo.validate_theorem1(cfg, n_trials=2000, seed=7)
    elapsed = time.perf_counter() - t0
    ok = (
        rep["mean_rel_error"] <= 0.05
        and rep["variance_rel_error"] <= 0.15
        and rep["ks"]["p_value"] > 0.01
        and elapsed < 300.0
    )
    record_acceptance(
        5, ok,
        f"2000 trials: mean error {100 * rep['mean_rel_error']:.2f}% <= 5%, "
        f"variance error {100 * rep['variance_rel_error']:.2f}% <= 15%, KS p {rep['ks']['p_value']:.3f} > 0.01",
        elapsed, 300.0,
    )
    for row in rep["reference_comparison"]:
        print(f"reference {row['label']}: mean ratio {row['mean_ratio']:.3f}, variance ratio {row['variance_ratio']:.3f}")
    assert ok


def test_battery_dimensioning(tmp_path):
    t0 = time.perf_counter()
    out = tmp_path / "dim"
    code = cli.main(
        ["dimension", "--mean", "1.73e3", "--variance", "5.65e4", "--epsilon", "0.01", "--out", str(out)]
    )
    eta = json.loads((out / "dimension.json").read_text())["eta_analytic"]
    direct = analytics.battery_requirement(0.01, analytics.MomentPair.from_mean_variance(1.73e3, 5.65e4))
    elapsed = time.perf_counter() - t0
    ok = code == 0 and 2.27e3 <= eta <= 2.29e3 and eta == direct and elapsed < 1.0
    record_acceptance(6, ok, f"eta = {eta:.5g} J in [2.27e3, 2.29e3]", elapsed, 1.0)
    assert ok


def test_determinism_across_workers(tmp_path):
    t0 = time.perf_counter()
    cfg_path = tmp_path / "det.cfg"
    cfg_path.write_text(
        "K = 16\nN = 32\nrho = 1\nbeta = 4\nr0 = 0.1\nR = 1\nell = 0.05\nxi = 0.0025\nT = 10\n"
    )
    first = tmp_path / "first"
    assert cli.main(["simulate", "--config", str(cfg_path), "--trials", "48", "--seed", "31", "--out", str(first)]) == 0
    manifest = str(first / "manifest.json")
    max_workers = max(2, os.cpu_count() or 1)
    outputs = {}
    for workers in (1, max_workers):
        for rep in (0, 1):
            out = tmp_path / f"w{workers}_{rep}"
            assert cli.main(["simulate", "--manifest", manifest, "--workers", str(workers), "--out", str(out)]) == 0
            outputs[(workers, rep)] = (out / "samples.csv").read_bytes()
    reference = (first / "samples.csv").read_bytes()
    identical = all(blob == reference for blob in outputs.values())
    elapsed = time.perf_counter() - t0
    ok = identical and elapsed < 60.0
    record_acceptance(
        7, ok,
        f"samples.csv byte-identical across manifest replays at 1 and {max_workers} workers "
        f"({len(outputs) + 1} runs, {len(reference)} bytes)",
        elapsed, 60.0,
    )
    assert ok


def test_horizon_linearity():
    t0 = time.perf_counter()
    # D = 0.5 so that D T / R^2 = 5 at T = 10
    mob = MobilityParams(0.05, 0.00125)
    a = analytics.moments(make_cfg(mob=mob, horizon_T=10.0))
    b = analytics.moments(make_cfg(mob=mob, horizon_T=20.0))
    mean_ratio = b.mean_energy / a.mean_energy
    var_ratio = b.variance_mobility / a.variance_mobility
    elapsed = time.perf_counter() - t0
    ok = abs(mean_ratio - 2.0) <= 0.04 and abs(var_ratio - 2.0) <= 0.04 and elapsed < 5.0
    record_acceptance(
        8, ok,
        f"DT/R^2 = 5: mean ratio {mean_ratio:.4f}, A2 ratio {var_ratio:.4f} (2.0 within 2%)",
        elapsed, 5.0,
    )
    assert ok
