"""Command-line front end: ``mimo-energy {analyze,simulate,dimension,validate}``.

Every run writes ``manifest.json`` into the output directory before doing any
work; ``--manifest PATH`` replays a previous run from that file.

Exit codes: 0 success, 2 config error, 3 numerical failure, 4 validation failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, analytics, montecarlo
from .channel_engine import SystemConfig
from .special_math import gaussian_q_inv


EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VALIDATION = 0, 2, 3, 4
SAMPLES_SCHEMA = "energy-samples/1"
TRACES_SCHEMA = "power-traces/1"

REQUIRED_KEYS = ("K", "N", "rho", "beta", "r0", "R", "ell", "xi", "T")
OPTIONAL_KEYS = ("sigma2", "time_step", "fading_mode", "tau_d", "zero_kind", "mode_count")
_INT_KEYS = {"K", "N", "mode_count"}
_STR_KEYS = {"fading_mode", "zero_kind"}


class ConfigError(ValueError):
    pass


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, value = line.split("=", 1)
        elif ":" in line:
            key, value = line.split(":", 1)
        else:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = key.strip(), value.strip()
        if key not in REQUIRED_KEYS and key not in OPTIONAL_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    missing = [k for k in REQUIRED_KEYS if k not in raw]
    if missing:
        raise ConfigError(f"missing required field(s): {', '.join(missing)}")
    out: dict = {}
    for key, value in raw.items():
        try:
            if key in _INT_KEYS:
                out[key] = int(value)
            elif key in _STR_KEYS:
                out[key] = value
            else:
                out[key] = float(value)
        except ValueError:
            raise ConfigError(f"field {key!r}: cannot parse {value!r}") from None
    return out


def config_from_dict(d: dict) -> SystemConfig:
    try:
        return SystemConfig.from_dict(d)
    except KeyError as exc:
        raise ConfigError(f"missing required field: {exc.args[0]}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> SystemConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_dict(parse_config_text(text))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not JSON serialisable: {type(o)}")


def write_samples_csv(path: Path, values) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "E_T"])
        for i, v in enumerate(values):
            w.writerow([i, repr(float(v))])


def read_samples_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "E_T" not in rows[0]:
        raise ConfigError(f"{path}: expected a samples CSV with columns trial,E_T")
    return np.array([float(r["E_T"]) for r in rows])


def write_traces_csv(path: Path, traces) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "t", "P"])
        for i, tr in enumerate(traces):
            for t, p in zip(tr.times, tr.power):
                w.writerow([i, repr(float(t)), repr(float(p))])


def _resolve(args) -> dict:
    """Merge --manifest (if any) with command-line flags into a run description."""
    run = {"config": None, "config_path": None, "seed": 0, "trials": 2000}
    if args.manifest:
        try:
            manifest = json.loads(Path(args.manifest).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read manifest {args.manifest}: {exc}") from None
        if manifest.get("subcommand") != args.command:
            raise ConfigError(
                f"manifest is for {manifest.get('subcommand')!r}, not {args.command!r}"
            )
        run.update({k: manifest.get(k, run.get(k)) for k in manifest})
    if getattr(args, "config", None):
        run["config_path"] = str(args.config)
        run["config"] = load_config(args.config).to_dict()
    for key in ("seed", "trials", "epsilon", "mean", "variance", "samples", "sweep", "workers"):
        value = getattr(args, key, None)
        if value is not None:
            run[key] = value
    return run


def _write_manifest(out: Path, command: str, run: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "subcommand": command,
        "config_path": run.get("config_path"),
        "config": run.get("config"),
        "seed": run.get("seed"),
        "trials": run.get("trials"),
        "output_dir": str(out),
        "toolkit_version": __version__,
    }
    for key in ("epsilon", "mean", "variance", "samples", "sweep"):
        if run.get(key) is not None:
            manifest[key] = run[key]
    _write_json(out / "manifest.json", manifest)


def _require_config(run: dict) -> SystemConfig:
    if run.get("config") is None:
        raise ConfigError("a --config file (or --manifest) is required")
    return config_from_dict(run["config"])


def _print_table(rows: list[tuple[str, object]]) -> None:
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        v = f"{v:.6g}" if isinstance(v, float) else v
        print(f"{k:<{width}}  {v}")


def cmd_analyze(run: dict, out: Path) -> int:
    cfg = _require_config(run)
    report = analytics.theory_report(cfg)
    report["toolkit_version"] = __version__
    _write_json(out / "theory.json", report)
    _print_table(
        [
            ("achievable rate [bit/s/Hz]", report["achievable_rate_bits_per_hz"]),
            ("mean energy", report["mean_energy"]),
            ("variance (mobility, A2)", report["variance_mobility"]),
            ("variance (fading, A1)", report["variance_fading"]),
            ("variance (total)", report["variance_total"]),
            ("Theta", report["theta"]["total"]),
            ("Theta terms", report["theta"]["n_terms"]),
        ]
    )
    print("\n  i          k_i          phi_i      term")
    for row in report["theta"]["terms"][:10]:
        print(f"{row['i']:3d} {row['k']:12.7f} {row['phi']:14.6e} {row['term']:10.3e}")
    return EXIT_OK


def cmd_simulate(run: dict, out: Path, verbose: bool) -> int:
    cfg = _require_config(run)
    if int(run["trials"]) < 1:
        raise ConfigError("--trials must be >= 1")
    samples = montecarlo.run_trials(
        cfg, int(run["trials"]), int(run["seed"]), run.get("workers", 1), keep_traces=verbose
    )
    write_samples_csv(out / "samples.csv", samples.values)
    if verbose and samples.traces is not None:
        write_traces_csv(out / "traces.csv", samples.traces)
    body = {
        "schema": SAMPLES_SCHEMA,
        "cfg_digest": samples.cfg_digest,
        "master_seed": samples.master_seed,
        "n_trials": samples.n_trials,
        "toolkit_version": __version__,
    }
    if samples.n_trials >= 2:
        s = montecarlo.summarize(samples)
        body["summary"] = s.to_dict()
        _print_table([("trials", s.n), ("mean", s.mean), ("variance", s.variance), ("KS p", s.ks_pvalue)])
    else:
        body["summary"] = None
        print(f"{samples.n_trials} trial(s); too few for a summary")
    _write_json(out / "summary.json", body)
    return EXIT_OK


def cmd_dimension(run: dict, out: Path) -> int:
    eps = run.get("epsilon")
    if eps is None:
        raise ConfigError("--epsilon is required")
    if not 0.0 < float(eps) < 1.0:
        raise ConfigError(f"epsilon must lie in (0, 1), got {eps}")
    eps = float(eps)
    report: dict = {"epsilon": eps, "toolkit_version": __version__}
    cfg = None
    if (run.get("mean") is None) != (run.get("variance") is None):
        raise ConfigError("--mean and --variance must be given together")
    if run.get("mean") is not None:
        if not float(run["variance"]) > 0:
            raise ConfigError("--variance must be positive")
        m = analytics.MomentPair.from_mean_variance(run["mean"], run["variance"])
        report["moments_source"] = "override"
    else:
        cfg = _require_config(run)
        m = analytics.moments(cfg)
        report["moments_source"] = "analytic"
        report["cfg_digest"] = cfg.digest()
    eta = analytics.battery_requirement(eps, m)
    report.update(
        {
            "mean_energy": m.mean_energy,
            "variance_total": m.variance_total,
            "q_inv_epsilon": gaussian_q_inv(eps),
            "eta_analytic": eta,
            "outage_at_eta": analytics.outage_probability(eta, m),
        }
    )
    rows = [("mean energy", m.mean_energy), ("variance", m.variance_total), ("eta (Gaussian)", eta)]
    if run.get("samples"):
        values = read_samples_csv(run["samples"])
        eta_emp = float(np.quantile(values, 1.0 - eps))
        report["eta_empirical"] = eta_emp
        report["eta_empirical_n"] = int(values.size)
        report["eta_rel_difference"] = abs(eta_emp - eta) / eta
        rows.append(("eta (empirical quantile)", eta_emp))
    _write_json(out / "dimension.json", report)
    _print_table(rows)
    return EXIT_OK


def cmd_validate(run: dict, out: Path) -> int:
    cfg = _require_config(run)
    if int(run["trials"]) < 8:
        raise ConfigError("validate needs --trials >= 8 for the normality test")
    workers = run.get("workers", 1)
    samples = montecarlo.run_trials(cfg, int(run["trials"]), int(run["seed"]), workers)
    write_samples_csv(out / "samples.csv", samples.values)
    report = montecarlo.validate_theorem1(cfg, samples=samples)
    report["toolkit_version"] = __version__
    if run.get("sweep"):
        ells = [float(v) for v in str(run["sweep"]).split(",") if v.strip()]
        report["step_size_sweep"] = montecarlo.step_size_sweep(
            cfg, ells, int(run["trials"]), int(run["seed"]), workers
        )
    with open(out / "histogram.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lo", "hi", "count", "expected_normal"])
        for r in report["histogram"]:
            w.writerow([r["lo"], r["hi"], r["count"], r["expected_normal"]])
    with open(out / "tail.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha", "empirical", "theory"])
        for r in report["tail_curve"]:
            w.writerow([r["alpha"], r["empirical"], r["theory"]])
    _write_json(out / "validation.json", report)
    _print_table(
        [
            ("mean (sim / theory)", f"{report['summary']['mean']:.6g} / {report['theory']['mean_energy']:.6g}"),
            ("variance (sim / theory)", f"{report['summary']['variance']:.6g} / {report['theory']['variance_total']:.6g}"),
            ("KS p-value", report["ks"]["p_value"]),
            ("passed", report["passed"]),
        ]
    )
    print("\nreference comparison (reference / closed form):")
    for row in report["reference_comparison"]:
        print(f"  {row['label']:<24} mean x{row['mean_ratio']:.3f}  variance x{row['variance_ratio']:.3f}")
    return EXIT_OK if report["passed"] else EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mimo-energy", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, trials=False):
        sp.add_argument("--config", type=Path, help="flat key = value config file")
        sp.add_argument("--manifest", type=Path, help="replay a previous run")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        sp.add_argument("--verbose", action="store_true")
        if trials:
            sp.add_argument("--trials", type=int)
            sp.add_argument("--seed", type=int)
            sp.add_argument("--workers", type=int, help="processes (0 = one per CPU)")

    common(sub.add_parser("analyze", help="closed-form moments and Theta table"))
    common(sub.add_parser("simulate", help="Monte-Carlo energy samples"), trials=True)
    d = sub.add_parser("dimension", help="battery level for an outage budget")
    common(d)
    d.add_argument("--epsilon", type=float)
    d.add_argument("--samples", type=Path, help="samples CSV for an empirical quantile")
    d.add_argument("--mean", type=float, help="override the mean energy")
    d.add_argument("--variance", type=float, help="override the energy variance")
    v = sub.add_parser("validate", help="simulation versus closed-form report")
    common(v, trials=True)
    v.add_argument("--sweep", help="comma-separated walk step lengths at fixed D")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    out: Path = args.out
    try:
        run = _resolve(args)
        if "samples" in run and run["samples"] is not None:
            run["samples"] = str(run["samples"])
        _write_manifest(out, args.command, run)
        if args.command == "analyze":
            return cmd_analyze(run, out)
        if args.command == "simulate":
            return cmd_simulate(run, out, args.verbose)
        if args.command == "dimension":
            return cmd_dimension(run, out)
        return cmd_validate(run, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, np.linalg.LinAlgError, montecarlo.TrialFailedError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
