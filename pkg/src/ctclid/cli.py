"""Command-line interface.

Exit codes: 0 success, 2 input error (config, schema, CSV), 3 numerical
divergence of the data-generating simulation, 4 optimizer stopped without
converging (outputs are still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, dump_config, load_config, scenario_to_config
from .estimation import EstimationError, default_starts, estimate, multi_start
from .harness import (
    BUILTIN_SCENARIOS,
    bode_table,
    generate_data,
    make_kind,
    pole_sensitivity_sweep,
    run_monte_carlo,
    trial_seed,
)
from .models import eigenvalues, realize_ccf
from .placement import PlacementError, PoleSet, observer_gain
from .predictors import FixedPoleObserver
from .simulate import DataSet, DivergenceError, SimulationError

logger = logging.getLogger("ctclid")

EXIT_OK, EXIT_INPUT, EXIT_DIVERGENCE, EXIT_NOT_CONVERGED = 0, 2, 3, 4

# Relative tolerance when comparing a data file's sampling interval with the config.
H_RTOL = 1e-6
# Free-gain fits whose gain exceeds the placed gain by this factor are flagged.
TRIVIAL_GAIN_RATIO = 100.0


class InputError(Exception):
    pass


def _write_rows(path: Path, rows: list, columns=None):
    if columns is None:
        columns = []
        for r in rows:
            for k in r:
                if k not in columns:
                    columns.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


def _write_columns(path: Path, cols: dict):
    names = list(cols)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*(cols[n] for n in names)):
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def _emit(obj):
    json.dump(obj, sys.stdout, indent=2, default=float)
    sys.stdout.write("\n")


def _outdir(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg.output_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    sc = cfg.scenario
    seed = trial_seed(sc.base_seed, args.trial)
    shadow = cfg.shadow and not args.no_shadow
    data = generate_data(sc, seed, shadow=shadow)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    data.to_csv(out, shadow=shadow)
    _emit({"data": str(out), "rows": data.N, "h": sc.h, "seed": seed, "shadow": shadow})
    return EXIT_OK


def _load_data(path, cfg: RunConfig) -> DataSet:
    try:
        data = DataSet.from_csv(path)
    except OSError as exc:
        raise InputError(f"cannot read data {path}: {exc}") from None
    except ValueError as exc:
        raise InputError(str(exc)) from None
    h = cfg.scenario.h
    if abs(data.h - h) > H_RTOL * h:
        raise InputError(f"data sampling interval {data.h!r} does not match config h = {h!r}")
    if data.N != cfg.scenario.N:
        raise InputError(f"data has {data.N} rows but config N = {cfg.scenario.N}")
    # use the configured interval exactly rather than the one recovered from t
    return DataSet(h, data.u, data.y, data.u0, data.y0)


def _free_gain_fit(cfg, spec, data, starts):
    """Fit the free-gain observer from the last start.

    The initial gain places the observer poles at ``pole_scale`` times the
    configured poles, so large scales give large but stable gains.
    """
    ms, sc = cfg.scenario.structure, cfg.scenario
    poles = spec.poles if spec.poles is not None else PoleSet([-3.0] * ms.n)
    theta0 = starts[-1]
    scale = cfg.pole_scale.get(spec.label, 1.0)
    K0 = observer_gain(realize_ccf(ms, theta0), PoleSet(poles.poles * scale)).K_x
    res = estimate(ms, data, make_kind(spec), theta0, sc.options, gain0=K0, hold=sc.hold)
    try:
        K_ref = observer_gain(realize_ccf(ms, res.theta), poles).K_x
        ratio = float(np.linalg.norm(res.gain) / np.linalg.norm(K_ref))
    except PlacementError:
        ratio = float("inf")
    ss = realize_ccf(ms, res.theta)
    obs = eigenvalues(ss.A - np.outer(res.gain, ss.C[0]))
    fastest = float(np.max(np.abs(obs)))
    nyquist = np.pi / data.h
    diag = {
        "initial_pole_scale": scale,
        "gain_ratio_to_placed": ratio,
        "fastest_observer_pole": fastest,
        "nyquist": nyquist,
        # a huge gain, or an observer faster than the data can resolve
        "trivial_solution_suspected": bool(ratio > TRIVIAL_GAIN_RATIO or fastest > nyquist),
    }
    return res, diag


def cmd_identify(args) -> int:
    cfg = load_config(args.config)
    sc = cfg.scenario
    data = _load_data(args.data, cfg)
    spec = sc.predictor(args.predictor)
    ms = sc.structure
    kind = make_kind(spec)
    diag = None
    if args.theta0 is not None:
        starts = [ms.check(args.theta0)]
    else:
        rank_kind = kind if spec.kind != "free_gain_observer" else FixedPoleObserver(
            spec.poles if spec.poles is not None else PoleSet([-3.0] * ms.n)
        )
        starts = default_starts(ms, data, rank_kind, sc.base_seed, sc.random_starts, sc.hold)
    if not starts:
        raise EstimationError("no feasible starting point")
    if spec.kind == "free_gain_observer":
        res, diag = _free_gain_fit(cfg, spec, data, starts)
    else:
        res = multi_start(ms, data, kind, starts, sc.options, hold=sc.hold, state_init="lstsq")
    report = {"config": str(args.config), "data": str(args.data), "predictor": spec.label, **res.summary()}
    report["starts"] = res.starts
    if diag is not None:
        report["diagnostics"] = diag
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2, default=float) + "\n")
    trace = out.with_name(out.stem + "_trace.csv")
    _write_rows(trace, [{"iteration": i, "cost": c} for i, c in enumerate(res.trace)])
    _emit({"report": str(out), "trace": str(trace), "theta": report["theta"], "cost": res.cost,
           "termination": res.termination, "converged": res.converged})
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def _stats_rows(stats) -> list:
    rows = []
    for name, vals in (("true", stats.theta_true), ("median", stats.median), ("q1", stats.q1),
                       ("q3", stats.q3), ("min", stats.minimum), ("max", stats.maximum),
                       ("median_relative_error", stats.median_relative_error())):
        rows.append({"statistic": name, **{f"theta_{i + 1}": float(v) for i, v in enumerate(vals)}})
    return rows


def _write_stats(out: Path, stats, prefix: str):
    _write_rows(out / f"{prefix}_trials.csv", stats.table())
    _write_rows(out / f"{prefix}_stats.csv", _stats_rows(stats))


def cmd_montecarlo(args) -> int:
    cfg = load_config(args.config)
    sc = cfg.scenario
    out = _outdir(args, cfg)
    labels = [args.predictor] if args.predictor else [p.label for p in sc.predictors]
    summaries = []
    for label in labels:
        stats = run_monte_carlo(sc, args.trials, label, args.workers or cfg.workers)
        _write_stats(out, stats, stats.predictor)
        summaries.append(stats.summary())
    _emit({"output": str(out), "results": summaries})
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    sc = cfg.scenario
    out = _outdir(args, cfg)
    parts = args.real_parts or list(cfg.sweep_real_parts)
    rows = pole_sensitivity_sweep(sc, parts, args.trials, args.predictor, args.workers or cfg.workers)
    table = []
    for r in rows:
        _write_stats(out, r["stats"], f"sweep_{r['real_part']:g}")
        table.append({"real_part": r["real_part"], "failed": r["failed"],
                      **{f"median_theta_{i + 1}": float(v) for i, v in enumerate(r["median"])}})
    _write_rows(out / "sweep.csv", table)
    _emit({"output": str(out), "sweep": table})
    return EXIT_OK


def _read_estimates(path: Path, n_params: int) -> list:
    try:
        if path.suffix == ".json":
            doc = json.loads(path.read_text())
            return [np.asarray(doc["theta"], dtype=float)]
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"cannot read estimates from {path}: {exc}") from None
    keys = [f"theta_{i + 1}" for i in range(n_params)]
    est = []
    for r in rows:
        if r.get("ok", "True") in ("False", "false", "0"):
            continue
        try:
            est.append(np.array([float(r[k]) for k in keys]))
        except (KeyError, ValueError):
            raise InputError(f"{path}: rows need columns {','.join(keys)}") from None
    return est


def cmd_bode(args) -> int:
    cfg = load_config(args.config)
    sc = cfg.scenario
    out = _outdir(args, cfg)
    estimates = []
    for p in args.estimates or []:
        estimates += _read_estimates(Path(p), sc.structure.n_params)
    cols = bode_table(sc.plant, estimates, sc.structure, cfg.omega)
    path = out / "bode.csv"
    _write_columns(path, cols)
    _emit({"output": str(path), "rows": len(cfg.omega), "estimates": len(estimates)})
    return EXIT_OK


def cmd_config(args) -> int:
    sys.stdout.write(dump_config(scenario_to_config(BUILTIN_SCENARIOS[args.scenario]())))
    return EXIT_OK


def _theta_list(text: str):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated numbers") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctclid", description="Continuous-time closed-loop identification.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a data set from a scenario config")
    s.add_argument("config")
    s.add_argument("-o", "--out", default="data.csv", help="output CSV (default: data.csv)")
    s.add_argument("--trial", type=int, default=0, help="trial index for the noise seed (default: 0)")
    s.add_argument("--no-shadow", action="store_true", help="omit the noise-free u0,y0 columns")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("identify", help="estimate the plant from a data CSV")
    s.add_argument("config")
    s.add_argument("data")
    s.add_argument("-o", "--out", default="report.json", help="report path; the cost trace goes next to it")
    s.add_argument("--predictor", help="predictor label from the config (default: first)")
    s.add_argument("--theta0", type=_theta_list, help="single start, comma-separated")
    s.set_defaults(func=cmd_identify)

    for name, func, helptext in (
        ("montecarlo", cmd_montecarlo, "repeat simulation and identification over noise draws"),
        ("sweep", cmd_sweep, "Monte-Carlo runs over observer pole real parts"),
    ):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("config")
        s.add_argument("-o", "--out", help="output directory")
        s.add_argument("--trials", type=int, help="override the configured trial count")
        s.add_argument("--predictor", help="predictor label (default: all for montecarlo, first for sweep)")
        s.add_argument("--workers", type=int, help="worker processes")
        if name == "sweep":
            s.add_argument("--real-parts", type=float, nargs="+", help="pole real parts to try")
        s.set_defaults(func=func)

    s = sub.add_parser("bode", help="frequency-response table of the true plant and estimates")
    s.add_argument("config")
    s.add_argument("-o", "--out", help="output directory")
    s.add_argument("--estimates", nargs="*", help="per-trial CSV tables or identify reports")
    s.set_defaults(func=cmd_bode)

    s = sub.add_parser("config", help="print a built-in scenario as a config document")
    s.add_argument("scenario", choices=sorted(BUILTIN_SCENARIOS))
    s.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "trials", None) is not None and args.trials < 1:
        parser.error("--trials must be at least 1")
    try:
        return args.func(args)
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except EstimationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except (SimulationError, PlacementError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
