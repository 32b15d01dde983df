"""``stablescore`` command line.

Every subcommand writes a JSON result to stdout (or the named output files)
and exits 0. Failures print ``{"error": <code>, "message": ...}`` to stderr
and exit 2 for invalid input or 3 for runtime failures.
"""

from __future__ import annotations

import argparse
import gc
import json
import logging
import signal
import sys
import warnings
from pathlib import Path

import numpy as np

from stablescore.types import ValidationError

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _write_json(path: str | None, obj) -> None:
    if path is None or path == "-":
        _emit(obj)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _read_scores(path: str):
    from stablescore.quantile_fit import read_scores_csv

    return read_scores_csv(sys.stdin if path == "-" else path)


# --- subcommands ----------------------------------------------------------------


def cmd_serve(args) -> int:
    from stablescore.serving import ScoringService, load_deployment
    from stablescore.serving.http import ScoringHTTPServer

    config = Path(args.config)
    snapshot, settings = load_deployment(config.read_text(), config.parent)
    if args.host is not None:
        settings.host = args.host
    if args.port is not None:
        settings.port = args.port
    if args.warmup is not None:
        settings.warmup_count = args.warmup
    settings.seed = args.seed
    service = ScoringService(snapshot, settings)
    server = ScoringHTTPServer(service, settings.host, settings.port)
    calls = service.warmup()
    # Config and model objects live for the whole process; keep them out of GC scans.
    gc.collect()
    gc.freeze()
    logging.getLogger(__name__).info("ready on %s after %d warm-up calls", server.url, calls)
    sys.stderr.write(json.dumps({"listening": server.url, "warmup_calls": calls}) + "\n")

    def on_term(signum, frame):
        raise KeyboardInterrupt  # same orderly shutdown as Ctrl-C: drain shadows, close sink

    signal.signal(signal.SIGTERM, on_term)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        service.close()
    return EXIT_OK


def cmd_fit_quantiles(args) -> int:
    from stablescore.quantile_fit import (
        InsufficientSamplesWarning,
        SampleSet,
        fit_quantile_table,
        load_reference,
        read_shadow_records,
    )
    from stablescore.transforms import default_levels

    levels = default_levels(args.levels)
    if args.shadow_sink:
        scores = read_shadow_records(
            args.shadow_sink,
            predictor_id=args.predictor,
            tenant_id=args.tenant,
            start=args.start,
            end=args.end,
        )
    else:
        scores, _ = _read_scores(args.scores)
    reference = load_reference(args.reference, levels)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", InsufficientSamplesWarning)
        table = fit_quantile_table(
            SampleSet(scores, args.tenant or "", args.predictor or "", (args.start or "", args.end or "")),
            reference,
            levels,
            version=args.version,
            fitted_at=args.fitted_at,
        )
    for w in caught:
        sys.stderr.write(json.dumps({"warning": w.category.__name__, "message": str(w.message)}) + "\n")
    _write_json(args.out, table.to_dict())
    return EXIT_OK


def cmd_fit_coldstart(args) -> int:
    from stablescore.coldstart import SearchSettings, default_quantile_table, fit_beta_mixture
    from stablescore.quantile_fit import load_reference
    from stablescore.transforms import default_levels

    scores, labels = _read_scores(args.scores)
    if labels is None:
        raise ValidationError("cold-start fitting needs a 'label' column")
    settings = SearchSettings(population=args.population, generations=args.generations)
    fit = fit_beta_mixture(scores, labels, args.trials, args.seed, settings)
    _write_json(args.out, fit.to_dict())
    if args.table_out:
        levels = default_levels(args.levels)
        table = default_quantile_table(
            fit, load_reference(args.reference, levels), levels, version=args.version, fitted_at=args.fitted_at or ""
        )
        _write_json(args.table_out, table.to_dict())
    return EXIT_OK


def cmd_samplesize(args) -> int:
    from stablescore.quantile_fit import SampleSizeQuery, required_samples

    q = SampleSizeQuery(args.alert_rate, args.relative_error, args.z)
    _emit({"alert_rate": q.alert_rate, "relative_error": q.relative_error, "z": q.z_score, "n": required_samples(q)})
    return EXIT_OK


def cmd_validate_bound(args) -> int:
    from stablescore.quantile_fit import normal_coverage, validate_sample_size_bound

    report = validate_sample_size_bound(args.alert_rate, args.relative_error, args.z, args.trials, args.seed)
    out = report.to_dict()
    out["nominal_coverage"] = normal_coverage(args.z)
    _emit(out)
    return EXIT_OK


def _calibration_rows(betas, n, seed):
    from stablescore.metrics import calibration_report
    from stablescore.synthetic import undersampled_predictions
    from stablescore.transforms import posterior_correct

    rng = np.random.default_rng(seed)
    rows = []
    for beta in betas:
        _, labels, biased = undersampled_predictions(n, beta, rng)
        rows.append(
            (
                "synthetic",
                f"undersampled beta={beta:g}",
                beta,
                calibration_report(biased, labels),
                calibration_report(posterior_correct(biased, beta), labels),
            )
        )
    return rows


def cmd_evaluate(args) -> int:
    from stablescore.metrics import (
        binned_relative_error,
        calibration_report,
        format_calibration_table,
        reliability_curve,
    )
    from stablescore.quantile_fit import load_reference, reference_decile_masses
    from stablescore.transforms import default_levels

    if not args.scores and not args.beta:
        raise ValidationError("give --scores and/or --beta")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result: dict = {}
    if args.scores:
        from stablescore.plotting import plot_relative_error, plot_reliability

        levels = default_levels()
        target = reference_decile_masses(load_reference(args.reference, levels), levels)
        scores, labels = _read_scores(args.scores)
        cmp = binned_relative_error(scores, target, args.z)
        result["relative_error"] = cmp.to_dict()
        _write_csv(out_dir / "relative_error.csv", cmp.to_rows())
        plot_relative_error({args.name: cmp}, out_dir / "relative_error.png")
        if labels is not None:
            result["calibration"] = calibration_report(scores, labels).to_dict()
            plot_reliability({args.name: reliability_curve(scores, labels)}, out_dir / "reliability.png")
    if args.beta:
        rows = _calibration_rows(args.beta, args.n, args.seed)
        text = format_calibration_table(rows)
        (out_dir / "calibration_table.txt").write_text(text)
        result["posterior_correction"] = [
            {"beta": beta, "without": w.to_dict(), "with": c.to_dict()} for _, _, beta, w, c in rows
        ]
        sys.stderr.write(text)
    (out_dir / "evaluation.json").write_text(json.dumps(result, indent=1, sort_keys=True) + "\n")
    _emit(result)
    return EXIT_OK


def _write_csv(path: Path, rows: list[dict]) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def cmd_lifecycle_demo(args) -> int:
    from stablescore.lifecycle import LifecycleSettings, run_lifecycle

    settings = LifecycleSettings(
        seed=args.seed,
        training_events=args.training_events,
        phase1_events=args.phase1_events,
        phase2_events=args.phase2_events,
        reference=args.reference,
    )
    report = run_lifecycle(args.out_dir, settings)
    _emit({"output_dir": str(args.out_dir), "files": report.files, "checks": report.checks()})
    return EXIT_OK


# --- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stablescore", description="Score stabilization toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("serve", help="run the HTTP scoring service")
    p.add_argument("--config", required=True, help="deployment YAML")
    p.add_argument("--host", default=None, help="override service.host")
    p.add_argument("--port", type=int, default=None, help="override service.port")
    p.add_argument("--warmup", type=int, default=None, help="warm-up requests per predictor")
    p.add_argument("--seed", type=int, default=0, help="warm-up payload seed (default 0)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("fit-quantiles", help="fit a quantile table from scores")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scores", help="CSV with a 'score' column ('-' for stdin)")
    src.add_argument("--shadow-sink", help="shadow-sink JSONL file")
    p.add_argument("--predictor", default=None, help="shadow-sink predictor filter")
    p.add_argument("--tenant", default=None, help="shadow-sink tenant filter")
    p.add_argument("--start", default=None, help="window start, ISO-8601 inclusive")
    p.add_argument("--end", default=None, help="window end, ISO-8601 exclusive")
    p.add_argument("--reference", default="uniform", help="uniform | skewed | JSON path (default uniform)")
    p.add_argument("--levels", type=int, default=1001, help="number of quantile levels (default 1001)")
    p.add_argument("--version", default="v1", help="table version label (default v1)")
    p.add_argument("--fitted-at", default=None, help="timestamp to record (default now)")
    p.add_argument("--out", default="-", help="output table JSON (default stdout)")
    p.set_defaults(func=cmd_fit_quantiles)

    p = sub.add_parser("fit-coldstart", help="fit the cold-start Beta mixture prior")
    p.add_argument("--scores", required=True, help="CSV with 'score' and 'label' columns ('-' for stdin)")
    p.add_argument("--trials", type=int, default=8, help="independent search trials (default 8)")
    p.add_argument("--population", type=int, default=32, help="search population size (default 32)")
    p.add_argument("--generations", type=int, default=300, help="search generations (default 300)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--out", default="-", help="output fit JSON (default stdout)")
    p.add_argument("--table-out", default=None, help="also write the default quantile table here")
    p.add_argument("--reference", default="uniform", help="reference for --table-out (default uniform)")
    p.add_argument("--levels", type=int, default=1001, help="levels for --table-out (default 1001)")
    p.add_argument("--version", default="v0", help="version for --table-out (default v0)")
    p.add_argument("--fitted-at", default=None, help="timestamp for --table-out")
    p.set_defaults(func=cmd_fit_coldstart)

    p = sub.add_parser("samplesize", help="samples needed to resolve an alert rate")
    p.add_argument("--alert-rate", type=float, required=True, help="alert rate a in (0, 1)")
    p.add_argument("--relative-error", type=float, default=0.2, help="relative error delta (default 0.2)")
    p.add_argument("--z", type=float, default=1.96, help="z-score (default 1.96)")
    p.set_defaults(func=cmd_samplesize)

    p = sub.add_parser("evaluate", help="relative error against a reference, calibration metrics")
    p.add_argument("--scores", default=None, help="CSV with 'score' and optional 'label' columns")
    p.add_argument("--reference", default="uniform", help="uniform | skewed | JSON path (default uniform)")
    p.add_argument("--z", type=float, default=1.96, help="Wilson interval z (default 1.96)")
    p.add_argument("--name", default="predictor", help="series name in figures")
    p.add_argument("--beta", type=float, nargs="+", default=None, help="run the synthetic correction study")
    p.add_argument("--n", type=int, default=100_000, help="samples per beta (default 100000)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--out-dir", default="evaluation", help="directory for JSON, CSV and PNG output")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("validate-bound", help="Monte Carlo check of the sample-size bound")
    p.add_argument("--alert-rate", type=float, default=0.05, help="alert rate (default 0.05)")
    p.add_argument("--relative-error", type=float, default=0.2, help="relative error (default 0.2)")
    p.add_argument("--z", type=float, default=1.96, help="z-score (default 1.96)")
    p.add_argument("--trials", type=int, default=5000, help="Monte Carlo trials (default 5000)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.set_defaults(func=cmd_validate_bound)

    p = sub.add_parser("lifecycle-demo", help="cold start, shadow, refit and promote end to end")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--out-dir", default="lifecycle", help="report directory (default ./lifecycle)")
    p.add_argument("--training-events", type=int, default=50_000, help="cold-start training events")
    p.add_argument("--phase1-events", type=int, default=LIFECYCLE_PHASE1, help="events served under v0")
    p.add_argument("--phase2-events", type=int, default=50_000, help="events served under v1")
    p.add_argument("--reference", default="skewed", help="reference distribution (default skewed)")
    p.set_defaults(func=cmd_lifecycle_demo)
    return parser


LIFECYCLE_PHASE1 = 300_000


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    from stablescore.lifecycle import LifecycleError

    try:
        return args.func(args)
    except (ValidationError, LifecycleError) as exc:
        cause = exc.cause if isinstance(exc, LifecycleError) else exc
        invalid = isinstance(cause, (ValidationError, FileNotFoundError))
        err = {"error": getattr(exc, "code", type(exc).__name__), "message": str(exc)}
        if isinstance(exc, LifecycleError):
            err["stage"] = exc.stage
            err["cause"] = getattr(cause, "code", type(cause).__name__)
        sys.stderr.write(json.dumps(err) + "\n")
        return EXIT_INVALID if invalid else EXIT_RUNTIME
    except (FileNotFoundError, json.JSONDecodeError, ValueError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return EXIT_INVALID
    except Exception as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
