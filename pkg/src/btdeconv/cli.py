"""Command-line entry point: ``btdeconv <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import PipelineConfig, load_config
from .exceptions import BtdError, IngestionError, PipelineError, StabilityError
from .hrf import gamma_hrf
from .lagcorr import autocorr_tensor, hankelize
from .pipeline import (
    GroundTruth,
    evaluate,
    experiment_for,
    run_montecarlo,
    run_pipeline,
    truth_record,
)
from .recovery import estimate_sources
from .simulator import RoiTimeSeries, synthesize
from .solver import BtdDims, BtdSolution, multi_start
from .stability import select_stable
from .validation import check_record_length

log = logging.getLogger("btdeconv")


def _snr_tag(snr: float) -> str:
    return f"snr{snr:+g}".replace("+", "p").replace("-", "m")


def _dims(config: PipelineConfig, m_regions: int) -> BtdDims:
    return BtdDims(m_regions, config.filter_order, config.stack_depth, config.n_lags, config.dt)


def _read_series(path, config: PipelineConfig) -> RoiTimeSeries:
    series = io.read_timeseries_csv(path)
    if not np.isclose(series.fs, config.fs, rtol=1e-6):
        log.info("sampling rate %.6g Hz read from %s overrides config", series.fs, path)
    return series


def _source_rows(source, fs):
    t = np.arange(len(source)) / fs
    return np.column_stack([t, source]).tolist()


def cmd_simulate(config: PipelineConfig, args) -> int:
    out = Path(config.output_dir)
    snrs = config.snr_list if args.sweep else (config.snr_db,)
    prov = config.provenance()
    for snr in snrs:
        exp = experiment_for(config, config.seed, snr)
        series = synthesize(exp, normalize=False)
        stem = f"sim_{_snr_tag(snr)}" if args.sweep else "sim"
        io.write_timeseries_csv(out / f"{stem}.csv", series, prov)
        io.write_json(out / f"{stem}_truth.json", truth_record(exp), prov)
        print(out / f"{stem}.csv")
    return 0


def cmd_decompose(config: PipelineConfig, args) -> int:
    series = _read_series(args.input, config).normalized()
    dims = _dims(config.with_overrides(fs=series.fs), series.m_regions)
    check_record_length(series.n_samples, dims.filter_order, dims.stack_depth, dims.n_lags)
    try:
        target = autocorr_tensor(hankelize(series, dims.stack_depth), dims.n_lags)
    except BtdError as exc:
        raise PipelineError(str(exc), stage="tensor") from exc
    out = Path(config.output_dir) / "runs"
    prov = config.provenance()
    if args.export_tensor:
        io.export_tensor(Path(config.output_dir) / "tensor", target, dims.filter_order, prov)
    sols = multi_start(target, config.solver_config(), dims)
    for k, sol in enumerate(sols):
        io.write_json(out / f"run_{k:03d}.json", sol.to_dict(), prov)
        io.write_hrfs_csv(out / f"run_{k:03d}_hrfs.csv", sol.sampled_hrfs, series.labels, prov)
    io.write_json(out / "runs.json", {
        "dims": {"m_regions": dims.m_regions, "filter_order": dims.filter_order,
                 "stack_depth": dims.stack_depth, "n_lags": dims.n_lags, "dt": dims.dt},
        "labels": list(series.labels),
        "runs": [s.to_dict() for s in sols],
    }, prov)
    print(out / "runs.json")
    return 0


def cmd_select(config: PipelineConfig, args) -> int:
    data = io.read_json(args.runs)
    dims = BtdDims(**data["dims"])
    sols = [BtdSolution.from_dict(r, dims) for r in data["runs"]]
    labels = data.get("labels") or [f"roi{m + 1}" for m in range(dims.m_regions)]
    out = Path(config.output_dir)
    prov = config.provenance()
    try:
        rep = select_stable(sols, cut=config.cluster_cut)
    except StabilityError as exc:
        io.write_json(out / "select_diagnostics.json", {"error": str(exc), **exc.diagnostics}, prov)
        raise PipelineError(str(exc), stage="select") from exc
    io.write_json(out / "selection.json", rep.to_dict(), prov)
    io.write_table(out / "dendrogram.csv", ["left", "right", "distance", "size"],
                   [[int(a), int(b), float(d), int(n)] for a, b, d, n in rep.merges], prov)
    io.write_hrfs_csv(out / "hrfs.csv", rep.mean_hrfs, labels, prov)
    io.write_json(out / "hrfs.json", {
        "dt": rep.mean_hrfs[0].dt,
        "curves": {lab: h.taps.tolist() for lab, h in zip(labels, rep.mean_hrfs)},
    }, prov)
    print(out / "hrfs.csv")
    return 0


def cmd_recover(config: PipelineConfig, args) -> int:
    hrfs, _ = io.read_hrfs_csv(args.hrfs)
    series = _read_series(args.input, config).normalized()
    try:
        est = estimate_sources(hrfs, series, config.stack_depth, config.truncation_fraction)
    except BtdError as exc:
        raise PipelineError(str(exc), stage="recover") from exc
    path = Path(config.output_dir) / "source.csv"
    io.write_table(path, ["time", "source"], _source_rows(est.collapsed, series.fs), config.provenance())
    print(path)
    return 0


def cmd_evaluate(config: PipelineConfig, args) -> int:
    truth = GroundTruth.from_record(io.read_json(args.truth))
    schedule = truth.schedule
    _, src, _ = io.read_table(args.source)
    true_h = est_h = series = None
    if args.hrfs:
        est_grid, _ = io.read_hrfs_csv(args.hrfs)
        est_h = [h.normalized() for h in est_grid]
        true_h = [gamma_hrf(p, est_grid[0].dt, est_grid[0].length).normalized() for p in truth.hrf_params]
    if args.input:
        series = io.read_timeseries_csv(args.input).normalized()
    try:
        report = evaluate(schedule, src[:, 1], schedule.fs, true_h, est_h, series, config.fano_window,
                          {"truth": str(args.truth)})
    except BtdError as exc:
        raise PipelineError(str(exc), stage="evaluate") from exc
    out = Path(config.output_dir)
    prov = config.provenance()
    io.write_json(out / "eval.json", report.to_dict(), prov)
    row = report.flat_row()
    io.write_table(out / "eval_row.csv", list(row), [list(row.values())], prov)
    print(f"iou_seconds_mean={report.iou_seconds_mean:.4f} pl_error_mean={report.pl_error_mean:.4f}")
    return 0


def cmd_pipeline(config: PipelineConfig, args) -> int:
    series = _read_series(args.input, config)
    config = config.with_overrides(fs=series.fs)
    truth = GroundTruth.from_record(io.read_json(args.truth)) if args.truth else None
    res = run_pipeline(series, config, truth)
    out = Path(config.output_dir)
    prov = config.provenance()
    est = res.estimator
    io.write_hrfs_csv(out / "hrfs.csv", est.hrfs_, series.labels, prov)
    io.write_json(out / "selection.json", {
        **est.report_.to_dict(),
        "peak_latencies": est.peak_latencies_.tolist(),
        "fwhms": est.fwhms_.tolist(),
        "costs": [s.final_cost for s in est.solutions_],
    }, prov)
    io.write_table(out / "source.csv", ["time", "source"], _source_rows(res.source, series.fs), prov)
    io.write_json(out / "schedule.json", {"intervals": res.schedule.intervals}, prov)
    if res.report is not None:
        io.write_json(out / "eval.json", res.report.to_dict(), prov)
        row = res.report.flat_row()
        io.write_table(out / "eval_row.csv", list(row), [list(row.values())], prov)
        print(f"iou_seconds_mean={res.report.iou_seconds_mean:.4f} pl_error_mean={res.report.pl_error_mean:.4f}")
    print("peak_latencies=" + ",".join(f"{v:.3f}" for v in est.peak_latencies_))
    return 0


def cmd_montecarlo(config: PipelineConfig, args) -> int:
    def progress(row):
        log.info("iteration %d done (%s)", row["iteration"], row["status"])

    rows, summary = run_montecarlo(config, progress=progress)
    out = Path(config.output_dir)
    prov = config.provenance()
    header = sorted({k for r in rows for k in r}, key=lambda k: (k not in ("iteration", "seed", "snr_db"), k))
    io.write_table(out / "montecarlo_rows.csv", header, [[r.get(k, "") for k in header] for r in rows], prov)
    io.write_json(out / "montecarlo_summary.json", {"iterations": config.mc_iterations, "per_snr": summary}, prov)
    for snr, s in summary.items():
        print(f"{snr:>6} dB  PL err {s['pl_error_median']:.3f} s  IoU {s['iou_adaptive_median']:.3f} s"
              f"  baseline IoU {s['iou_baseline_median']:.3f} s  ({s['n_ok']} ok, {s['n_failed']} failed)")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "decompose": cmd_decompose,
    "select": cmd_select,
    "recover": cmd_recover,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
    "montecarlo": cmd_montecarlo,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML configuration file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration key (repeatable)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", dest="output_dir", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="btdeconv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="write a synthetic recording and its ground truth")
    p.add_argument("--snr", dest="snr_db", type=float, help="SNR in dB")
    p.add_argument("--sweep", action="store_true", help="one dataset per SNR in the configured list")

    p = sub.add_parser("decompose", parents=[common], help="multi-start BTD of a time-series CSV")
    p.add_argument("input", type=Path)
    p.add_argument("--starts", dest="n_starts", type=int)
    p.add_argument("--export-tensor", action="store_true", help="also write the lag slices as CSV")

    p = sub.add_parser("select", parents=[common], help="stable-cluster selection over decomposition runs")
    p.add_argument("runs", type=Path, help="runs.json written by decompose")

    p = sub.add_parser("recover", parents=[common], help="estimate the task source from HRFs")
    p.add_argument("hrfs", type=Path)
    p.add_argument("input", type=Path)

    p = sub.add_parser("evaluate", parents=[common], help="score estimates against a truth file")
    p.add_argument("truth", type=Path)
    p.add_argument("source", type=Path)
    p.add_argument("--hrfs", type=Path)
    p.add_argument("--input", type=Path, help="time series for Fano factors")

    p = sub.add_parser("pipeline", parents=[common], help="decompose, select, recover and evaluate")
    p.add_argument("input", type=Path)
    p.add_argument("--truth", type=Path)
    p.add_argument("--starts", dest="n_starts", type=int)

    p = sub.add_parser("montecarlo", parents=[common], help="simulation study over SNRs")
    p.add_argument("--iterations", dest="mc_iterations", type=int)
    p.add_argument("--snrs", dest="snr_list", help="comma-separated SNRs in dB")
    p.add_argument("--jobs", dest="n_jobs", type=int)
    p.add_argument("--starts", dest="n_starts", type=int)
    return parser


def _config_from(args) -> PipelineConfig:
    overrides = {}
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise PipelineError(f"--set expects KEY=VALUE, got {item!r}", stage="config")
        overrides[key.strip()] = value.strip()
    for key in ("seed", "output_dir", "snr_db", "n_starts", "mc_iterations", "snr_list", "n_jobs"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    try:
        return load_config(args.config, **overrides)
    except (KeyError, ValueError, OSError) as exc:
        raise PipelineError(str(exc), stage="config") from exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _config_from(args)
        return COMMANDS[args.command](config, args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
    except IngestionError as exc:
        print(f"error: [ingest] {exc}", file=sys.stderr)
    except BtdError as exc:
        print(f"error: [{args.command}] {exc}", file=sys.stderr)
    except OSError as exc:
        print(f"error: [{args.command}] {exc}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
