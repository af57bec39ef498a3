"""
Command-line interface: generate-truth, run, plot and summarize.
"""

import argparse
import csv
import logging
import os
import sys
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .artifact_store import CONFIG_FILE, TRUTH_FILE, ArtifactStore
from .config import ExperimentConfig, load_config, preset_names
from .errors import ArtifactError, PostRiskError
from .postrisk import (
    EstimateReport, RunRecord, mc_posterior_estimate, mc_prior_estimate, repeat, run_bias_probe,
    run_postrisk, threshold_key,
)
from .problems import (
    ForwardProblem, SyntheticTruth, desk_grid, flow1d_problem, gaussian_toy_problem,
    generate_truth, problem_for_truth, transport2d_prior_field, transport2d_problem,
)
from .random_fields import Grid1D
from .rng import RandomStreams
from .smc_posterior import run_smc_posterior
from .smc_rare import ensure_qoi
from .transport import TransportParams, simulate_transport
from .workers import ParticleWorkers

logger = logging.getLogger(__name__)


@dataclass
class CaseSetup:
    problem: ForwardProblem
    truth: SyntheticTruth


def setup_case(config: ExperimentConfig) -> CaseSetup:
    """Synthetic truth and the forward problem the experiment runs on."""
    case = config.case
    prior = None
    if case.test_case == "transport2d":
        prior = transport2d_prior_field(desk_grid(case.grid_n))
    truth = generate_truth(case.test_case, case.truth_seed, case.grid_n, prior,
                           case.toy_dimension, case.toy_noise_sd)
    if case.use_data:
        problem = problem_for_truth(truth, case.grid_n, prior, case.toy_dimension)
    elif case.test_case == "flow1d":
        problem = flow1d_problem()
    elif case.test_case == "transport2d":
        problem = transport2d_problem(grid=desk_grid(case.grid_n), prior=prior)
    else:
        problem = gaussian_toy_problem(case.toy_dimension)
    return CaseSetup(problem.with_noise_scale(case.noise_scale), truth)


def run_experiment(config: ExperimentConfig, out_dir: str) -> EstimateReport:
    """Run the configured method and write every artifact into ``out_dir``."""
    config.validate()
    workers = ParticleWorkers(config.threads)
    setup = setup_case(config)
    problem = setup.problem
    spec = config.rare_event_spec()
    thresholds = config.thresholds_of_interest()

    final_fields: Optional[np.ndarray] = None
    if config.method in ("postrisk", "smc-rare"):
        runtime = config.postrisk_config(with_posterior=config.method == "postrisk")
        report, runs = run_postrisk(problem, spec, runtime, workers, method=config.method)
        ensemble = runs[0].rare.ensemble
        final_fields = np.stack([problem.to_log_field(p.z) for p in ensemble.particles])

    elif config.method == "smc-posterior":
        runtime = config.postrisk_config(with_posterior=True)
        records: List[RunRecord] = []
        for r in range(config.repetitions):
            result = run_smc_posterior(problem, runtime.posterior, runtime.tempering,
                                       runtime.posterior_proposal,
                                       RandomStreams(config.seed, r), workers)
            ensemble, qoi_counts = ensure_qoi(result.ensemble, problem, workers)
            values = ensemble.qoi_values()
            estimates = {threshold_key(t): float(np.mean([spec.direction.satisfies(v, t) for v in values]))
                         for t in sorted({spec.target_threshold, *thresholds})}
            records.append(RunRecord(
                r, estimates, result.counts + qoi_counts, result.initial_counts,
                schedules={"alphas": list(result.schedule.realized)},
                diagnostics=[d.to_dict() for d in result.diagnostics],
            ))
            if r == 0:
                final_fields = np.stack([problem.to_log_field(p.z) for p in ensemble.particles])
        report = EstimateReport.from_runs(config.method, spec, records)

    elif config.method == "mh":
        b = config.baseline
        proposal = config.proposal.build()
        report = repeat(config.method, spec, config.repetitions, lambda r: mc_posterior_estimate(
            problem, spec, b.n_chains, b.chain_length, b.thinning, proposal,
            RandomStreams(config.seed, r), thresholds, workers, config.proposal.pilot_steps, r))

    elif config.method == "mc-prior":
        prior_problem = problem.without_data()
        report = repeat(config.method, spec, config.repetitions, lambda r: mc_prior_estimate(
            prior_problem, spec, config.baseline.n_samples, RandomStreams(config.seed, r),
            thresholds, workers, r))

    else:
        runtime = config.postrisk_config()
        probe = run_bias_probe(problem, spec, runtime, config.baseline.bias_runs, workers)
        records = [
            RunRecord(i, {"adaptive": a, "frozen": f}, schedules={"thresholds": s})
            for i, (a, f, s) in enumerate(zip(probe.adaptive, probe.rerun, probe.schedules))
        ]
        report = EstimateReport.from_runs(config.method, spec, records)

    store = ArtifactStore(out_dir)
    store.write_json(CONFIG_FILE, config.to_dict())
    store.write_json(TRUTH_FILE, setup.truth.to_dict())
    write_run_tables(store, report)
    if final_fields is not None:
        store.write_fields("particles_final.csv", final_fields)
    store.save_report(report.to_dict(), config.to_dict(),
                      extra={"desk_scale": config.desk_scale, "test_case": config.case.test_case})
    return report


def write_run_tables(store: ArtifactStore, report: EstimateReport) -> None:
    store.write_csv("estimates.csv", ["repetition", "threshold", "estimate"],
                    [(r.repetition, key, value) for r in report.per_run for key, value in r.estimates.items()])
    store.write_csv("levels.csv", ["repetition", "k", "threshold", "survivors", "probability", "acceptance"],
                    [(r.repetition, lv.level, lv.threshold, lv.survivors, lv.probability, lv.acceptance)
                     for r in report.per_run for lv in r.levels])
    store.write_csv("diagnostics.csv",
                    ["repetition", "iteration", "alpha", "ess", "cess", "acceptance", "resampled"],
                    [(r.repetition, d["iteration"], d["alpha"], d["ess"], d["cess"], d["acceptance"],
                      int(d["resampled"])) for r in report.per_run for d in r.diagnostics])


def summary_rows(path: str) -> List[dict]:
    """Table rows (one per threshold) of a saved report."""
    run_dir = os.path.dirname(os.path.abspath(path)) if path.endswith(".json") else path
    if not os.path.isdir(run_dir):
        raise ArtifactError(f"no run directory at {run_dir}")
    store = ArtifactStore(run_dir)
    payload = store.load_report()
    rows = []
    per_run = payload["per_run"]
    mean_g = float(np.mean([r["counts"]["forward"] for r in per_run]))
    mean_r = float(np.mean([r["counts"]["qoi"] for r in per_run]))
    for key, s in payload["summary"].items():
        rows.append({
            "report": path, "method": payload.get("method", ""), "threshold": key,
            "mean": s["mean"], "cov": s["cov"], "min": s["min"], "max": s["max"], "runs": s["n"],
            "forward_evals": mean_g, "qoi_evals": mean_r,
        })
    return rows


def _format_row(row: dict) -> str:
    cov = "-" if row["cov"] is None else f"{row['cov']:.2f}"
    return (f"{row['method']:<14} T={row['threshold']:<10} mean={row['mean']:.4g} COV={cov} "
            f"min={row['min']:.4g} max={row['max']:.4g} G={row['forward_evals']:.0f} "
            f"R={row['qoi_evals']:.0f} ({row['runs']} runs)")


# ---------------------------------------------------------------------------
# argparse
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="postrisk", description="Rare-event probabilities under the posterior")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")
    sub = parser.add_subparsers(dest="command", required=True)

    truth = sub.add_parser("generate-truth", help="sample and save a synthetic truth")
    truth.add_argument("--config", default="flow1d_baseline", help="config file or preset name")
    truth.add_argument("--seed", type=int, default=None, help="override the truth seed")
    truth.add_argument("--out", required=True, help="output directory")

    run = sub.add_parser("run", help="run an experiment")
    run.add_argument("--config", required=True, help=f"config file or preset ({', '.join(preset_names())})")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--reps", type=int, default=None, help="number of repetitions")
    run.add_argument("--threads", type=int, default=None)
    run.add_argument("--out", default=None, help="run directory (default: <output_dir>/<name>)")

    plot = sub.add_parser("plot", help="render figures for a run directory")
    plot.add_argument("run_dir")

    summarize = sub.add_parser("summarize", help="print table rows for one or more reports")
    summarize.add_argument("reports", nargs="+", help="report.json files or run directories")
    summarize.add_argument("--out", default=None, help="combined CSV path")
    return parser


def configure_logging(verbosity: int) -> None:
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def cmd_generate_truth(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.case.truth_seed = args.seed
    setup = setup_case(config)
    store = ArtifactStore(args.out)
    path = store.write_json(TRUTH_FILE, setup.truth.to_dict())
    print(f"Truth for {config.case.test_case} (seed {config.case.truth_seed}): "
          f"QoI {setup.truth.qoi.value:.6g}{' (censored)' if setup.truth.qoi.censored else ''}")
    print(f"Saved to {path}")
    return 0


def cmd_run(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.reps is not None:
        config.repetitions = args.reps
    if args.threads is not None:
        config.threads = args.threads
    out_dir = args.out or os.path.join(config.output_dir, config.name)
    print(f"Running {config.name}: {config.method} on {config.case.test_case} "
          f"({config.repetitions} repetitions, {config.threads} threads)")
    if config.desk_scale:
        print("Desk-scale configuration: budgets are reduced and not comparable to full-scale runs.")
    run_experiment(config, out_dir)
    for row in summary_rows(os.path.join(out_dir, "report.json")):
        print("  " + _format_row(row))
    print(f"Artifacts written to {out_dir}")
    return 0


def cmd_plot(args) -> int:
    from .plotting import plot_concentration, render_outputs

    store = ArtifactStore(args.run_dir)
    report = store.load_report()
    truth = store.read_json(TRUTH_FILE) if store.exists(TRUTH_FILE) else None
    fields = store.read_fields("particles_final.csv") if store.exists("particles_final.csv") else None
    config = ExperimentConfig.from_dict(report["config"])
    grid = desk_grid(config.case.grid_n) if config.case.test_case == "transport2d" else None
    if config.case.test_case == "flow1d":
        grid = Grid1D()
    written = render_outputs(args.run_dir, report, fields, truth, grid)
    if truth is not None and config.case.test_case == "transport2d":
        params = TransportParams()
        result = simulate_transport(np.asarray(truth["log_field"]), grid, params, snapshot_days=(60.0,))
        if 60.0 in result.snapshots:
            written.append(plot_concentration(grid, result.snapshots[60.0],
                                              os.path.join(args.run_dir, "plume_60d.svg"),
                                              params.breakthrough_concentration, "truth, 60 days"))
    for path in written:
        print(f"  {path}")
    return 0


def cmd_summarize(args) -> int:
    rows = []
    for path in args.reports:
        report_path = path if path.endswith(".json") else os.path.join(path, "report.json")
        rows.extend(summary_rows(report_path))
    for row in rows:
        print(_format_row(row))
    if args.out:
        with open(args.out, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
        print(f"Combined table written to {args.out}")
    return 0


COMMANDS = {
    "generate-truth": cmd_generate_truth,
    "run": cmd_run,
    "plot": cmd_plot,
    "summarize": cmd_summarize,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns 0 on success, 1 on library errors, 2 on usage errors."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if not exc.code else 2
    configure_logging(args.verbose)
    try:
        return COMMANDS[args.command](args)
    except PostRiskError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
