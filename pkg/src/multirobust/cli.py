"""Command line interface.

Three subcommands share one shape: a JSON configuration file plus a few
overriding flags. Reports are deterministic byte-for-byte given the same
configuration and seed, and every toolkit error class maps to its own exit
code (listed in ``--help``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .data import (
    PredictionBundle,
    load_dataset_csv,
    load_predictions_csv,
    write_predictions_csv,
)
from .errors import ERROR_CLASSES, InvalidInputError, MultirobustError
from .estimators import (
    DR_METHODS,
    EstimatorConfig,
    bootstrap_se,
    dr_estimates,
    estimate_general_ee,
    estimate_mr,
)
from .learners import LearnerSpec, auc_score, compute_metrics, fit_predict, geo_score, r2_score
from .simulation import (
    EstimatorArm,
    SimulationScenario,
    run_monte_carlo,
    run_scenario_sweep,
)

SCHEMA_VERSION = "1"


@dataclass(frozen=True)
class RunConfig:
    """A parsed invocation: subcommand, configuration, and overrides."""

    command: str
    config: dict
    config_dir: Path
    seed: int | None = None
    out: str | None = None
    fmt: str = "json"
    threads: int = 1
    verbose: bool = False


# ---------------------------------------------------------------------------
# configuration parsing
# ---------------------------------------------------------------------------


def _load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise InvalidInputError("config root must be a JSON object")
    return cfg


def _build(cls, block: dict, what: str):
    try:
        return cls(**block)
    except TypeError as exc:
        raise InvalidInputError(f"bad {what} block: {exc}") from exc


def learner_spec_from_dict(block: dict) -> LearnerSpec:
    block = dict(block)
    if "hidden_layers" in block and block["hidden_layers"] is not None:
        block["hidden_layers"] = tuple(block["hidden_layers"])
    return _build(LearnerSpec, block, "learner spec")


def estimator_config_from_dict(block: dict, seed_override: int | None) -> EstimatorConfig:
    block = dict(block)
    if seed_override is not None:
        block["seed"] = seed_override
    return _build(EstimatorConfig, block, "estimator config")


def scenario_from_dict(block: dict, seed_override: int | None) -> SimulationScenario:
    block = dict(block)
    if seed_override is not None:
        block["seed"] = seed_override
    if "coef_ranges" in block:
        block["coef_ranges"] = tuple(block["coef_ranges"])
    if block.get("block_sizes") is not None:
        block["block_sizes"] = tuple(block["block_sizes"])
    return _build(SimulationScenario, block, "scenario")


def arm_from_dict(block: dict) -> EstimatorArm:
    return _build(EstimatorArm, dict(block), "arm")


def _resolve(path_like: str, base: Path) -> str:
    """Paths in a config file resolve relative to the config file itself."""
    p = Path(path_like)
    return str(p if p.is_absolute() else base / p)


def _dump_json(obj: dict, out: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------


def _assemble_bundle(cfg: dict, base: Path, ds, est_cfg: EstimatorConfig) -> PredictionBundle:
    source = cfg.get("predictions")
    specs = [learner_spec_from_dict(b) for b in cfg.get("learners", [])]
    if source is None and not specs:
        raise InvalidInputError(
            "no prediction source: give a predictions CSV, learner specs, "
            'or "predictions": "none" for an empty pool'
        )
    models = []
    if source not in (None, "none"):
        csv_bundle = load_predictions_csv(_resolve(source, base), ds.n)
    else:
        csv_bundle = None
    for spec in specs:
        models.append(fit_predict(spec, ds))
    fitted = PredictionBundle.from_models(models, ds.n)
    if csv_bundle is None:
        return fitted
    if not models:
        return csv_bundle
    return PredictionBundle(
        np.column_stack([csv_bundle.ps, fitted.ps]),
        np.column_stack([csv_bundle.out1, fitted.out1]),
        np.column_stack([csv_bundle.out0, fitted.out0]),
        tuple(csv_bundle.labels[: csv_bundle.n_ps]) + tuple(fitted.labels[: fitted.n_ps])
        + tuple(csv_bundle.labels[csv_bundle.n_ps:]) + tuple(fitted.labels[fitted.n_ps:]),
    )


def cmd_estimate(run: RunConfig) -> dict:
    cfg = run.config
    if "dataset" not in cfg:
        raise InvalidInputError('estimate config needs a "dataset" path')
    ds = load_dataset_csv(_resolve(cfg["dataset"], run.config_dir))
    est_cfg = estimator_config_from_dict(cfg.get("estimator", {}), run.seed)
    pb = _assemble_bundle(cfg, run.config_dir, ds, est_cfg)
    if cfg.get("export_predictions"):
        write_predictions_csv(pb, _resolve(cfg["export_predictions"], run.config_dir))

    estimates = []
    mr = estimate_mr(ds, pb, est_cfg)
    mr_dict = mr.to_dict()
    if cfg.get("bootstrap"):
        mr_dict["bootstrap_se"] = bootstrap_se(ds, pb, est_cfg)
        mr_dict["bootstrap_reps"] = est_cfg.bootstrap_reps
    estimates.append(mr_dict)

    if cfg.get("general_ee") is not None:
        block = dict(cfg["general_ee"])
        ee_cfg = estimator_config_from_dict(
            {**cfg.get("estimator", {}), "eta0": block.get("eta0", 0.0),
             "eta1": block.get("eta1", 0.0)},
            run.seed,
        )
        estimates.append(estimate_general_ee(ds, pb, ee_cfg).to_dict())

    comparisons = cfg.get("comparisons", [])
    if comparisons:
        unknown = [c for c in comparisons if c not in DR_METHODS]
        if unknown:
            raise InvalidInputError(f"unknown comparison estimators: {unknown}")
        if pb.n_ps == 0 or pb.n_outcome == 0:
            raise InvalidInputError(
                "comparison estimators need at least one propensity column and one outcome pair"
            )
        cols = cfg.get("dr_columns", {})
        k = int(cols.get("ps", 0))
        j = int(cols.get("outcome", 0))
        if not (0 <= k < pb.n_ps) or not (0 <= j < pb.n_outcome):
            raise InvalidInputError("dr_columns indexes out of range")
        dr = dr_estimates(ds, pb.ps[:, k], pb.out1[:, j], pb.out0[:, j], est_cfg)
        estimates.extend(dr[name].to_dict() for name in comparisons)

    return {
        "schema_version": SCHEMA_VERSION,
        "command": "estimate",
        "dataset": {"n": ds.n, "n1": ds.n1, "n0": ds.n0, "n_dropped": ds.n_dropped},
        "pool": {"n_ps": pb.n_ps, "n_outcome": pb.n_outcome, "labels": list(pb.labels)},
        "estimator_config": {
            "alpha": est_cfg.alpha,
            "normalized_weights": est_cfg.normalized_weights,
            "ps_clip": est_cfg.ps_clip,
            "seed": est_cfg.seed,
        },
        "estimates": estimates,
    }


def _estimates_csv(report: dict) -> str:
    lines = ["method,beta,beta1,beta0,se,ci_low,ci_high"]
    for est in report["estimates"]:
        lines.append(
            f"{est['method']},{est['beta']!r},{est['beta1']!r},{est['beta0']!r},"
            f"{est['se']!r},{est['ci_low']!r},{est['ci_high']!r}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(run: RunConfig) -> dict:
    cfg = run.config
    if "scenario" not in cfg:
        raise InvalidInputError('simulate config needs a "scenario" block')
    sc = scenario_from_dict(cfg["scenario"], run.seed)
    arm_blocks = cfg.get("arms") or [{"name": "mr", "estimator": "mr"}]
    arms = [arm_from_dict(b) for b in arm_blocks]
    grid = [learner_spec_from_dict(b) for b in cfg.get("grid", [])]
    est_cfg = estimator_config_from_dict(cfg.get("estimator", {}), None)

    n_grid = cfg.get("n_grid")
    if n_grid:
        swept = run_scenario_sweep(sc, arms, n_grid, grid=grid, cfg=est_cfg,
                                   threads=run.threads)
    else:
        swept = [(sc.n, run_monte_carlo(sc, arms, grid=grid, cfg=est_cfg,
                                        threads=run.threads))]

    out_dir = Path(run.out) if run.out else Path("simulation-report")
    out_dir.mkdir(parents=True, exist_ok=True)

    summary = {
        "schema_version": SCHEMA_VERSION,
        "command": "simulate",
        "scenario": {
            "n": sc.n, "p": sc.p, "reps": sc.reps, "seed": sc.seed,
            "beta_true": sc.beta_true, "rho_corr": sc.rho_corr,
            "noise_sd": sc.noise_sd, "coef_ranges": list(sc.coef_ranges),
            "block_sizes": list(sc.block_sizes),
        },
        "results": [
            {"n": n, "arms": [s.to_dict() for s in report.arms]}
            for n, report in swept
        ],
    }
    _dump_json(summary, str(out_dir / "summary.json"))

    rep_lines = ["rep,estimator,beta_hat,se,covered"]
    for n, report in swept:
        for r in report.replications:
            if r.error is None:
                rep_lines.append(f"{r.rep},{r.arm},{r.beta_hat!r},{r.se!r},{int(r.covered)}")
            else:
                rep_lines.append(f"{r.rep},{r.arm},,,")
    (out_dir / "replications.csv").write_text("\n".join(rep_lines) + "\n", encoding="utf-8")

    series_lines = ["estimator,n,bias,mc_sd,rmse,mean_se,coverage"]
    for n, report in swept:
        for s in report.arms:
            series_lines.append(
                f"{s.name},{n},{s.bias!r},{s.mc_sd!r},{s.rmse!r},{s.mean_se!r},{s.coverage!r}"
            )
    (out_dir / "series.csv").write_text("\n".join(series_lines) + "\n", encoding="utf-8")
    return summary


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def _read_two_columns(path: str, cols: tuple[str, str]):
    try:
        frame = pd.read_csv(path)
    except (OSError, ValueError, pd.errors.ParserError) as exc:
        raise InvalidInputError(f"cannot read {path}: {exc}") from exc
    for c in cols:
        if c not in frame.columns:
            raise InvalidInputError(f"{path} needs a {c!r} column")
    return frame[cols[0]].to_numpy(dtype=float), frame[cols[1]].to_numpy(dtype=float)


def cmd_metrics(run: RunConfig) -> dict:
    cfg = run.config
    report: dict = {"schema_version": SCHEMA_VERSION, "command": "metrics"}
    have_scores = "treatment" in cfg
    have_outcome = "outcome" in cfg
    if not have_scores and not have_outcome:
        raise InvalidInputError('metrics config needs "treatment" and/or "outcome" file entries')
    if have_scores:
        scores, labels = _read_two_columns(_resolve(cfg["treatment"], run.config_dir),
                                           ("score", "label"))
        auc = auc_score(scores, labels)
        report["auc"] = auc
        report["d"] = 2.0 * (auc - 0.5)
    if have_outcome:
        preds, targets = _read_two_columns(_resolve(cfg["outcome"], run.config_dir),
                                           ("pred", "target"))
        report["r2"] = r2_score(preds, targets)
    if have_scores and have_outcome:
        report["geo"] = geo_score(report["r2"], report["auc"])
    return report


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _exit_code_table() -> str:
    rows = [f"  {cls.exit_code:>2}  {cls.tag}" for cls in ERROR_CLASSES]
    return "error exit codes:\n   1  unexpected internal error\n" + "\n".join(rows)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="multirobust",
        description="Average treatment effect estimation from pools of candidate models.",
        epilog=_exit_code_table(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("estimate", "estimate treatment effects from a dataset CSV"),
        ("simulate", "run a Monte Carlo scenario"),
        ("metrics", "score prediction files"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--out", default=None,
                       help="output file (estimate/metrics) or directory (simulate)")
        p.add_argument("--format", choices=("json", "csv"), default="json",
                       help="estimate report format (default json)")
        p.add_argument("--threads", type=int, default=1,
                       help="worker cap for simulate; results do not depend on it")
        p.add_argument("--verbose", action="store_true", help="log progress to stderr")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        run = RunConfig(
            command=args.command,
            config=_load_config(args.config),
            config_dir=Path(args.config).resolve().parent,
            seed=args.seed,
            out=args.out,
            fmt=args.format,
            threads=max(1, args.threads),
            verbose=args.verbose,
        )
        if run.command == "estimate":
            report = cmd_estimate(run)
            if run.fmt == "csv":
                text = _estimates_csv(report)
                if run.out:
                    Path(run.out).write_text(text, encoding="utf-8")
                else:
                    sys.stdout.write(text)
            else:
                _dump_json(report, run.out)
        elif run.command == "simulate":
            cmd_simulate(run)
        else:
            _dump_json(cmd_metrics(run), run.out)
    except MultirobustError as exc:
        error_report = {
            "schema_version": SCHEMA_VERSION,
            "error": exc.tag,
            "message": str(exc),
            "exit_code": exc.exit_code,
        }
        diag = getattr(exc, "diagnostics", None)
        if diag is not None:
            error_report["diagnostics"] = {
                "iterations": diag.iterations,
                "residual": diag.residual,
                "feasibility_margin": diag.feasibility_margin,
            }
        sys.stderr.write(json.dumps(error_report, indent=2, sort_keys=True) + "\n")
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
