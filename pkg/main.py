from __future__ import annotations

import csv
import functools
import json
import logging
import os
import socket
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

import click
from dotenv import load_dotenv
from pydantic import BaseModel

from framework.errors import DataError, DyMoEError
from middleware.access_audit import AccessAudit
from models.config import MixtureSpec, SynthConfig, TrainConfig
from models.manifest import RunManifest
from models.metrics import MetricsReport
from models.reports import ReportRow
from resources import resource_path
from services.baselines import RUNNERS
from services.evalx import build_report, eval_threads, expert_specialization, gate_accuracy, write_specialization
from services.graph_store import load_directory, write_sequence
from services.synth import synth_gaussian_sequence
from services.theorem_bench import run_theorem
from services.trainer import run_incremental
from utils.config_io import dump_key_values, load_config
from utils.logs import TrainLog, configure_logging

load_dotenv()

log_level = os.environ.get("DYMOE_LOG_LEVEL", "INFO")

logger = logging.getLogger("dymoe")

METHODS = ["dymoe", *RUNNERS]


# -----------------------------------------------------------------------------
# Helpers
# -----------------------------------------------------------------------------
def make_manifest(command: str, seed: Optional[int], settings: Dict[str, Any], outputs: List[Path], status: int = 0, message: str = "OK") -> RunManifest:
    return RunManifest(
        status=status,
        status_message=message,
        timestamp=datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"),
        host=socket.gethostname(),
        command=command,
        seed=seed,
        settings=settings,
        outputs=sorted(p.name for p in outputs),
    )


def write_json(path: Path, payload: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(payload + "\n", encoding="utf-8")
    return path


def load_settings(model, config_path: Optional[str], default_name: str, overrides: Dict[str, Any]):
    path = Path(config_path) if config_path else resource_path(default_name)
    return load_config(model, path, overrides)


def write_config(out: Path, config: BaseModel) -> Path:
    """Resolved settings, overrides applied, in the same key = value form ``--config`` reads."""
    path = out / "config.cfg"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_key_values(config), encoding="utf-8")
    return path


def exits_on_error(command):
    """Report a DyMoEError as a one-line diagnostic and exit with its code."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except DyMoEError as exc:
            logger.error("%s: %s", type(exc).__name__, exc.detail)
            raise SystemExit(exc.exit_code) from None

    return wrapper


# -----------------------------------------------------------------------------
# Commands
# -----------------------------------------------------------------------------
@click.group()
@click.option("--log-level", default=log_level, show_default=True, help="Logging level.")
def cli(log_level: str) -> None:
    """Incremental node classification with a dynamic mixture of graph experts."""
    configure_logging(log_level)


@cli.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="Synth config (key = value).")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True, help="Dataset directory to write.")
@click.option("--seed", type=int, default=None, help="Overrides the config seed.")
@exits_on_error
def synth(config_path: Optional[str], out_dir: str, seed: Optional[int]) -> None:
    """Generate a Gaussian block sequence as nodes.tsv / edges.tsv."""
    cfg = load_settings(SynthConfig, config_path, "synth_acceptance.cfg", {"seed": seed})
    out = Path(out_dir)
    written = write_sequence(synth_gaussian_sequence(cfg), out)
    written.append(write_config(out, cfg))
    manifest = make_manifest("synth", cfg.seed, cfg.model_dump(mode="json"), written)
    write_json(out / "manifest.json", manifest.model_dump_json(indent=2))
    click.echo(f"wrote {len(written)} files to {out}")


@cli.command()
@click.option("--data", "data_dir", type=click.Path(file_okay=False, exists=True), required=True, help="Dataset directory.")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="Training config (key = value).")
@click.option("--method", type=click.Choice(METHODS), default="dymoe", show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True, help="Run directory to write.")
@click.option("--seed", type=int, default=None)
@click.option("--k", type=int, default=None, help="Active experts per node.")
@click.option("--p", type=float, default=None, help="Memory budget fraction.")
@click.option("--mode", type=click.Choice(["dense", "sparse"]), default=None)
@click.option("--gamma", type=float, default=None, help="Block-guided loss weight.")
@click.option("--delta", type=float, default=None, help="Graph block-guided loss weight.")
@click.option("--epochs", type=int, default=None)
@click.option("--arrival-gate/--no-arrival-gate", default=None, help="Mask attention with learned arrival gates.")
@exits_on_error
def run(data_dir, config_path, method, out_dir, seed, k, p, mode, gamma, delta, epochs, arrival_gate) -> None:
    """Train and evaluate one method over every block of a dataset."""
    overrides = {"seed": seed, "k": k, "p": p, "mode": mode, "gamma": gamma, "delta": delta, "epochs": epochs, "use_arrival_gate": arrival_gate}
    cfg = load_settings(TrainConfig, config_path, "run_default.cfg", overrides)
    seq = load_directory(data_dir, seed=cfg.seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    threads = eval_threads()
    audit = AccessAudit()
    settings = {**cfg.model_dump(mode="json"), "task_kind": seq.task_kind}

    with TrainLog(out / "train_log.csv") as train_log:
        if method == "dymoe":
            result = run_incremental(seq, cfg, out, audit, train_log, threads)
        else:
            result = RUNNERS[method](seq, cfg, out, audit, train_log, threads)

    written = [out / "train_log.csv", write_config(out, cfg), *result.checkpoints]
    gate_acc = None
    if method == "dymoe":
        table = expert_specialization(result.model, seq, cfg, audit, threads)
        written.append(write_specialization(table, out / "specialization.csv"))
        gate_acc = gate_accuracy(result.model, seq, cfg, audit)
        written.append(out / "memory.tsv")
    audit.assert_clean()

    report = build_report(method, cfg.seed, result.matrix, result.wall_times, settings, gate_acc, audit.violations)
    written.append(write_json(out / "metrics.json", report.model_dump_json(indent=2)))
    write_json(out / "manifest.json", make_manifest("run", cfg.seed, {"method": method, **settings}, written).model_dump_json(indent=2))
    click.echo(f"{method}: AA={report.AA:.4f} AF={report.AF:.4f}")


@cli.command()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="Mixture config (key = value).")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--seed", type=int, default=None)
@click.option("--sweep/--no-sweep", default=True, show_default=True, help="Also run the d/sigma sweep.")
@exits_on_error
def theorem(config_path: Optional[str], out_dir: str, seed: Optional[int], sweep: bool) -> None:
    """Compare summed-logit and gated combination of two experts on a Gaussian mixture."""
    spec = load_settings(MixtureSpec, config_path, "theorem_default.cfg", {"seed": seed})
    report = run_theorem(spec, with_sweep=sweep, threads=eval_threads())
    out = Path(out_dir)
    written = [write_json(out / "theorem_report.json", report.model_dump_json(indent=2)), write_config(out, spec)]
    write_json(out / "manifest.json", make_manifest("theorem", spec.seed, spec.model_dump(mode="json"), written).model_dump_json(indent=2))
    click.echo(f"delta={report.delta:.4f} stderr={report.stderr:.4f} verdict={report.verdict}")


def report_row(run_dir: Path) -> ReportRow:
    path = run_dir / "metrics.json"
    if not path.is_file():
        raise DataError(f"{path} not found")
    metrics = MetricsReport.model_validate(json.loads(path.read_text(encoding="utf-8")))
    return ReportRow(
        run=run_dir.name,
        method=metrics.method,
        seed=metrics.seed,
        k=metrics.settings.get("k"),
        p=metrics.settings.get("p"),
        mode=metrics.settings.get("mode"),
        AA=metrics.AA,
        AF=metrics.AF,
        diagonal=metrics.diagonal,
        wall_seconds=sum(metrics.wall_times.train_seconds),
        final_AA=metrics.final_AA,
    )


@cli.command()
@click.argument("run_dirs", nargs=-1, required=True, type=click.Path(file_okay=False))
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None, help="CSV file (stdout when omitted).")
@exits_on_error
def report(run_dirs, out_path: Optional[str]) -> None:
    """Collect metrics.json of several runs into one CSV, ordered by method, k, p and seed."""
    rows = sorted(
        (report_row(Path(d)) for d in run_dirs),
        key=lambda r: (r.method, -1 if r.k is None else r.k, -1.0 if r.p is None else r.p, r.seed, r.run),
    )
    fieldnames = list(ReportRow.model_fields)
    handle = open(out_path, "w", encoding="utf-8", newline="") if out_path else click.get_text_stream("stdout")
    try:
        writer = csv.DictWriter(handle, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            record = row.model_dump()
            record["diagonal"] = ";".join(f"{v:.6f}" for v in row.diagonal)
            writer.writerow(record)
    finally:
        if out_path:
            handle.close()


# -----------------------------------------------------------------------------
# Entrypoint for `python main.py`
# -----------------------------------------------------------------------------
if __name__ == "__main__":
    cli()
