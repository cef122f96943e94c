"""Command-line interface for the structural basis distiller."""

import dataclasses
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import click
import numpy as np
from rich.console import Console
from rich.panel import Panel
from rich.progress import Progress

from .basis import basis_dataset, export_thresholded, load_basis, save_basis
from .config import ABLATIONS, META_MODES, PRESETS, ExperimentConfig, load_config, override
from .distill import TRACE_COLUMNS, DistillTrace, alignment_gaps, distill
from .errors import DistillerError, InputError
from .formatter import ReportFormatter
from .gnn import load_params, save_params
from .graphdata import (
    CRITERIA,
    NODE_DENSITY,
    SplitSpec,
    dataset_stats,
    generate_spurious_motif,
    load_jsonl,
    merge,
    save_jsonl,
    split_by_density,
)
from .infer import (
    PipelineResult,
    embed_dataset,
    evaluate,
    retrain_fresh,
    run_pipeline,
    train_source_only,
)
from .structstats import MOMENT_NAMES, profile

console = Console()

EXIT_RUNTIME = 1
EXIT_INPUT = 2

SWEEP_GRIDS: Dict[str, List[float]] = {
    "k": [5, 10, 20, 30, 40, 50],
    "lambda1": [0.1, 0.3, 0.5, 0.7, 0.9],
    "lambda2": [0.1, 0.3, 0.5, 0.7, 0.9],
}
JOINT_PARAM = "lambda"
SWEEP_METRICS = ["accuracy", "auc", "energy_gap", "weighted_moment_gap", "steps"]
SWEEP_COLUMNS = ["param", "value", "seed", *SWEEP_METRICS]
SURFACE_COLUMNS = ["lambda1", "lambda2", "seed", *SWEEP_METRICS]
ABLATION_VARIANTS = ["full", *ABLATIONS]


class DistillerGroup(click.Group):
    """Click group that turns package errors into exit codes."""

    def invoke(self, ctx: click.Context) -> Any:
        try:
            return super().invoke(ctx)
        except (InputError, FileNotFoundError) as e:
            console.print(f"[bold red]Error: {e}[/bold red]")
            ctx.exit(EXIT_INPUT)
        except DistillerError as e:
            console.print(f"[bold red]Error: {e}[/bold red]")
            ctx.exit(EXIT_RUNTIME)


def experiment_options(func):
    """Options shared by every command that distills a basis."""
    options = [
        click.option("--source", "-s", help="Labeled source dataset (JSONL)"),
        click.option("--target", "-t", help="Target dataset (JSONL)"),
        click.option("--config", "-c", "config_path", help="INI config file"),
        click.option(
            "--preset",
            type=click.Choice(PRESETS),
            default=None,
            help="Named defaults applied before the config file (default: desk)",
        ),
        click.option("--seed", type=int, multiple=True, help="Root seed (repeatable)"),
        click.option("--out", "-o", help="Output directory"),
        click.option("--k", type=int, help="Number of prototypes"),
        click.option("--lambda1", type=float, help="Weight of the geometric alignment loss"),
        click.option("--lambda2", type=float, help="Weight of the spectral alignment loss"),
        click.option("--t-inner", type=int, help="Inner training steps"),
        click.option("--meta-mode", type=click.Choice(META_MODES), help="Meta-gradient mode"),
        click.option("--quiet", "-q", is_flag=True, help="Suppress progress bars"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _load_experiment(
    source: Optional[str],
    target: Optional[str],
    config_path: Optional[str],
    preset: Optional[str],
    seed: Sequence[int],
    out: Optional[str],
    k: Optional[int],
    lambda1: Optional[float],
    lambda2: Optional[float],
    t_inner: Optional[int],
    meta_mode: Optional[str],
    require_paths: bool = True,
) -> ExperimentConfig:
    """Preset, then config file, then command-line flags."""
    cfg = load_config(config_path, preset)
    override(cfg, "experiment", source=source, target=target, out_dir=out)
    if seed:
        cfg.seeds = list(seed)
    override(cfg, "distill", k=k, lambda1=lambda1, lambda2=lambda2, t_inner=t_inner, meta_mode=meta_mode)
    cfg.validate(require_paths=require_paths)
    return cfg


def _seeded(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    return dataclasses.replace(
        cfg,
        distill=dataclasses.replace(cfg.distill, seed=seed),
        infer=dataclasses.replace(cfg.infer, seed=seed),
    )


def _load_domains(cfg: ExperimentConfig, silent: bool):
    source = load_jsonl(cfg.source, name="source", silent=silent)
    target = load_jsonl(cfg.target, name="target", silent=silent)
    source.require_nonempty("source")
    target.require_nonempty("target")
    return source, target


def _abort_dump(path: Path):
    def dump(trace: DistillTrace) -> None:
        ReportFormatter.save_rows_to_csv(trace.rows(), str(path), TRACE_COLUMNS)
        console.print(f"[yellow]Partial trace ({len(trace)} steps) written to {path}[/yellow]")

    return dump


def _summary_row(result: PipelineResult, target) -> Dict[str, Any]:
    gaps = alignment_gaps(result.basis, profile(target), result.trace.gamma)
    return {
        "accuracy": result.report.accuracy,
        "auc": result.report.auc,
        "energy_gap": gaps.energy_gap,
        "weighted_moment_gap": gaps.weighted_moment_gap,
        "steps": len(result.trace),
    }


def _mean_std(values: List[Optional[float]]) -> Dict[str, Optional[float]]:
    present = [v for v in values if v is not None]
    if not present:
        return {"mean": None, "std": None}
    return {"mean": float(np.mean(present)), "std": float(np.std(present))}


def _parse_grid(text: Optional[str], default: List[float], hint: str) -> List[float]:
    if not text:
        return list(default)
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"not a list of numbers: {text}", param_hint=hint)


def _numeric(row: Dict[str, str]) -> Dict[str, Any]:
    """CSV strings back to ints/floats where they parse."""
    out: Dict[str, Any] = {}
    for key, text in row.items():
        for kind in (int, float):
            try:
                out[key] = kind(text)
                break
            except (TypeError, ValueError):
                continue
        else:
            out[key] = text
    return out


@click.group(cls=DistillerGroup)
def cli():
    """Distill structural basis graphs for graph domain adaptation."""
    pass


@cli.command()
@click.option("--out", "-o", default="data", show_default=True, help="Output directory")
@click.option("--seed", type=int, default=0, show_default=True, help="Root seed")
@click.option("--n-graphs", type=click.IntRange(min=3), default=300, show_default=True)
@click.option(
    "--bias",
    type=click.FloatRange(0.0, 1.0),
    default=0.9,
    show_default=True,
    help="Base/label correlation of the source domain",
)
@click.option(
    "--target-bias",
    type=click.FloatRange(0.0, 1.0),
    default=1.0 / 3.0,
    help="Base/label correlation of the target domain (default: 1/3, unbiased)",
)
def generate(out, seed, n_graphs, bias, target_bias):
    """Generate biased source and unbiased target Spurious-Motif datasets."""
    out_dir = Path(out)
    source = generate_spurious_motif(n_graphs, bias, seed, name="source")
    # distinct seed key so the two domains never share base graphs
    target = generate_spurious_motif(n_graphs, target_bias, seed + 1, name="target")
    save_jsonl(source, str(out_dir / "source.jsonl"), silent=False)
    save_jsonl(target, str(out_dir / "target.jsonl"), silent=False)


@cli.command()
@click.argument("dataset")
@click.option("--out", "-o", default="splits", show_default=True, help="Output directory")
@click.option("--criterion", type=click.Choice(CRITERIA), default=NODE_DENSITY, show_default=True)
@click.option("--bins", type=click.IntRange(min=2), default=4, show_default=True)
def split(dataset, out, criterion, bins):
    """Split a dataset into density domains M0..M{bins-1}."""
    data = load_jsonl(dataset)
    spec = SplitSpec(criterion=criterion, num_bins=bins)
    parts = split_by_density(data, spec)
    rows = []
    for index, part in enumerate(parts):
        save_jsonl(part, str(Path(out) / f"{part.name}.jsonl"))
        rows.append(
            {
                "domain": part.name,
                "graphs": len(part),
                "low": spec.boundaries[index],
                "high": spec.boundaries[index + 1],
            }
        )
    ReportFormatter.print_summary_table(rows, title=f"Split by {criterion}")
    console.print(f"[bold green]Saved {len(parts)} domains to {out}[/bold green]")


@cli.command()
@click.argument("path")
def stats(path):
    """Print statistics of a dataset (JSONL) or a basis checkpoint (JSON)."""
    if path.endswith(".jsonl"):
        data = load_jsonl(path)
    else:
        data = basis_dataset(load_basis(path))
    summary = dataset_stats(data).to_dict()
    structure = profile(data)
    summary["mean_moments"] = dict(zip(MOMENT_NAMES, structure.mean_moments.tolist()))
    summary["mean_energy"] = structure.mean_energy
    summary["graphs"] = [
        {**dict(zip(MOMENT_NAMES, row.tolist())), "energy": float(energy)}
        for row, energy in zip(structure.moments, structure.energies)
    ]
    console.print_json(data=summary)


@cli.command("distill")
@experiment_options
def distill_cmd(source, target, config_path, preset, seed, out, k, lambda1, lambda2, t_inner, meta_mode, quiet):
    """Stage 1: distill a structural basis from source toward target."""
    cfg = _load_experiment(
        source, target, config_path, preset, seed[:1], out, k, lambda1, lambda2, t_inner, meta_mode
    )
    cfg = _seeded(cfg, cfg.seeds[0])
    src, tgt = _load_domains(cfg, quiet)
    out_dir = Path(cfg.out_dir)
    basis, trace = distill(
        src, tgt, cfg.model, cfg.distill, silent=quiet,
        on_abort=_abort_dump(out_dir / "trace.csv"),
    )
    save_basis(basis, str(out_dir / "basis.json"), silent=False)
    ReportFormatter.save_rows_to_csv(trace.rows(), str(out_dir / "trace.csv"), TRACE_COLUMNS, silent=False)
    if not quiet:
        ReportFormatter.print_trace_table(trace.rows())


@cli.command("train-infer")
@click.option("--basis", "-b", "basis_path", required=True, help="Basis checkpoint (JSON)")
@click.option("--target", "-t", help="Labeled target dataset to evaluate on (JSONL)")
@click.option("--config", "-c", "config_path", help="INI config file")
@click.option("--preset", type=click.Choice(PRESETS), default=None)
@click.option("--seed", type=int, default=0, show_default=True, help="Root seed")
@click.option("--out", "-o", default="runs", show_default=True, help="Output directory")
@click.option("--quiet", "-q", is_flag=True, help="Suppress progress bars")
def train_infer(basis_path, target, config_path, preset, seed, out, quiet):
    """Stage 2: train a fresh GIN on the basis alone."""
    cfg = load_config(config_path, preset)
    cfg.infer.seed = seed
    cfg.infer.validate()
    basis = load_basis(basis_path)
    params = retrain_fresh(basis, cfg.infer, silent=quiet)
    out_dir = Path(out)
    save_params(params, str(out_dir / "model.json"))
    console.print(f"[bold green]Saved model to {out_dir / 'model.json'}[/bold green]")
    if target:
        report = evaluate(params, load_jsonl(target, name="target"))
        ReportFormatter.save_json(
            {"seed": seed, "report": report.to_dict()}, str(out_dir / "report.json"), silent=False
        )
        ReportFormatter.print_report_table(report.to_dict())


@cli.command("evaluate")
@click.option("--model", "-m", "model_path", required=True, help="Model checkpoint (JSON)")
@click.option("--target", "-t", required=True, help="Labeled target dataset (JSONL)")
@click.option("--out", "-o", help="Report file (JSON); printed only if omitted")
@click.option("--dump-embeddings", help="Write target readout vectors to this CSV")
def evaluate_cmd(model_path, target, out, dump_embeddings):
    """Evaluate a trained model on target graphs."""
    params = load_params(model_path)
    data = load_jsonl(target, name="target")
    report = evaluate(params, data)
    if out:
        ReportFormatter.save_json(report.to_dict(), out, silent=False)
    ReportFormatter.print_report_table(report.to_dict())
    if dump_embeddings:
        ReportFormatter.save_embeddings_csv(
            embed_dataset(params, data), data.labels, dump_embeddings, silent=False
        )


@cli.command()
@experiment_options
@click.option("--ablate", multiple=True, type=click.Choice(ABLATIONS), help="Disable a component")
@click.option("--dump-embeddings", is_flag=True, help="Write target readout vectors per seed")
def run(source, target, config_path, preset, seed, out, k, lambda1, lambda2, t_inner, meta_mode, quiet, ablate, dump_embeddings):
    """Full pipeline per seed plus an aggregate mean/std report."""
    cfg = _load_experiment(
        source, target, config_path, preset, seed, out, k, lambda1, lambda2, t_inner, meta_mode
    )
    if ablate:
        cfg.ablations = sorted(set(ablate))
    src, tgt = _load_domains(cfg, quiet)
    out_dir = Path(cfg.out_dir)

    per_seed = []
    for s in cfg.seeds:
        seeded = _seeded(cfg, s)
        seed_dir = out_dir / f"seed{s}"
        result = run_pipeline(
            src, tgt, seeded.model, seeded.distill, seeded.infer, cfg.ablations, silent=quiet
        )
        save_basis(result.basis, str(seed_dir / "basis.json"))
        ReportFormatter.save_rows_to_csv(result.trace.rows(), str(seed_dir / "trace.csv"), TRACE_COLUMNS)
        ReportFormatter.save_json(
            {
                "seed": s,
                "ablations": result.ablations,
                "report": result.report.to_dict(),
                "distill_steps": len(result.trace),
                "converged_at": result.trace.converged_at,
            },
            str(seed_dir / "report.json"),
        )
        if dump_embeddings:
            ReportFormatter.save_embeddings_csv(
                embed_dataset(result.params, tgt), tgt.labels, str(seed_dir / "embeddings.csv")
            )
        per_seed.append({"seed": s, "accuracy": result.report.accuracy, "auc": result.report.auc})
        console.print(
            f"[green]seed {s}: accuracy {ReportFormatter.format_metric(result.report.accuracy)}[/green]"
        )

    aggregate = {
        "seeds": list(cfg.seeds),
        "ablations": list(cfg.ablations),
        "accuracy": _mean_std([r["accuracy"] for r in per_seed]),
        "auc": _mean_std([r["auc"] for r in per_seed]),
        "per_seed": per_seed,
    }
    ReportFormatter.save_json(aggregate, str(out_dir / "aggregate.json"), silent=False)
    ReportFormatter.print_summary_table(per_seed, title="Per-seed results")
    console.print(
        Panel(
            f"accuracy {ReportFormatter.format_metric(aggregate['accuracy']['mean'])}"
            f" ± {ReportFormatter.format_metric(aggregate['accuracy']['std'])}",
            title="Aggregate",
        )
    )


@cli.command()
@experiment_options
@click.option(
    "--param",
    type=click.Choice([*sorted(SWEEP_GRIDS), JOINT_PARAM]),
    required=True,
    help="Hyper-parameter to sweep; 'lambda' sweeps the lambda1 x lambda2 grid",
)
@click.option("--values", help="Comma-separated grid (default: the standard grid for --param)")
@click.option("--lambda1-values", help="lambda1 axis of the joint grid (comma-separated)")
@click.option("--lambda2-values", help="lambda2 axis of the joint grid (comma-separated)")
def sweep(
    source, target, config_path, preset, seed, out, k, lambda1, lambda2, t_inner, meta_mode, quiet,
    param, values, lambda1_values, lambda2_values,
):
    """Sensitivity sweep over K, lambda1, lambda2 or the joint lambda grid; rows are flushed as they finish."""
    cfg = _load_experiment(
        source, target, config_path, preset, seed, out, k, lambda1, lambda2, t_inner, meta_mode
    )
    joint = param == JOINT_PARAM
    if joint:
        axis1 = _parse_grid(lambda1_values, SWEEP_GRIDS["lambda1"], "--lambda1-values")
        axis2 = _parse_grid(lambda2_values, SWEEP_GRIDS["lambda2"], "--lambda2-values")
        points = [{"lambda1": a, "lambda2": b} for a in axis1 for b in axis2]
        columns = SURFACE_COLUMNS
    else:
        grid = _parse_grid(values, SWEEP_GRIDS[param], "--values")
        points = [{param: int(v) if param == "k" else float(v)} for v in grid]
        columns = SWEEP_COLUMNS
    src, tgt = _load_domains(cfg, True)
    path = Path(cfg.out_dir) / f"sweep_{param}.csv"
    if path.exists():
        path.unlink()

    rows = []
    with Progress(console=console, transient=True, disable=quiet) as progress:
        task = progress.add_task(f"[cyan]Sweeping {param}...", total=len(points) * len(cfg.seeds))
        for point in points:
            for s in cfg.seeds:
                seeded = _seeded(cfg, s)
                distill_cfg = dataclasses.replace(seeded.distill, **point)
                result = run_pipeline(src, tgt, seeded.model, distill_cfg, seeded.infer, silent=True)
                cell = dict(point) if joint else {"param": param, "value": point[param]}
                row = {**cell, "seed": s, **_summary_row(result, tgt)}
                ReportFormatter.append_csv_row(row, str(path), columns)
                rows.append(row)
                progress.update(task, advance=1)

    if joint:
        ReportFormatter.print_surface_table(rows)
    else:
        ReportFormatter.print_summary_table(rows, title=f"Sweep over {param}")
    console.print(f"[bold green]Saved {len(rows)} rows to {path}[/bold green]")


@cli.command()
@experiment_options
def ablate(source, target, config_path, preset, seed, out, k, lambda1, lambda2, t_inner, meta_mode, quiet):
    """Full pipeline and the four single-component ablations per seed."""
    cfg = _load_experiment(
        source, target, config_path, preset, seed, out, k, lambda1, lambda2, t_inner, meta_mode
    )
    src, tgt = _load_domains(cfg, True)
    rows = []
    with Progress(console=console, transient=True, disable=quiet) as progress:
        task = progress.add_task(
            "[cyan]Running ablations...", total=len(ABLATION_VARIANTS) * len(cfg.seeds)
        )
        for variant in ABLATION_VARIANTS:
            ablations: Tuple[str, ...] = () if variant == "full" else (variant,)
            for s in cfg.seeds:
                seeded = _seeded(cfg, s)
                result = run_pipeline(
                    src, tgt, seeded.model, seeded.distill, seeded.infer, ablations, silent=True
                )
                rows.append({"variant": variant, "seed": s, **_summary_row(result, tgt)})
                progress.update(task, advance=1)

    path = Path(cfg.out_dir) / "ablation.csv"
    ReportFormatter.save_rows_to_csv(rows, str(path), ["variant", "seed", *SWEEP_METRICS], silent=False)
    ReportFormatter.print_summary_table(rows, title="Ablations")


@cli.command()
@experiment_options
def baseline(source, target, config_path, preset, seed, out, k, lambda1, lambda2, t_inner, meta_mode, quiet):
    """Source-only GIN trained on source graphs and evaluated on target."""
    cfg = _load_experiment(
        source, target, config_path, preset, seed, out, k, lambda1, lambda2, t_inner, meta_mode
    )
    src, tgt = _load_domains(cfg, quiet)
    per_seed = []
    for s in cfg.seeds:
        seeded = _seeded(cfg, s)
        params = train_source_only(src, seeded.model, seeded.infer, silent=quiet)
        report = evaluate(params, tgt)
        per_seed.append({"seed": s, "accuracy": report.accuracy, "auc": report.auc})
    payload = {
        "seeds": list(cfg.seeds),
        "accuracy": _mean_std([r["accuracy"] for r in per_seed]),
        "auc": _mean_std([r["auc"] for r in per_seed]),
        "per_seed": per_seed,
    }
    ReportFormatter.save_json(payload, str(Path(cfg.out_dir) / "baseline.json"), silent=False)
    ReportFormatter.print_summary_table(per_seed, title="Source-only baseline")


@cli.command()
@click.option("--basis", "-b", "basis_path", required=True, help="Basis checkpoint (JSON)")
@click.option("--out", "-o", required=True, help="Output dataset (JSONL)")
@click.option("--threshold", type=click.FloatRange(0.0, 1.0), default=0.5, show_default=True)
@click.option("--merge-with", help="Also write the basis appended to this dataset")
def export(basis_path, out, threshold, merge_with):
    """Export the basis as hard graphs (edge probability > threshold)."""
    hard = export_thresholded(load_basis(basis_path), threshold)
    save_jsonl(hard, out, silent=False)
    if merge_with:
        combined = merge([load_jsonl(merge_with), hard], name="combined")
        merged_path = str(Path(out).with_name(Path(out).stem + "_merged.jsonl"))
        save_jsonl(combined, merged_path, silent=False)


@cli.command()
@click.argument("path")
@click.option("--metric", default="accuracy", show_default=True, help="Cell value of a joint sweep surface")
@click.option("--last", type=click.IntRange(min=1), default=10, show_default=True, help="Trace steps to show")
def show(path, metric, last):
    """Re-render a saved trace, sweep or ablation CSV as a table."""
    try:
        rows = ReportFormatter.load_rows_from_csv(path)
    except ValueError as e:
        raise InputError(str(e)) from None
    columns = set(rows[0]) if rows else set()
    if set(TRACE_COLUMNS) <= columns:
        ReportFormatter.print_trace_table([_numeric(r) for r in rows], title=Path(path).name, last=last)
    elif set(SURFACE_COLUMNS[:2]) <= columns:
        if metric not in columns:
            raise InputError(f"{path} has no column {metric!r}")
        ReportFormatter.print_surface_table(rows, metric, title=Path(path).name)
    else:
        ReportFormatter.print_summary_table([_numeric(r) for r in rows], title=Path(path).name)


def main():
    """Main entry point."""
    try:
        cli()
    except KeyboardInterrupt:
        console.print("\n[yellow]Operation cancelled by user.[/yellow]")
        sys.exit(EXIT_RUNTIME)
    except Exception as e:
        console.print(f"[bold red]Error: {str(e)}[/bold red]")
        sys.exit(EXIT_RUNTIME)


if __name__ == "__main__":
    main()
