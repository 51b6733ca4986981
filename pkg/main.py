from pathlib import Path
from typing import Optional

import typer
from pydantic import ValidationError
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from config import build_config, format_flat, settings, setup_logging
from controllers.bench_controller import run_benchmark
from controllers.eval_controller import evaluate_corpus, evaluate_matrix, resolve_source
from controllers.segment_controller import segment_image
from controllers.synth_controller import export_corpus
from schemas.models import CliConfig, SyntheticPlan
from services.errors import CorpusError

app = typer.Typer(help="Iris segmentation: LoG pupil localization and zero-crossing boundary refinement")
console = Console()

EXIT_OK = 0
EXIT_PIPELINE = 1
EXIT_USAGE = 2
EXIT_BUDGET = 3
USAGE_ERRORS = {"CORPUS_ERROR", "IMAGE_LOAD_ERROR", "OUTPUT_ERROR"}


def log_info(msg): console.print(f"[blue]ℹ️ {escape(msg)}[/blue]")
def log_success(msg): console.print(f"[green]✅ {escape(msg)}[/green]")
def log_error(msg): console.print(f"[red]❌ {escape(msg)}[/red]")


def exit_code(response: dict) -> int:
    if response["success"]:
        return EXIT_OK
    if response["error"] == "BUDGET_EXCEEDED":
        return EXIT_BUDGET
    if response["error"] in USAGE_ERRORS:
        return EXIT_USAGE
    return EXIT_PIPELINE


def finish(response: dict):
    if response["success"]:
        log_success(response["message"])
    else:
        log_error(f"{response['error']}: {response['message']}")
    raise typer.Exit(code=exit_code(response))


def cli_config(ctx: typer.Context, **fields) -> CliConfig:
    """Validate the command's options before anything runs"""
    try:
        return CliConfig(pipeline=ctx.obj["pipeline"], **fields)
    except ValidationError as e:
        log_error(f"Invalid options: {e}")
        raise typer.Exit(code=EXIT_USAGE)


def run_default(ctx: typer.Context, key: str, value):
    """Explicit option value, else the run default from the environment or --config"""
    return ctx.obj["run"][key] if value is None else value


def plan_seed(ctx: typer.Context, source, seed: Optional[int]) -> Optional[int]:
    """Explicit --seed; the built-in plan takes the run default, plan files keep their own seed"""
    if seed is None and source is None:
        return ctx.obj["run"]["seed"]
    return seed


@app.callback(invoke_without_command=True)
def main(
    ctx: typer.Context,
    t1: Optional[float] = typer.Option(None, "--t1", help="Lower tri-level threshold (env IRIS_T1)"),
    t2: Optional[float] = typer.Option(None, "--t2", help="Upper tri-level threshold (env IRIS_T2)"),
    r_avg: Optional[float] = typer.Option(None, "--r-avg", help="Expected pupil radius in pixels (env IRIS_R_AVG)"),
    lambda_a: Optional[float] = typer.Option(None, "--lambda-a", help="Seed mask threshold (env IRIS_LAMBDA_A)"),
    lambda_c: Optional[float] = typer.Option(None, "--lambda-c", help="Relative edge strength cut (env IRIS_LAMBDA_C)"),
    sigma_zc: Optional[float] = typer.Option(None, "--sigma-zc", help="Zero-crossing LoG sigma (env IRIS_SIGMA_ZC)"),
    min_component: Optional[int] = typer.Option(None, "--min-component", help="Smallest kept edge component (env IRIS_MIN_COMPONENT)"),
    grow_tol: Optional[float] = typer.Option(None, "--grow-tol", help="Region growing tolerance (env IRIS_GROW_TOL)"),
    stable_halfwidth: Optional[float] = typer.Option(None, "--stable-halfwidth", help="Stable zone half-width in radians (env IRIS_STABLE_HALFWIDTH)"),
    config_file: Optional[Path] = typer.Option(None, "--config", help="key=value config file, as written by --print-config"),
    print_config: bool = typer.Option(False, "--print-config", help="Print the effective configuration and exit"),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging"),
):
    setup_logging("DEBUG" if verbose else settings.LOG_LEVEL)
    overrides = {
        "t1": t1,
        "t2": t2,
        "r_avg": r_avg,
        "lambda_a": lambda_a,
        "lambda_c": lambda_c,
        "sigma_zc": sigma_zc,
        "min_component": min_component,
        "grow_tolerance": grow_tol,
        "stable_halfwidth": stable_halfwidth,
    }
    try:
        pipeline, run = build_config(str(config_file) if config_file else None, overrides)
    except (ValidationError, ValueError, FileNotFoundError) as e:
        log_error(f"Invalid configuration: {e}")
        raise typer.Exit(code=EXIT_USAGE)

    ctx.obj = {"pipeline": pipeline, "run": run}
    if print_config:
        typer.echo(format_flat({**pipeline.to_flat(), **run}))
        raise typer.Exit(code=EXIT_OK)
    if ctx.invoked_subcommand is None:
        typer.echo(ctx.get_help())
        raise typer.Exit(code=EXIT_USAGE)


@app.command()
def segment(
    ctx: typer.Context,
    image: Path = typer.Argument(..., help="PNG or PGM eye image"),
    output: Path = typer.Option(Path("out"), "--output", "-o", help="Directory for the record and overlay"),
    debug: Optional[bool] = typer.Option(None, "--debug/--no-debug", help="Also write the intermediate rasters (env IRIS_DEBUG)"),
):
    """Segment one image: result record plus overlay PNG"""
    cfg = cli_config(ctx, command="segment", input_path=str(image), output_path=str(output),
                     debug=settings.DEBUG if debug is None else debug)
    response = segment_image(cfg.input_path, cfg.pipeline, cfg.output_path, debug=cfg.debug)
    if response["success"]:
        result = response["data"]["result"]
        pupil, iris = result["pupil"], result["iris"]
        log_info(f"pupil ({pupil['cx']:.1f}, {pupil['cy']:.1f}) r={pupil['r']:.1f}, "
                 f"iris ({iris['cx']:.1f}, {iris['cy']:.1f}) r={iris['r']:.1f}")
        log_info(f"overlay: {response['data']['overlay_path']}")
    finish(response)


@app.command("eval")
def eval_command(
    ctx: typer.Context,
    source: Optional[str] = typer.Argument(None, help="Corpus directory or plan file; default synthetic plan if omitted"),
    output: Optional[Path] = typer.Option(None, "--output", "-o", help="CSV report path (directory with --matrix)"),
    matrix: bool = typer.Option(False, "--matrix", help="Run every noise and occlusion condition"),
    jobs: Optional[int] = typer.Option(None, "--jobs", "-j", help="Parallel images (env IRIS_JOBS)"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Synthetic plan seed (env IRIS_SEED)"),
):
    """Evaluate Ae per image and Ar over a corpus"""
    cfg = cli_config(ctx, command="eval", input_path=source, output_path=str(output) if output else None,
                     jobs=run_default(ctx, "jobs", jobs), seed=run_default(ctx, "seed", seed))
    seed = plan_seed(ctx, source, seed)
    if matrix:
        response = evaluate_matrix(cfg.input_path, cfg.pipeline, jobs=cfg.jobs, seed=seed,
                                   output_dir=cfg.output_path, progress=True)
        if response["success"]:
            table = Table(show_header=True, header_style="bold magenta", title="Robustness Matrix")
            for column in ("Condition", "Ar", "Mean Ae", "Pupil err", "Gap overlap", "Mean ms"):
                table.add_column(column)
            for name, report in response["data"]["conditions"].items():
                overlap, pupil_error = report["mean_gap_overlap"], report["mean_pupil_center_error"]
                table.add_row(name, f"{report['ar']:.1f}", f"{report['mean_ae']:.4f}",
                              "-" if pupil_error is None else f"{pupil_error:.2f}",
                              "-" if overlap is None else f"{overlap:.2f}", f"{report['mean_ms']:.1f}")
            console.print(table)
    else:
        response = evaluate_corpus(cfg.input_path, cfg.pipeline, jobs=cfg.jobs, seed=seed,
                                   output_csv=cfg.output_path, progress=True)
        if response["success"]:
            typer.echo(response["data"]["summary"])
    finish(response)


@app.command()
def synth(
    ctx: typer.Context,
    output: Path = typer.Argument(..., help="Directory for images, truth masks and truth.csv"),
    plan_file: Optional[Path] = typer.Option(None, "--plan", help="key=value plan file"),
    count: Optional[int] = typer.Option(None, "--count", help="Number of images (env IRIS_SYNTH_COUNT)"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Plan seed (env IRIS_SEED)"),
):
    """Export a synthetic corpus usable by eval's directory mode"""
    cfg = cli_config(ctx, command="synth", input_path=str(plan_file) if plan_file else None,
                     output_path=str(output), seed=run_default(ctx, "seed", seed))
    seed = plan_seed(ctx, plan_file, seed)
    try:
        plan = resolve_source(cfg.input_path, seed)
        if not isinstance(plan, SyntheticPlan):
            raise CorpusError("--plan must name a plan file")
        if count is not None:
            plan = SyntheticPlan(**{**plan.model_dump(), "count": count})
    except (CorpusError, ValidationError) as e:
        log_error(f"Invalid plan: {e}")
        raise typer.Exit(code=EXIT_USAGE)
    finish(export_corpus(plan, cfg.output_path, progress=True))


@app.command()
def bench(
    ctx: typer.Context,
    source: Optional[str] = typer.Argument(None, help="Corpus directory or plan file; default synthetic plan if omitted"),
    budget_ms: Optional[float] = typer.Option(None, "--budget-ms", help="Mean total budget per image (env IRIS_BUDGET_MS)"),
    jobs: Optional[int] = typer.Option(None, "--jobs", "-j", help="Parallel images (env IRIS_JOBS)"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Synthetic plan seed (env IRIS_SEED)"),
):
    """Per-stage timing table with a budget check"""
    cfg = cli_config(ctx, command="bench", input_path=source, jobs=run_default(ctx, "jobs", jobs),
                     budget_ms=run_default(ctx, "budget_ms", budget_ms), seed=run_default(ctx, "seed", seed))
    seed = plan_seed(ctx, source, seed)
    response = run_benchmark(cfg.input_path, cfg.pipeline, cfg.budget_ms, jobs=cfg.jobs, seed=seed, progress=True)
    if response["data"]:
        table = Table(show_header=True, header_style="bold magenta", title="Timing per Image")
        table.add_column("Stage")
        table.add_column("Mean ms", justify="right")
        table.add_column("P95 ms", justify="right")
        for stage, row in response["data"]["stages"].items():
            table.add_row(stage, f"{row['mean_ms']:.2f}", f"{row['p95_ms']:.2f}")
        console.print(table)
    finish(response)


if __name__ == "__main__":
    app()
