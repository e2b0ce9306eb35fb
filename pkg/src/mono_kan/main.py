"""monokan command line."""

import json
import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, Optional

import rich_click as click
from rich.console import Console
from rich.logging import RichHandler
from rich.progress import BarColumn, Progress, TaskProgressColumn, TextColumn

from mono_kan import __version__
from mono_kan.certifier import Certificate, certify, falsify
from mono_kan.dataio import DatasetSpec, fetch, load
from mono_kan.errors import DataError, MonoKanError, TrainingDivergedError
from mono_kan.export import DEFAULT_SAMPLES, export_splines
from mono_kan.network import MonoKanModel, load_model, save_model
from mono_kan.trainer import EpochRecord, TrainConfig, evaluate, init_model, train

click.rich_click.USE_MARKDOWN = True

EXIT_ERROR = 1
EXIT_FAIL = 2
EXIT_DIVERGED = 3


def error(message: str, code: int = EXIT_ERROR) -> None:
    """Print an error message and exit with `code`."""
    click.secho(message, fg="red", bold=True, err=True)
    raise SystemExit(code)


@contextmanager
def reported_errors() -> Iterator[None]:
    """Turn library exceptions into an error line and the matching exit code."""
    try:
        yield
    except TrainingDivergedError as exc:
        error(f"Training diverged: {exc}", EXIT_DIVERGED)
    except (MonoKanError, OSError) as exc:
        error(f"Error: {exc}")


def setup_logging(verbose: int) -> None:
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG)
    logging.basicConfig(
        level=level,
        format="%(message)s",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


def print_metrics(title: str, metrics: Dict[str, float]) -> None:
    """One styled line: title followed by name: value pairs."""
    values = ", ".join(
        f"{click.style(f'{name}: ', fg='yellow')}{click.style(f'{value:.6g}', fg='yellow', bold=True)}"
        for name, value in metrics.items()
    )
    click.echo(f"{click.style(title, fg='green')} {values}")


def print_certificate(certificate: Certificate) -> None:
    color = "green" if certificate.passed else "red"
    click.echo(
        f"{click.style('Certificate: ', fg=color)}"
        f"{click.style(certificate.verdict.value, fg=color, bold=True)}"
    )
    for violation in certificate.violations:
        click.echo(
            click.style(
                f"  {violation.kind}: layer {violation.layer}, output {violation.output}, "
                f"input {violation.input}, interval {violation.interval}, "
                f"condition {violation.condition} {violation.observed}",
                fg="red",
            )
        )


@click.group()
@click.version_option(version=__version__, prog_name="monokan")
@click.option("--verbose", "-v", count=True, help="Show library log messages (-vv for debug).")
def monokan(verbose: int) -> None:
    """Partially monotone Kolmogorov-Arnold networks with exact certification."""
    setup_logging(verbose)


def model_option(func: Callable[..., None]) -> Callable[..., None]:
    """Add the `--model` option."""
    return click.option(
        "--model",
        "-m",
        "model_path",
        type=click.Path(dir_okay=False, path_type=Path),
        required=True,
        help="Model file in `monokan-model-v1` JSON format.",
    )(func)


def data_option(func: Callable[..., None]) -> Callable[..., None]:
    """Add the `--data` option."""
    return click.option(
        "--data",
        "-d",
        "data",
        type=str,
        required=True,
        help="Dataset descriptor file, or a bundled dataset name (`auto-mpg`, `heart-disease`).",
    )(func)


def json_option(func: Callable[..., None]) -> Callable[..., None]:
    """Add the `--json` flag."""
    return click.option(
        "--json", "as_json", is_flag=True, help="Print machine-readable JSON to stdout."
    )(func)


def read_model(path: Path) -> MonoKanModel:
    if not path.is_file():
        raise DataError(f"Model file not found: {path}")
    return load_model(path)


@data_option
@json_option
@monokan.command("train")
@click.option(
    "--config",
    "-c",
    "config_path",
    type=click.Path(dir_okay=False, path_type=Path),
    default=None,
    help="Training config (YAML or JSON). Defaults are used when omitted.",
)
@click.option(
    "--out",
    "-o",
    type=click.Path(dir_okay=False, path_type=Path),
    required=True,
    help="Where to write the trained model.",
)
@click.option("--seed", "-s", type=int, default=None, help="Overrides the config seed.")
@click.option(
    "--log",
    "log_path",
    type=click.Path(dir_okay=False, path_type=Path),
    default=None,
    help="Training log (NDJSON). Default: next to the model with `.log.ndjson`.",
)
def train_command(  # pylint: disable=too-many-arguments, too-many-locals
    data: str,
    as_json: bool,
    config_path: Optional[Path],
    out: Path,
    seed: Optional[int],
    log_path: Optional[Path],
) -> None:
    """
    Train a partially monotone model with projected gradient steps.

    Example:
    monokan train --data auto-mpg --config train.yml --out mpg.json
    """
    with reported_errors():
        config = TrainConfig.from_file(config_path) if config_path else TrainConfig()
        if seed is not None:
            config.seed = seed
        dataset_spec = DatasetSpec.resolve(data)
        splits = load(dataset_spec)
        widths = [splits.train.features.shape[1], *config.hidden, 1]
        model = init_model(
            widths,
            splits.spec,
            config.knots,
            config.seed,
            basis=config.basis,
            grid_range=config.grid_range,
            input_scaler=splits.scaler,
            output_scaler=splits.target_scaler,
            task=dataset_spec.task.value,
        )
        model.metadata = {
            "dataset": dataset_spec.name or str(dataset_spec.path),
            "feature_names": splits.train.feature_names,
            "config": config.to_dict(),
        }
        with Progress(
            TextColumn("[progress.description]{task.description}"),
            BarColumn(),
            TaskProgressColumn(),
            TextColumn("loss {task.fields[loss]}"),
            transient=True,
        ) as progress:
            epochs_bar = progress.add_task("[green]Epochs", total=config.max_epochs, loss="-")

            def on_epoch(record: EpochRecord) -> None:
                progress.update(epochs_bar, advance=1, loss=f"{record.train_loss:.4g}")

            _, log = train(
                model,
                splits.train.transform(splits.scaler),
                config,
                splits.val.transform(splits.scaler) if len(splits.val) else None,
                on_epoch=on_epoch,
            )
        save_model(model, out)
        log.write(log_path or out.with_suffix(".log.ndjson"))
        test_metrics = evaluate(model, splits.test)
        certificate = certify(model)

    if as_json:
        click.echo(
            json.dumps(
                {
                    "model": str(out),
                    "epochs": len(log.epochs),
                    "test": test_metrics,
                    "verdict": certificate.verdict.value,
                },
                indent=2,
            )
        )
    else:
        click.echo(
            f"{click.style('Trained ', fg='yellow')}"
            f"{click.style(str(len(log.epochs)), fg='yellow', bold=True)}"
            f"{click.style(' epochs, model written to ', fg='yellow')}"
            f"{click.style(str(out), fg='yellow', bold=True)}"
        )
        print_metrics("Test:", test_metrics)
        print_certificate(certificate)
    if not certificate.passed:
        raise SystemExit(EXIT_FAIL)


@model_option
@data_option
@json_option
@monokan.command("eval")
def eval_command(model_path: Path, data: str, as_json: bool) -> None:
    """
    Evaluate a model on the train, validation and test splits of a dataset.

    Example:
    monokan eval --model mpg.json --data auto-mpg
    """
    with reported_errors():
        model = read_model(model_path)
        splits = load(DatasetSpec.resolve(data))
        if splits.train.features.shape[1] != model.widths[0]:
            raise DataError(
                f"Dataset has {splits.train.features.shape[1]} features, "
                f"model expects {model.widths[0]}"
            )
        results: Dict[str, Any] = {
            name: evaluate(model, part)
            for name, part in (("train", splits.train), ("val", splits.val), ("test", splits.test))
            if len(part)
        }
    if as_json:
        click.echo(json.dumps(results, indent=2))
        return
    for name, metrics in results.items():
        print_metrics(f"{name}:", metrics)


@model_option
@json_option
@monokan.command("certify")
def certify_command(model_path: Path, as_json: bool) -> None:
    """
    Check the sufficient monotonicity conditions on a stored model.

    Exit code 0 on PASS, 2 on FAIL, 1 on error.
    """
    with reported_errors():
        certificate = certify(read_model(model_path))
    if as_json:
        click.echo(certificate.to_json())
    else:
        print_certificate(certificate)
    if not certificate.passed:
        raise SystemExit(EXIT_FAIL)


@model_option
@json_option
@monokan.command("falsify")
@click.option(
    "--pairs", "-n", type=int, default=100_000, help="Input pairs per constrained feature."
)
@click.option("--seed", "-s", type=int, default=0, help="Random seed.")
@click.option(
    "--expansion",
    type=float,
    default=2.0,
    help="Sample on [-1 - e, 1 + e] in the scaled input space. Default 2.0.",
)
def falsify_command(  # pylint: disable=too-many-arguments
    model_path: Path, as_json: bool, pairs: int, seed: int, expansion: float
) -> None:
    """
    Search for input pairs that break the declared monotonicity.

    Exit code 0 when nothing is found, 2 otherwise.
    """
    with reported_errors():
        result = falsify(read_model(model_path), pairs, seed, expansion)
    if as_json:
        click.echo(json.dumps(result.to_dict(), indent=2))
    else:
        color = "red" if result.violations else "green"
        click.echo(
            f"{click.style('Violations: ', fg=color)}"
            f"{click.style(f'{result.violations:,}', fg=color, bold=True)}"
            f"{click.style(f' in {result.pairs:,} pairs', fg=color)}"
        )
        if result.worst is not None:
            click.echo(click.style(f"  worst: {result.worst}", fg="red"))
    if result.violations:
        raise SystemExit(EXIT_FAIL)


@model_option
@monokan.command("export-splines")
@click.option(
    "--out",
    "-o",
    type=click.Path(file_okay=False, path_type=Path),
    required=True,
    help="Output directory.",
)
@click.option(
    "--samples", type=int, default=DEFAULT_SAMPLES, help="Samples per edge. Default 201."
)
@click.option("--svg", is_flag=True, help="Also write a small-multiples SVG of all edges.")
def export_command(model_path: Path, out: Path, samples: int, svg: bool) -> None:
    """
    Write every edge activation as a CSV of x, phi(x), phi'(x).

    Example:
    monokan export-splines --model mpg.json --out splines --svg
    """
    with reported_errors():
        written = export_splines(read_model(model_path), out, samples, svg)
    click.echo(
        f"{click.style('Written ', fg='yellow')}"
        f"{click.style(str(len(written)), fg='yellow', bold=True)}"
        f"{click.style(' files to ', fg='yellow')}"
        f"{click.style(str(out), fg='yellow', bold=True)}"
    )


@monokan.command("fetch-data")
@click.argument("names", nargs=-1, required=True)
@click.option(
    "--out",
    "-o",
    type=click.Path(file_okay=False, path_type=Path),
    default=Path("data"),
    help="Download directory. Default `data`.",
)
def fetch_command(names: Any, out: Path) -> None:
    """
    Download dataset files from the URLs in their descriptors.

    Example:
    monokan fetch-data auto-mpg heart-disease
    """
    with reported_errors():
        paths = fetch([DatasetSpec.resolve(name, out) for name in names], out)
    for path in paths:
        click.echo(f"{click.style('Downloaded ', fg='green')}{click.style(str(path), bold=True)}")


if __name__ == "__main__":  # pragma: no cover
    monokan()  # pylint: disable=no-value-for-parameter
