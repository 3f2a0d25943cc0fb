"""
Command-line front end.

Every subcommand builds a `JobConfig` and hands it to `run`, which returns the
process exit status:

    0  all artifacts written and every verification passed
    1  unexpected I/O or internal error
    2  bad flags or recipe
    3  input is not a supported baseline JPEG
    4  bad key, or crypto parameters that do not fit the file (restart interval, region)
    5  evaluate finished but some verification failed

Failures are also printed to stdout as one `ErrorReport` JSON object per line.
Results that are reports (keyspace, scanmap, sensitivity, histogram) go to stdout
as JSON as well and are saved under `--out-dir`.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Literal, Optional

import typer
from pydantic import BaseModel, Field, ValidationError, field_validator

from rstcrypt import storage
from rstcrypt.analysis import (
    evaluate_image,
    evaluation_keys,
    histogram_report,
    key_space_for_jpeg,
    nzca,
    sensitivity_experiment,
    summarize,
)
from rstcrypt.bitstream import parse, serialize
from rstcrypt.cipher import decrypt, encrypt
from rstcrypt.config import Settings
from rstcrypt.entropy import build_tables, restructure, walk_scan
from rstcrypt.errors import ConfigError, RecipeMismatch, RstCryptError, VerificationFailed
from rstcrypt.pixels import RasterImage, decode_pixels
from rstcrypt.plots import plot_histograms, plot_quality_boxplots
from rstcrypt.schemas import EncryptionRecipe, ErrorReport, ImageEvaluation, RegionSpec
from rstcrypt.utils import configure_logging, console, parse_key

logger = logging.getLogger(__name__)

Command = Literal[
    "restructure", "encrypt", "decrypt", "nzca", "histogram", "keyspace", "sensitivity", "evaluate", "scanmap"
]
OutputFormat = Literal["json", "png", "pgm"]
Rendering = Literal["blocks", "mcu", "equalized"]


class JobConfig(BaseModel):
    """One CLI invocation, validated before anything is written."""

    command: Command
    input: Path
    output: Optional[Path] = None
    reference: Optional[Path] = None
    ri: Optional[int] = Field(default=None, ge=1, le=0xFFFF)
    restart_intervals: Optional[list[int]] = None
    k1: Optional[str] = Field(default=None, repr=False)
    k2: Optional[str] = Field(default=None, repr=False)
    region: str = "all"
    recipe: Optional[Path] = None
    permute: bool = True
    restructure_first: bool = False
    jobs: Optional[int] = Field(default=None, ge=1)
    format: OutputFormat = "json"
    rendering: Rendering = "blocks"
    out_dir: Optional[Path] = None
    seed: Optional[int] = Field(default=None, ge=0)
    trials: Optional[int] = Field(default=None, ge=1)

    @field_validator("region")
    @classmethod
    def _check_region(cls, v: str) -> str:
        RegionSpec.parse(v)
        return v


# --- Helpers ---

def _settings(config: JobConfig) -> Settings:
    overrides: dict = {}
    if config.jobs is not None:
        overrides["jobs"] = config.jobs
    if config.seed is not None:
        overrides["seed"] = config.seed
    if config.trials is not None:
        overrides["sensitivity_trials"] = config.trials
    if config.out_dir is not None:
        overrides["out_dir"] = str(config.out_dir)
    if config.restart_intervals is not None:
        overrides["restart_intervals"] = config.restart_intervals
    return Settings(**overrides)


def _resolve_recipe(config: JobConfig) -> EncryptionRecipe:
    """
    Build the recipe from --recipe or from --ri/--k1/--k2/--region.

    Raises:
        ConfigError: missing keys or restart interval, or --ri disagreeing with the recipe file.
        BadKeyLength: a key reference that is neither 96 hex chars nor a key file.
    """
    if config.recipe is not None:
        rf = storage.load_recipe(config.recipe)
        if config.ri is not None and config.ri != rf.ri:
            raise ConfigError(f"--ri {config.ri} disagrees with recipe RI {rf.ri}")
        refs = dict(rf.key_refs)
        k1 = parse_key(config.k1 or refs.get("k1", ""))
        k2 = parse_key(config.k2 or refs.get("k2", ""))
        return EncryptionRecipe(ri=rf.ri, region=rf.region, k1=k1, k2=k2, permute=rf.permute and config.permute)

    if config.ri is None:
        raise ConfigError("--ri is required")
    if not config.k1 or not config.k2:
        raise ConfigError("--k1 and --k2 are required (or pass --recipe)")
    return EncryptionRecipe(
        ri=config.ri,
        region=RegionSpec.parse(config.region),
        k1=parse_key(config.k1),
        k2=parse_key(config.k2),
        permute=config.permute,
    )


def _require_output(config: JobConfig) -> Path:
    if config.output is None:
        raise ConfigError(f"{config.command} needs an output path")
    return config.output


def _emit(model: BaseModel) -> None:
    typer.echo(model.model_dump_json(indent=2))


def _emit_error(e: RstCryptError | Exception, path: Optional[Path]) -> None:
    code = e.code if isinstance(e, RstCryptError) else "io_error"
    report = ErrorReport(error=code, message=str(e), path=str(path) if path else None)
    typer.echo(report.model_dump_json())


def _image_id(path: Path) -> str:
    return path.stem


# --- Commands ---

def _cmd_restructure(config: JobConfig, settings: Settings) -> int:
    if config.ri is None:
        raise ConfigError("--ri is required")
    out = _require_output(config)
    jpeg = parse(config.input.read_bytes())
    result = restructure(jpeg, build_tables(jpeg), config.ri)
    out.write_bytes(serialize(result))
    console.print(f"[green]restructured[/green] {config.input} -> {out} (RI={config.ri})")
    return 0


def _cmd_crypt(config: JobConfig, settings: Settings) -> int:
    recipe = _resolve_recipe(config)
    out = _require_output(config)
    jpeg = parse(config.input.read_bytes())
    if config.restructure_first and jpeg.restart_interval != recipe.ri:
        jpeg = restructure(jpeg, build_tables(jpeg), recipe.ri)
    if jpeg.restart_interval != recipe.ri:
        raise RecipeMismatch(
            f"{config.input} has RI={jpeg.restart_interval}, recipe needs {recipe.ri}; "
            "run `rstcrypt restructure` first or pass --restructure"
        )
    op = encrypt if config.command == "encrypt" else decrypt
    result = serialize(op(jpeg, recipe))
    out.write_bytes(result)
    console.print(f"[green]{config.command}ed[/green] {config.input} -> {out} ({len(result)} bytes)")
    return 0


def _cmd_nzca(config: JobConfig, settings: Settings) -> int:
    sketch = nzca(parse(config.input.read_bytes()))
    image_id = _image_id(config.input)
    base = settings.get_out_dir_resolved()
    if config.format == "json":
        path = storage.save_report(sketch.to_report(), image_id, "nzca.json", base)
    else:
        path = storage.save_raster(sketch.to_raster(config.rendering), image_id, f"nzca_{config.rendering}", config.format, base)
    console.print(f"sketch written to {path}")
    return 0


def _cmd_histogram(config: JobConfig, settings: Settings) -> int:
    img = decode_pixels(parse(config.input.read_bytes()))
    ref: Optional[RasterImage] = None
    if config.reference is not None:
        ref = decode_pixels(parse(config.reference.read_bytes()))
    report = histogram_report(img, ref)
    image_id = _image_id(config.input)
    base = settings.get_out_dir_resolved()
    storage.save_report(report, image_id, "histogram.json", base)
    if config.format == "png":
        plot_histograms(report, storage.get_image_dir(image_id, base) / "histogram.png", title=image_id)
    _emit(report)
    return 0


def _cmd_keyspace(config: JobConfig, settings: Settings) -> int:
    if config.ri is None:
        raise ConfigError("--ri is required")
    report = key_space_for_jpeg(parse(config.input.read_bytes()), config.ri)
    storage.save_report(report, _image_id(config.input), f"keyspace_ri{config.ri}.json", settings.get_out_dir_resolved())
    _emit(report)
    return 0


def _cmd_scanmap(config: JobConfig, settings: Settings) -> int:
    jpeg = parse(config.input.read_bytes())
    scan_map, _ = walk_scan(jpeg, build_tables(jpeg))
    export = scan_map.to_export()
    storage.save_report(export, _image_id(config.input), "scanmap.json", settings.get_out_dir_resolved())
    _emit(export)
    return 0


def _cmd_sensitivity(config: JobConfig, settings: Settings) -> int:
    image_id = _image_id(config.input)
    if config.k1 or config.recipe:
        recipe = _resolve_recipe(config)
    else:
        if config.ri is None:
            raise ConfigError("--ri is required")
        k1, k2 = evaluation_keys(settings.seed, image_id)
        recipe = EncryptionRecipe(ri=config.ri, region=RegionSpec.parse(config.region), k1=k1, k2=k2)
    report = sensitivity_experiment(
        parse(config.input.read_bytes()),
        recipe,
        settings.sensitivity_trials,
        seed=settings.seed,
        image=image_id,
        case2_threshold=settings.case2_ssim_threshold,
    )
    storage.save_report(report, image_id, f"sensitivity_ri{recipe.ri}.json", settings.get_out_dir_resolved())
    _emit(report)
    return 0


def _evaluate_one(
    path: str,
    restart_intervals: list[int],
    seed: int,
    keys: Optional[tuple[bytes, bytes]],
    out_dir: str,
    fmt: str,
    reference_decoder: bool,
) -> tuple[list[dict], list[dict]]:
    """
    Worker: the whole battery for one file. Returns (evaluations, error reports)
    as plain dicts so results cross process boundaries cheaply.
    """
    src = Path(path)
    image_id = src.stem
    base = Path(out_dir)
    k1, k2 = keys if keys is not None else evaluation_keys(seed, image_id)
    evaluations, errors = [], []
    data = src.read_bytes()
    for ri in restart_intervals:
        try:
            ev, art = evaluate_image(data, image_id, ri, k1, k2, reference_decoder=reference_decoder)
        except RstCryptError as e:
            errors.append(ErrorReport(error=e.code, message=f"RI={ri}: {e}", path=path).model_dump())
            continue
        storage.save_bytes(art.restructured, image_id, f"restructured_ri{ri}.jpg", base)
        storage.save_bytes(art.encrypted, image_id, f"encrypted_ri{ri}.jpg", base)
        storage.save_bytes(art.ablation, image_id, f"ablation_ri{ri}.jpg", base)
        storage.save_report(ev, image_id, f"evaluation_ri{ri}.json", base)
        if fmt in ("png", "pgm"):
            for kind, sketch in art.sketches.items():
                storage.save_raster(sketch.to_raster(), image_id, f"nzca_{kind}_ri{ri}", fmt, base)  # type: ignore[arg-type]
        if fmt == "png":
            for kind, hist in art.histograms.items():
                plot_histograms(hist, storage.get_image_dir(image_id, base) / f"histogram_{kind}_ri{ri}.png",
                                title=f"{image_id} {kind} RI={ri}")
        evaluations.append(ev.model_dump(mode="json"))
    return evaluations, errors


def _cmd_evaluate(config: JobConfig, settings: Settings) -> int:
    if not config.input.is_dir():
        raise ConfigError(f"{config.input} is not a directory")
    paths = sorted(p for p in config.input.iterdir() if p.suffix.lower() in (".jpg", ".jpeg"))
    if not paths:
        raise ConfigError(f"no .jpg files in {config.input}")

    keys = None
    if config.k1 or config.k2:
        if not (config.k1 and config.k2):
            raise ConfigError("pass both --k1 and --k2, or neither")
        keys = (parse_key(config.k1), parse_key(config.k2))

    ris = settings.restart_intervals
    out_dir = str(settings.get_out_dir_resolved())
    args = [(str(p), ris, settings.seed, keys, out_dir, config.format, settings.reference_decoder) for p in paths]
    logger.info("evaluating %d images at RI=%s with %d job(s)", len(paths), ris, settings.jobs)

    if settings.jobs > 1:
        with ProcessPoolExecutor(max_workers=settings.jobs) as pool:
            results = list(pool.map(_evaluate_one, *zip(*args)))
    else:
        results = [_evaluate_one(*a) for a in args]

    evaluations = [ImageEvaluation.model_validate(e) for evs, _ in results for e in evs]
    errors = [ErrorReport.model_validate(e) for _, errs in results for e in errs]
    for err in errors:
        typer.echo(err.model_dump_json())

    summary = summarize(evaluations, ris, [f"{Path(e.path or '').stem}: {e.error}: {e.message}" for e in errors])
    storage.save_summary(summary, Path(out_dir))
    if config.format == "png" and evaluations:
        plot_quality_boxplots(summary, Path(out_dir) / "quality_boxplots.png")
    _emit(summary)

    if not summary.all_passed:
        raise VerificationFailed(f"{len(summary.failures)} verification failure(s); see summary.json")
    return 0


_COMMANDS = {
    "restructure": _cmd_restructure,
    "encrypt": _cmd_crypt,
    "decrypt": _cmd_crypt,
    "nzca": _cmd_nzca,
    "histogram": _cmd_histogram,
    "keyspace": _cmd_keyspace,
    "scanmap": _cmd_scanmap,
    "sensitivity": _cmd_sensitivity,
    "evaluate": _cmd_evaluate,
}


def run(config: JobConfig) -> int:
    """Execute one job; never raises for expected failures."""
    try:
        settings = _settings(config)
        configure_logging(settings.log_level)
        return _COMMANDS[config.command](config, settings)
    except RstCryptError as e:
        logger.error("%s: %s", e.code, e)
        _emit_error(e, config.input)
        return e.exit_code
    except ValidationError as e:
        err = ConfigError(str(e))
        _emit_error(err, config.input)
        return err.exit_code
    except OSError as e:
        logger.error("I/O error: %s", e)
        _emit_error(e, config.input)
        return 1


# --- Typer surface ---

app = typer.Typer(add_completion=False, help="Format-preserving JPEG encryption with restart markers.")


def _invoke(**kwargs) -> None:
    try:
        config = JobConfig(**{k: v for k, v in kwargs.items() if v is not None})
    except ValidationError as e:
        err = ConfigError(str(e))
        _emit_error(err, kwargs.get("input"))
        raise typer.Exit(err.exit_code)
    code = run(config)
    if code:
        raise typer.Exit(code)


KeyOpt = typer.Option(None, help="96 hex characters or a key file path")


@app.command("restructure")
def restructure_cmd(
    input: Path = typer.Argument(..., exists=True, dir_okay=False),
    output: Path = typer.Argument(...),
    ri: int = typer.Option(..., "--ri", help="Restart interval in MCUs"),
) -> None:
    """Re-encode the scan with RSTn markers every --ri MCUs."""
    _invoke(command="restructure", input=input, output=output, ri=ri)


def _crypt(command: str, input, output, ri, k1, k2, region, recipe, no_permute, restructure_first) -> None:
    _invoke(
        command=command, input=input, output=output, ri=ri, k1=k1, k2=k2, region=region,
        recipe=recipe, permute=not no_permute, restructure_first=restructure_first,
    )


@app.command("encrypt")
def encrypt_cmd(
    input: Path = typer.Argument(..., exists=True, dir_okay=False),
    output: Path = typer.Argument(...),
    ri: Optional[int] = typer.Option(None, "--ri"),
    k1: Optional[str] = KeyOpt,
    k2: Optional[str] = KeyOpt,
    region: str = typer.Option("all", "--region", help='"all", "blocks:1,4" or MCU rect "x0,y0,x1,y1"'),
    recipe: Optional[Path] = typer.Option(None, "--recipe", exists=True, dir_okay=False),
    no_permute: bool = typer.Option(False, "--no-permute", help="XOR only, no block permutation"),
    restructure_first: bool = typer.Option(False, "--restructure", help="Restructure to --ri before encrypting"),
) -> None:
    """Encrypt the scan; output has the same size and stays decodable."""
    _crypt("encrypt", input, output, ri, k1, k2, region, recipe, no_permute, restructure_first)


@app.command("decrypt")
def decrypt_cmd(
    input: Path = typer.Argument(..., exists=True, dir_okay=False),
    output: Path = typer.Argument(...),
    ri: Optional[int] = typer.Option(None, "--ri"),
    k1: Optional[str] = KeyOpt,
    k2: Optional[str] = KeyOpt,
    region: str = typer.Option("all", "--region"),
    recipe: Optional[Path] = typer.Option(None, "--recipe", exists=True, dir_okay=False),
    no_permute: bool = typer.Option(False, "--no-permute"),
) -> None:
    """Invert `encrypt` bit-exactly (same keys, RI and region)."""
    _crypt("decrypt", input, output, ri, k1, k2, region, recipe, no_permute, False)


@app.command("nzca")
def nzca_cmd(
    input: Path = typer.Argument(..., exists=True, dir_okay=False),
    format: str = typer.Option("png", "--format", help="json | png | pgm"),
    rendering: str = typer.Option("blocks", "--rendering", help="blocks | mcu | equalized"),
    out_dir: Optional[Path] = typer.Option(None, "--out-dir"),
) -> None:
    """Non-zero-coefficient sketch from the entropy symbols."""
    _invoke(command="nzca", input=input, format=format, rendering=rendering, out_dir=out_dir)


@app.command("histogram")
def histogram_cmd(
    input: Path = typer.Argument(..., exists=True, dir_okay=False),
    reference: Optional[Path] = typer.Option(None, "--reference", exists=True, dir_okay=False),
    format: str = typer.Option("json", "--format", help="json | png (adds a plot)"),
    out_dir: Optional[Path] = typer.Option(None, "--out-dir"),
) -> None:
    """Per-channel histograms and their similarities."""
    _invoke(command="histogram", input=input, reference=reference, format=format, out_dir=out_dir)


@app.command("keyspace")
def keyspace_cmd(
    input: Path = typer.Argument(..., exists=True, dir_okay=False),
    ri: int = typer.Option(..., "--ri"),
    out_dir: Optional[Path] = typer.Option(None, "--out-dir"),
) -> None:
    """Count P4 bytes at --ri and report the key space."""
    _invoke(command="keyspace", input=input, ri=ri, out_dir=out_dir)


@app.command("scanmap")
def scanmap_cmd(
    input: Path = typer.Argument(..., exists=True, dir_okay=False),
    out_dir: Optional[Path] = typer.Option(None, "--out-dir"),
) -> None:
    """Dump per-byte classes and MCU spans as JSON."""
    _invoke(command="scanmap", input=input, out_dir=out_dir)


@app.command("sensitivity")
def sensitivity_cmd(
    input: Path = typer.Argument(..., exists=True, dir_okay=False),
    ri: Optional[int] = typer.Option(None, "--ri"),
    k1: Optional[str] = KeyOpt,
    k2: Optional[str] = KeyOpt,
    recipe: Optional[Path] = typer.Option(None, "--recipe", exists=True, dir_okay=False),
    trials: Optional[int] = typer.Option(None, "--trials"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    out_dir: Optional[Path] = typer.Option(None, "--out-dir"),
) -> None:
    """SSIM distributions under one-bit key changes."""
    _invoke(command="sensitivity", input=input, ri=ri, k1=k1, k2=k2, recipe=recipe,
            trials=trials, seed=seed, out_dir=out_dir)


@app.command("evaluate")
def evaluate_cmd(
    input: Path = typer.Argument(..., exists=True, file_okay=False),
    ri: Optional[str] = typer.Option(None, "--ri", help="Comma-separated restart intervals, e.g. 2,4,8"),
    k1: Optional[str] = KeyOpt,
    k2: Optional[str] = KeyOpt,
    jobs: Optional[int] = typer.Option(None, "--jobs"),
    format: str = typer.Option("png", "--format", help="json | png | pgm"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    out_dir: Optional[Path] = typer.Option(None, "--out-dir"),
) -> None:
    """Run the full battery over a directory of JPEGs."""
    ris = None
    if ri is not None:
        try:
            ris = [int(p) for p in ri.split(",") if p.strip()]
        except ValueError:
            _emit_error(ConfigError(f"bad --ri list: {ri!r}"), input)
            raise typer.Exit(ConfigError.exit_code)
    _invoke(command="evaluate", input=input, restart_intervals=ris, k1=k1, k2=k2, jobs=jobs,
            format=format, seed=seed, out_dir=out_dir)


def main() -> None:
    app()


if __name__ == "__main__":
    main()
