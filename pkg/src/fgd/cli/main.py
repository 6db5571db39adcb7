"""``fgd`` command line: run, sweep, ablate, bench, analyze, plot.

Exit status 0 on success, 1 for usage or configuration errors, 2 when a run
fails at runtime.
"""

from __future__ import annotations

import functools
import logging
import sys
from pathlib import Path

import click

from . import runner
from .config import ConfigError, resolve

log = logging.getLogger("fgd")


def _floats(ctx, param, value):
    if value is None:
        return None
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter("expected comma-separated numbers") from None


def _ints(ctx, param, value):
    if value is None:
        return None
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter("expected comma-separated integers") from None


RUN_OPTIONS = [
    click.option("--config", "config_path", type=click.Path(dir_okay=False), help="JSON config or run manifest."),
    click.option("--preset", help="sd-ddim, sd-plms, sd-sdedit, sd-ddpm or glide-ddpm."),
    click.option("--train-steps", type=int),
    click.option("--beta-start", type=float),
    click.option("--beta-end", type=float),
    click.option("--steps", type=int, help="Inference steps after respacing."),
    click.option("--sampler", type=click.Choice(["ddpm", "ddim", "plms"])),
    click.option("--eta", type=float),
    click.option("--variance", type=click.Choice(["beta", "posterior"]), help="DDPM reverse variance."),
    click.option("--seed", type=int),
    click.option("--init", type=click.Choice(["noise", "sdedit", "ddim_inverted"])),
    click.option("--strength", type=float, help="SDEdit start depth in (0, 1]."),
    click.option("--filter", "filter_", help="bilateral, ilvr-N or none."),
    click.option("--t-start", type=int),
    click.option("--t-stop", type=int),
    click.option("--delta", type=float),
    click.option("--sigma-spatial", type=float),
    click.option("--sigma-value", type=float),
    click.option("--prior", type=click.Choice(["gaussian", "templates", "synthetic"])),
    click.option("--prior-std", type=float),
    click.option("--templates", type=click.Path(), help="Directory of template images (implies --prior templates)."),
    click.option("--synthetic-kind", type=click.Choice(["stripes", "blobs", "gradients"])),
    click.option("--template-count", type=int),
    click.option("--template-seed", type=int),
    click.option("--guide", type=click.Path()),
    click.option("--guide-synthetic", type=click.Choice(["stripes", "blobs", "gradients"])),
    click.option("--guide-seed", type=int),
    click.option("--size", type=int),
    click.option("--channels", type=int),
    click.option("--metric-sigma-spatial", type=float),
    click.option("--metric-sigma-value", type=float),
    click.option("--dump-steps/--no-dump-steps", default=None),
    click.option("--out", "out", type=click.Path(file_okay=False), default="runs", show_default=True),
]

SWEEP_OPTIONS = [
    click.option("--deltas", callback=_floats, help="Comma-separated delta values."),
    click.option("--seeds", callback=_ints, help="Comma-separated seeds."),
    click.option("--jobs", type=int, default=None, help="Parallel runs (default: $FGD_JOBS or 1)."),
]


def _apply(options):
    def deco(fn):
        for opt in reversed(options):
            fn = opt(fn)
        return fn
    return deco


def _resolve(kw):
    config_path = kw.pop("config_path", None)
    kw["filter"] = kw.pop("filter_", None)
    if kw.get("templates") is not None and kw.get("prior") is None:
        kw["prior"] = "templates"
    return resolve(kw, config_path)


def _runtime(fn):
    """Map unexpected failures to exit status 2; config problems stay at 1."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, click.ClickException):
            raise
        except Exception as exc:
            log.debug("run failed", exc_info=True)
            raise RuntimeFailure(f"{type(exc).__name__}: {exc}") from exc
    return wrapper


class RuntimeFailure(click.ClickException):
    exit_code = 2


@click.group()
@click.option("-v", "--verbose", count=True)
def cli(verbose):
    """Filter-guided diffusion with closed-form reference denoisers."""
    logging.basicConfig(level=logging.DEBUG if verbose > 1 else logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")


@cli.command()
@_apply(RUN_OPTIONS)
@_runtime
def run(out, **kw):
    """Sample once and write final.png, trace.csv and manifest.json."""
    cfg = _resolve(kw)
    res = runner.execute_run(cfg, out)
    click.echo(str(res.run_dir))


@cli.command()
@_apply(RUN_OPTIONS + SWEEP_OPTIONS)
@click.option("--include-unguided", is_flag=True, help="Add an unguided row per seed.")
@click.option("--contact-sheet", "sheet", type=click.Path(dir_okay=False))
@_runtime
def sweep(out, deltas, seeds, jobs, include_unguided, sheet, **kw):
    """Grid over delta and seed; writes sweep.csv in the output directory."""
    kw.update(deltas=deltas, seeds=seeds)
    cfg = _resolve(kw)
    results = runner.run_grid(runner.sweep_configs(cfg, include_unguided), out, jobs or runner.default_jobs())
    path = Path(out) / "sweep.csv"
    runner.write_aggregate(path, results)
    if sheet:
        runner.contact_sheet(sheet, results)
    click.echo(str(path))


def _grid(ctx, param, value):
    if value is None:
        return None
    pairs = []
    for item in value.split(";"):
        if item.strip():
            try:
                ss, sv = item.split(",")
                pairs.append((float(ss), float(sv)))
            except ValueError:
                raise click.BadParameter("expected 'ss,sv;ss,sv;...'") from None
    return pairs


@cli.command()
@_apply(RUN_OPTIONS + SWEEP_OPTIONS)
@click.option("--bilateral-grid", callback=_grid, help="Override as 'ss,sv;ss,sv'. Default 3/5/11 x 0.1/0.35/0.5.")
@click.option("--ilvr-grid", callback=_ints, help="Comma-separated ILVR factors. Default 4,8,16,32.")
@_runtime
def ablate(out, deltas, seeds, jobs, bilateral_grid, ilvr_grid, **kw):
    """Bilateral sigma grid and ILVR factor grid; writes ablation.csv."""
    kw.update(deltas=deltas, seeds=seeds)
    cfg = _resolve(kw)
    bilateral = runner.BILATERAL_GRID if bilateral_grid is None else bilateral_grid
    ilvr = runner.ILVR_GRID if ilvr_grid is None else ilvr_grid
    try:
        cfgs = runner.ablation_configs(cfg, bilateral, ilvr)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    results = runner.run_grid(cfgs, out, jobs or runner.default_jobs())
    path = Path(out) / "ablation.csv"
    runner.write_aggregate(path, results)
    click.echo(str(path))


@cli.command()
@_apply(RUN_OPTIONS)
@click.option("--reps", type=int, default=20, show_default=True)
@click.option("--height", type=int, default=64, show_default=True)
@click.option("--width", type=int, default=64, show_default=True)
@click.option("--bench-channels", type=int, default=4, show_default=True)
@click.option("--bench-templates", type=int, default=8, show_default=True)
@_runtime
def bench(out, reps, height, width, bench_channels, bench_templates, **kw):
    """Time filter build/apply and full runs with and without guidance; writes bench.csv."""
    if reps < 2:
        raise ConfigError("--reps must be at least 2")
    if kw.get("guide") is None and kw.get("guide_synthetic") is None:
        kw["guide_synthetic"] = kw.get("synthetic_kind") or "blobs"  # bench builds its own guide
    cfg = _resolve(kw)
    results = runner.bench(cfg, reps, height, width, bench_channels, bench_templates)
    Path(out).mkdir(parents=True, exist_ok=True)
    path = Path(out) / "bench.csv"
    runner.write_bench(path, results, height, width, bench_channels)
    click.echo(str(path))


@cli.command()
@click.option("--image", type=click.Path(exists=True, dir_okay=False), help="Image to analyse.")
@click.option("--one-over-f", type=int, help="Analyse a synthetic 1/f image of this size instead.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--steps", type=int, default=50, show_default=True)
@click.option("--sigma-spatial", type=float, default=5.0, show_default=True)
@click.option("--sigma-value", type=float, default=0.35, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default="analysis", show_default=True)
@_runtime
def analyze(image, one_over_f, seed, steps, sigma_spatial, sigma_value, out):
    """Radial spectra (image, filtered structure, residual detail) and per-step SNR."""
    from ..analysis import radial_amplitude_spectrum, synth_one_over_f, write_snr_csv, write_spectrum_csv
    from ..filters import BilateralParams, build_bilateral_tensor
    from ..imageio import read_image
    from ..schedule import default_schedule

    if (image is None) == (one_over_f is None):
        raise ConfigError("give exactly one of --image or --one-over-f")
    x = read_image(image) if image else synth_one_over_f(one_over_f, seed, channels=3)
    f = build_bilateral_tensor(x, BilateralParams(sigma_spatial, sigma_value))
    structure = f.apply(x)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_spectrum_csv(out / "spectrum.csv", {
        "image": radial_amplitude_spectrum(x),
        "structure": radial_amplitude_spectrum(structure),
        "detail": radial_amplitude_spectrum(x - structure),
    })
    write_snr_csv(out / "snr.csv", x, default_schedule(steps))
    click.echo(str(out))


@cli.command()
@click.argument("csv_path", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", type=click.Path(dir_okay=False), help="SVG path (default: next to the CSV).")
@click.option("--title")
@_runtime
def plot(csv_path, output, title):
    """Render a trace, spectrum, SNR or sweep CSV as an SVG line chart."""
    from .plot import plot_csv

    output = output or str(Path(csv_path).with_suffix(".svg"))
    try:
        plot_csv(csv_path, output, title)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    click.echo(output)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="fgd", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except RuntimeFailure as exc:
        exc.show()
        return 2
    except click.ClickException as exc:
        exc.show()
        return 1
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    return 0


def entrypoint():
    sys.exit(main())
