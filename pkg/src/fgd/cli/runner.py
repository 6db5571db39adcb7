"""Building pipeline objects from a RunConfig and executing runs, sweeps and benchmarks."""

from __future__ import annotations

import csv
import json
import logging
import os
import shutil
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .. import __version__
from ..analysis import structure_distance
from ..denoisers import ClosedFormDenoiser, GaussianPrior, load_templates, make_test_templates
from ..filters import BilateralParams, LowpassOperator, build_bilateral_tensor, resize_bilinear
from ..guidance import GuidanceState
from ..imageio import read_image, write_image
from ..samplers import SamplerConfig, run_sampler, write_trajectory_csv
from ..schedule import linear_beta_schedule, respace
from .config import ConfigError, RunConfig, config_hash, input_digests

log = logging.getLogger("fgd")

AGGREGATE_SCHEMA = "# fgd-sweep v1"
AGGREGATE_COLUMNS = ("filter", "delta", "seed", "structure_distance", "final_d_score", "run")
BENCH_SCHEMA = "# fgd-bench v1"
BENCH_COLUMNS = ("measure", "height", "width", "channels", "reps", "mean_s", "std_s")


@dataclass
class Pipeline:
    cfg: RunConfig
    schedule: object
    denoiser: ClosedFormDenoiser
    guide: np.ndarray | None
    filter: object | None
    metric_filter: object | None

    def guidance(self) -> GuidanceState | None:
        if self.filter is None:
            return None
        return GuidanceState.from_guide(self.guide, self.filter, self.cfg.delta,
                                        self.cfg.t_start, self.cfg.t_stop)

    def sampler_config(self) -> SamplerConfig:
        c = self.cfg
        return SamplerConfig(c.sampler, self.schedule, eta=c.eta, seed=c.seed, init=c.init,
                             strength=c.strength, shape=self.denoiser.image_shape,
                             variance=c.variance)


def build_prior(cfg: RunConfig):
    if cfg.prior == "templates":
        return load_templates(cfg.templates, std=cfg.prior_std)
    if cfg.prior == "synthetic":
        return make_test_templates(cfg.synthetic_kind, cfg.size, cfg.template_count,
                                   seed=cfg.template_seed, channels=cfg.channels, std=cfg.prior_std)
    return GaussianPrior(np.zeros((cfg.size, cfg.size, cfg.channels)), cfg.prior_std)


def build_guide(cfg: RunConfig, shape) -> np.ndarray | None:
    if cfg.guide is not None:
        guide = read_image(cfg.guide)
    elif cfg.guide_synthetic is not None:
        guide = make_test_templates(cfg.guide_synthetic, shape[0], 1, seed=cfg.guide_seed,
                                    channels=shape[2]).templates[0]
    else:
        return None
    if guide.shape[2] != shape[2]:
        if guide.shape[2] == 1:
            guide = np.repeat(guide, shape[2], axis=2)
        elif guide.shape[2] > shape[2]:
            guide = guide[:, :, :shape[2]]
        else:
            raise ConfigError(f"guide has {guide.shape[2]} channels, samples have {shape[2]}")
    if guide.shape[:2] != tuple(shape[:2]):
        log.warning("guide is %dx%d; resampling bilinearly to %dx%d",
                    guide.shape[0], guide.shape[1], shape[0], shape[1])
        guide = resize_bilinear(guide, shape[0], shape[1])
    return guide


def build_pipeline(cfg: RunConfig) -> Pipeline:
    schedule = respace(linear_beta_schedule(cfg.train_steps, cfg.beta_start, cfg.beta_end), cfg.steps)
    prior = build_prior(cfg)
    denoiser = ClosedFormDenoiser(prior, schedule)
    shape = denoiser.image_shape
    guide = build_guide(cfg, shape)
    filt = metric = None
    if guide is not None:
        metric = build_bilateral_tensor(guide, BilateralParams(cfg.metric_sigma_spatial, cfg.metric_sigma_value))
        if cfg.filter == "bilateral":
            params = BilateralParams(cfg.sigma_spatial, cfg.sigma_value)
            if params == BilateralParams(cfg.metric_sigma_spatial, cfg.metric_sigma_value):
                filt = metric
            else:
                filt = build_bilateral_tensor(guide, params)
        elif cfg.ilvr_factor is not None:
            filt = LowpassOperator(shape[0], shape[1], cfg.ilvr_factor)
    return Pipeline(cfg, schedule, denoiser, guide, filt, metric)


def manifest(cfg: RunConfig, schedule) -> dict:
    return {
        "fgd_version": __version__,
        "config": cfg.run_key(),
        "inputs": input_digests(cfg),
        "schedule": schedule.to_text(),
    }


@dataclass
class RunResult:
    run_dir: Path
    structure_distance: float
    final_d_score: float
    x0: np.ndarray


def execute_run(cfg: RunConfig, out_root) -> RunResult:
    """Run one configuration into ``out_root/<config hash>``; nothing is left behind on failure."""
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    key = config_hash(cfg)[:16]
    final_dir = out_root / key
    tmp_dir = out_root / f".tmp-{key}-{os.getpid()}"
    if tmp_dir.exists():
        shutil.rmtree(tmp_dir)
    tmp_dir.mkdir()
    try:
        pipe = build_pipeline(cfg)
        gs = pipe.guidance()
        traj = run_sampler(pipe.denoiser, pipe.sampler_config(), gs, pipe.guide,
                           keep_images=cfg.dump_steps or gs is not None)
        write_image(tmp_dir / "final.png", traj.x0)
        write_trajectory_csv(tmp_dir / "trace.csv", traj, gs)
        if cfg.dump_steps:
            (tmp_dir / "steps").mkdir()
            for rec in traj.records:
                write_image(tmp_dir / "steps" / f"x0_t{rec.t:04d}.png", rec.x0_hat)
        (tmp_dir / "manifest.json").write_text(
            json.dumps(manifest(cfg, pipe.schedule), indent=2, sort_keys=True) + "\n")
        if final_dir.exists():
            shutil.rmtree(final_dir)
        os.replace(tmp_dir, final_dir)
    except BaseException:
        shutil.rmtree(tmp_dir, ignore_errors=True)
        raise
    sd = structure_distance(traj.x0, pipe.guide, pipe.metric_filter) if pipe.guide is not None else float("nan")
    final_d = traj.records[-1].d_bar if traj.records else float("nan")
    return RunResult(final_dir, sd, final_d, traj.x0)


def _run_cell(args):
    cfg, out_root = args
    res = execute_run(cfg, out_root)
    return cfg, res


def default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("FGD_JOBS", "1")))
    except ValueError:
        return 1


def run_grid(cfgs, out_root, jobs: int = 1):
    cells = [(c, out_root) for c in cfgs]
    if jobs <= 1 or len(cells) == 1:
        return [_run_cell(c) for c in cells]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_cell, cells))


def sweep_configs(cfg: RunConfig, include_unguided: bool = False):
    cells = []
    if include_unguided:
        cells += [replace(cfg, filter="none", seed=s) for s in cfg.seeds]
    cells += [replace(cfg, delta=d, seed=s) for d in cfg.deltas for s in cfg.seeds]
    return cells


BILATERAL_GRID = [(ss, sv) for ss in (3.0, 5.0, 11.0) for sv in (0.1, 0.35, 0.5)]
ILVR_GRID = (4, 8, 16, 32)


def ablation_configs(cfg: RunConfig, bilateral=BILATERAL_GRID, ilvr=ILVR_GRID):
    if not bilateral and not ilvr:
        raise ValueError("ablation grid is empty")
    variants = [replace(cfg, filter="bilateral", sigma_spatial=ss, sigma_value=sv) for ss, sv in bilateral]
    variants += [replace(cfg, filter=f"ilvr-{n}") for n in ilvr]
    return [replace(v, delta=d, seed=s) for v in variants for d in cfg.deltas for s in cfg.seeds]


def filter_label(cfg: RunConfig) -> str:
    if cfg.filter == "bilateral":
        return f"bilateral({cfg.sigma_spatial:g},{cfg.sigma_value:g})"
    return cfg.filter


def write_aggregate(path, results):
    with open(path, "w", newline="") as fh:
        fh.write(AGGREGATE_SCHEMA + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_COLUMNS)
        for cfg, res in results:
            delta = "none" if cfg.filter == "none" else repr(float(cfg.delta))
            w.writerow([filter_label(cfg), delta, cfg.seed, repr(res.structure_distance),
                        repr(float(res.final_d_score)), res.run_dir.name])


def read_aggregate(path):
    with open(path, newline="") as fh:
        if fh.readline().rstrip("\n") != AGGREGATE_SCHEMA:
            raise ValueError(f"{path}: not an fgd sweep file")
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["seed"] = int(r["seed"])
        r["structure_distance"] = float(r["structure_distance"])
        r["final_d_score"] = float(r["final_d_score"])
    return rows


def contact_sheet(path, results, pad: int = 1):
    """Grid of final samples: one row per (filter, delta), one column per seed."""
    rows = {}
    for cfg, res in results:
        rows.setdefault((filter_label(cfg), cfg.delta if cfg.guided else None), []).append(res.x0)
    h, w, c = results[0][1].x0.shape
    ncols = max(len(v) for v in rows.values())
    sheet = np.ones(((h + pad) * len(rows) - pad, (w + pad) * ncols - pad, c))
    for i, imgs in enumerate(rows.values()):
        for j, im in enumerate(imgs):
            sheet[i * (h + pad):i * (h + pad) + h, j * (w + pad):j * (w + pad) + w] = im
    write_image(path, sheet)


# -- benchmarking ---------------------------------------------------------------------


def _time(fn, reps):
    fn()  # warm-up (JIT compilation, caches)
    out = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return out


def bench(cfg: RunConfig, reps: int = 20, height: int = 64, width: int = 64, channels: int = 4,
          template_count: int = 8):
    """Time filter build/apply and whole runs with and without guidance.

    Returns ``(measure, samples)`` pairs; all runs use the template-mixture
    reference denoiser so the guided/unguided comparison shares one model.
    """
    rng = np.random.default_rng(cfg.seed)
    schedule = respace(linear_beta_schedule(cfg.train_steps, cfg.beta_start, cfg.beta_end), cfg.steps)
    prior = make_test_templates(cfg.synthetic_kind, height, template_count, seed=cfg.template_seed,
                                channels=channels, std=cfg.prior_std)
    if height != width:
        prior = replace(prior, templates=np.stack([resize_bilinear(t, height, width) for t in prior.templates]))
    den = ClosedFormDenoiser(prior, schedule)
    guide = make_test_templates(cfg.synthetic_kind, height, 1, seed=cfg.guide_seed,
                                channels=channels).templates[0]
    if height != width:
        guide = resize_bilinear(guide, height, width)
    params = BilateralParams(cfg.sigma_spatial, cfg.sigma_value)
    filt = build_bilateral_tensor(guide, params)
    x = rng.uniform(-1, 1, (height, width, channels))
    scfg = SamplerConfig(cfg.sampler, schedule, eta=cfg.eta, seed=cfg.seed, shape=(height, width, channels),
                         variance=cfg.variance)
    zero = replace(scfg, init="sdedit", strength=1e-9)  # start step rounds to 0: no denoising steps

    def guided():
        gs = GuidanceState.from_guide(guide, filt, cfg.delta, cfg.t_start, cfg.t_stop)
        run_sampler(den, scfg, gs, keep_images=False)

    results = [
        ("filter_build", _time(lambda: build_bilateral_tensor(guide, params), reps)),
        ("filter_apply", _time(lambda: filt.apply(x), reps)),
        ("run_unguided", _time(lambda: run_sampler(den, scfg, keep_images=False), reps)),
        ("run_guided", _time(guided, reps)),
        ("run_zero_steps", _time(lambda: run_sampler(den, zero, guide=guide, keep_images=False), reps)),
    ]
    samples = dict(results)
    steps = schedule.T
    per_step = [(g - u) / steps for g, u in zip(samples["run_guided"], samples["run_unguided"])]
    ratio = [g / u for g, u in zip(samples["run_guided"], samples["run_unguided"])]
    results += [("overhead_per_step", per_step), ("guided_over_unguided", ratio)]
    return results


def write_bench(path, results, height, width, channels):
    with open(path, "w", newline="") as fh:
        fh.write(BENCH_SCHEMA + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BENCH_COLUMNS)
        for name, xs in results:
            sd = statistics.stdev(xs) if len(xs) > 1 else 0.0
            w.writerow([name, height, width, channels, len(xs), repr(statistics.fmean(xs)), repr(sd)])
