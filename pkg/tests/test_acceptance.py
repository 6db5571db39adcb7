"""Acceptance gate: each criterion prints one PASS/FAIL line and asserts."""

import math
import time
from fractions import Fraction

import numpy as np

from conftest import ACCEPTANCE_LINES
from fgd.analysis import (
    snr_per_frequency, spectral_energy, structure_distance, synth_one_over_f,
    trace_summary,
)
from fgd.cli.config import RunConfig
from fgd.cli.runner import bench
from fgd.denoisers import ClosedFormDenoiser, GaussianPrior, make_test_templates, point_mass_prior
from fgd.filters import BilateralParams, LowpassOperator, brute_force_joint_bilateral, build_bilateral_tensor
from fgd.guidance import PRESETS, GuidanceState, adaptive_weight, laplacian_blend
from fgd.samplers import (
    CounterNoise, SamplerConfig, ddim_invert, ddim_step, ddpm_step, plms_step, run_sampler,
)
from fgd.schedule import default_schedule, linear_beta_schedule


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def test_1_filter_oracle_equivalence():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst_diff = worst_row = 0.0
    for _ in range(24):
        h, w = rng.integers(4, 33, 2)
        guide = rng.uniform(-1, 1, (h, w, rng.integers(1, 5)))
        x = rng.uniform(-1, 1, (h, w, rng.integers(1, 5)))
        params = BilateralParams(rng.uniform(0.5, 3.0), rng.uniform(0.05, 1.0))
        f = build_bilateral_tensor(guide, params)
        worst_diff = max(worst_diff, np.max(np.abs(f.apply(x) - brute_force_joint_bilateral(guide, x, params))))
        worst_row = max(worst_row, np.max(np.abs(f.weights.sum(axis=-1) - 1)))
    elapsed = time.perf_counter() - t0
    ok = worst_diff <= 1e-6 and worst_row <= 1e-9 and elapsed < 10
    assert report(1, ok, f"24 pairs, max|packed-brute|={worst_diff:.1e}, max|row-1|={worst_row:.1e}, "
                         f"{elapsed:.2f}s")


def test_2_clamp_behaviour():
    rng = np.random.default_rng(2)
    bad = []
    for _ in range(1000):
        d, delta, ac = rng.uniform(0, 2), rng.uniform(1e-3, 1), rng.uniform(1e-4, 1)
        s = math.sqrt(ac)
        lam = adaptive_weight(d, delta, s)
        if not 0 <= lam <= s:
            bad.append(("range", d, delta, s))
        if d >= delta and lam != s:
            bad.append(("clamp", d, delta, s))
        if d < delta and d > 0:
            exact = Fraction(d) / Fraction(delta) * Fraction(s)
            if abs(Fraction(lam) - exact) > Fraction(1e-12) * exact:
                bad.append(("linear", d, delta, s))
    assert report(2, not bad, f"1000 triples, {len(bad)} violations")


def _manual_chain(d, s, kind, seed, hook):
    noise = CounterNoise(seed)
    x = noise.normal(s.T, "init", (16, 16, 3))
    history = ()
    for t in range(s.T, 0, -1):
        if kind == "ddpm":
            x, _ = ddpm_step(d, s, x, t, noise, hook)
        elif kind == "ddim":
            x, _ = ddim_step(d, s, x, t, t - 1, 0.0, hook, noise)
        else:
            x, _, history = plms_step(d, s, x, t, t - 1, history, hook)
    return x


def test_3_guidance_off_bitwise():
    s = default_schedule(50)
    d = ClosedFormDenoiser(make_test_templates("blobs", 16, 4), s)
    guide = make_test_templates("blobs", 16, 1, seed=123).templates[0]
    f = build_bilateral_tensor(guide, BilateralParams(5.0, 0.35))
    results = {}
    for kind in ("ddpm", "ddim", "plms"):
        cfg = SamplerConfig(kind, s, seed=7)
        plain = run_sampler(d, cfg)
        inf = run_sampler(d, cfg, GuidanceState.from_guide(guide, f, math.inf, 50, 1))
        same_inf = inf.x0.tobytes() == plain.x0.tobytes() and all(
            a.x_t.tobytes() == b.x_t.tobytes() for a, b in zip(inf.records, plain.records))
        ident = _manual_chain(d, s, kind, 7, lambda v, t, scale: v)
        none = _manual_chain(d, s, kind, 7, None)
        results[kind] = same_inf and ident.tobytes() == none.tobytes() == plain.x0.tobytes()
    detail = ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in results.items())
    assert report(3, all(results.values()), f"identity hook and delta=inf vs unguided, 16x16, 50 steps: {detail}")


def test_4_exact_denoiser_distribution():
    s = default_schedule(50)
    d = ClosedFormDenoiser(GaussianPrior(np.zeros((8, 8, 1)), 1.0), s)
    t0 = time.perf_counter()
    xs = np.stack([run_sampler(d, SamplerConfig("ddpm", s, seed=i), keep_images=False).x0 for i in range(1000)])
    elapsed = time.perf_counter() - t0
    mean, std = xs.mean(axis=0), xs.std(axis=0, ddof=1)
    bound = 3 / math.sqrt(1000)
    ok = np.max(np.abs(mean)) <= bound and 0.9 <= std.min() and std.max() <= 1.1 and elapsed < 60
    assert report(4, ok, f"max|mean|={np.max(np.abs(mean)):.4f} (<= {bound:.4f}), std in "
                         f"[{std.min():.3f}, {std.max():.3f}], {elapsed:.1f}s")


# measured worst case 5.5e-3 over 20 seeds; frozen with ~2x margin
GAUSSIAN_ROUND_TRIP_TOL = 1e-2


def test_5_ddim_round_trip():
    s = default_schedule(50)
    rng = np.random.default_rng(5)
    mu = rng.uniform(-1, 1, (8, 8, 3))
    dp = ClosedFormDenoiser(point_mass_prior(mu), s)
    back = run_sampler(dp, SamplerConfig("ddim", s, init="ddim_inverted"), guide=mu).x0
    err_point = np.max(np.abs(back - mu))
    dg = ClosedFormDenoiser(GaussianPrior(np.zeros((8, 8, 1)), 1.0), s)
    x0 = rng.standard_normal((8, 8, 1))
    x = ddim_invert(dg, s, x0)
    for t in range(50, 0, -1):
        x, _ = ddim_step(dg, s, x, t, t - 1)
    err_gauss = np.max(np.abs(x - x0))
    ok = err_point <= 1e-6 and err_gauss <= GAUSSIAN_ROUND_TRIP_TOL
    assert report(5, ok, f"point-mass L_inf={err_point:.1e}, Gaussian L_inf={err_gauss:.1e} "
                         f"(tol {GAUSSIAN_ROUND_TRIP_TOL:g})")


def _testbed_final(d, s, guide, f, delta, seed):
    gs = None if delta is None else GuidanceState.from_guide(guide, f, delta, 50, 25)
    x0 = run_sampler(d, SamplerConfig("ddpm", s, seed=seed), gs, keep_images=False).x0
    return structure_distance(x0, guide, f)


def test_6_delta_ordering():
    s = default_schedule(50)
    d = ClosedFormDenoiser(make_test_templates("blobs", 16, 4), s)
    guide = make_test_templates("blobs", 16, 1, seed=123).templates[0]
    f = build_bilateral_tensor(guide, BilateralParams(5.0, 0.35))
    med = {}
    for delta in (None, 0.5, 0.2, 0.05):
        med[delta] = float(np.median([_testbed_final(d, s, guide, f, delta, seed) for seed in range(10)]))
    ok = med[0.5] >= med[0.2] >= med[0.05] and med[0.05] < med[None]
    assert report(6, ok, "median structure distance unguided={:.4f}, 0.5={:.4f}, 0.2={:.4f}, 0.05={:.4f}".format(
        med[None], med[0.5], med[0.2], med[0.05]))


def test_7_glide_trace():
    p = PRESETS["glide-ddpm"]
    s = default_schedule(p.steps)
    d = ClosedFormDenoiser(make_test_templates("blobs", 16, 4), s)
    guide = make_test_templates("blobs", 16, 1, seed=123).templates[0]
    f = build_bilateral_tensor(guide, BilateralParams(p.sigma_spatial, p.sigma_value))
    drops, guided, settled = [], [], []
    for seed in range(10):
        gs = GuidanceState.from_guide(guide, f, p.delta, p.t_start, p.t_stop)
        traj = run_sampler(d, SamplerConfig(p.sampler, s, seed=seed), gs, keep_images=False)
        summ = trace_summary(traj, p.t_stop)
        by_t = dict(zip(summ.t, summ.d_scores))
        drops.append(by_t[p.t_start] - by_t[p.t_stop])
        guided.append(summ.guided_step_change)
        settled.append(summ.settled_step_change)
    ok = np.median(drops) > 0 and np.median(settled) < np.median(guided)
    assert report(7, ok, f"median d_bar drop over window={np.median(drops):.4f}, median |step change| "
                         f"during={np.median(guided):.4f} after={np.median(settled):.4f}")


def test_8_snr_and_parseval():
    s = linear_beta_schedule(1000)
    worst_ratio, worst_parseval, n_checked = math.inf, 0.0, 0
    for size, seed in [(16, 0), (32, 1), (32, 2), (64, 3)]:
        x = synth_one_over_f(size, seed, channels=3)
        worst_parseval = max(worst_parseval, abs(spectral_energy(x) / float((x ** 2).sum()) - 1))
        for t in range(1, s.T + 1):
            sp = snr_per_frequency(x, s, t)
            worst_ratio = min(worst_ratio, sp.amplitude[1] / sp.amplitude[-1])
            n_checked += 1
    for t in range(0, 51):
        sp = snr_per_frequency(synth_one_over_f(32, 7), default_schedule(50), t)
        if t > 0:
            worst_ratio = min(worst_ratio, sp.amplitude[1] / sp.amplitude[-1])
            n_checked += 1
    ok = worst_ratio > 1 and worst_parseval <= 1e-6
    assert report(8, ok, f"{n_checked} (stimulus, t) pairs, min SNR(low)/SNR(high)={worst_ratio:.2f}, "
                         f"Parseval rel err={worst_parseval:.1e}")


def test_9_overhead():
    cfg = RunConfig(guide_synthetic="blobs")
    res = dict(bench(cfg, reps=10, height=64, width=64, channels=4, template_count=8))
    per_step = float(np.mean(res["overhead_per_step"]))
    build = float(np.mean(res["filter_build"]))
    ratio = float(np.mean(res["run_guided"]) / np.mean(res["run_unguided"]))
    ok = per_step <= 0.010 and build <= 1.0 and ratio <= 1.25
    assert report(9, ok, f"per-step overhead={per_step * 1e3:.2f}ms (<=10), build={build:.3f}s (<=1), "
                         f"guided/unguided={ratio:.2f} (<=1.25); unguided step="
                         f"{np.mean(res['run_unguided']) / cfg.steps * 1e3:.2f}ms")


def test_10_laplacian_blend():
    rng = np.random.default_rng(10)
    ok_same = ok_one = True
    worst = 0.0
    for _ in range(20):
        x0 = rng.uniform(-1, 1, (16, 16, 3))
        f = build_bilateral_tensor(rng.uniform(-1, 1, (16, 16, 3)), BilateralParams(3.0, 0.3))
        ok_same &= laplacian_blend(x0, x0, f).tobytes() == x0.tobytes()
        a, g = rng.uniform(-1, 1, (1, 1, 3)), rng.uniform(-1, 1, (1, 1, 3))
        ok_one &= laplacian_blend(a, g, build_bilateral_tensor(g, BilateralParams())).tobytes() == g.tobytes()
        op = LowpassOperator(16, 16, 4, upsample="nearest")
        guide = rng.uniform(-1, 1, (16, 16, 3))
        worst = max(worst, np.max(np.abs(op.apply(laplacian_blend(x0, guide, op)) - op.apply(guide))))
    ok = ok_same and ok_one and worst <= 1e-9
    assert report(10, ok, f"guide=x0 bitwise={ok_same}, 1x1 bitwise={ok_one}, projection gap={worst:.1e}")
