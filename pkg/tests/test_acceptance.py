"""Acceptance suite: ten gates, one test per criterion, in order.

Each test prints a single `[criterion NN] name: PASS/FAIL (detail)` line
(visible with `pytest -s` or in the captured output). The training-based
criteria are seeded end to end and reuse each other's runs where the
criterion allows it, so the suite stays inside its time budgets.
"""

import itertools
import time
from dataclasses import replace

import numpy as np
import pytest

from dp3df.bench import bench_instance
from dp3df.data_synth import DegradeParams, make_dataset, window
from dp3df.evaluate import evaluate_baseline, evaluate_model, run_ablation
from dp3df.filters import FilterGeometry, apply_dp3df, normalize_filters, reduce_to_special_case
from dp3df.gradcheck import run_gradcheck
from dp3df.losses import LossWeights
from dp3df.metrics import psnr, ssim
from dp3df.predictor import Predictor, PredictorConfig
from dp3df.trainer import TrainConfig, load_checkpoint, train

from oracles import apply_loop, box_blur_3d_loop, upsample_2d_dynamic_loop


def report(num, name, ok, detail):
    print(f"\n[criterion {num:02d}] {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {num} {name}: {detail}"


# ---------------------------------------------------------------------------
# shared fixtures
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def desk_dataset(tmp_path_factory):
    """8 sequences x 16 frames at 96^2 low-res, r=4, plus a held-out test set."""
    root = tmp_path_factory.mktemp("accept_desk")
    params = DegradeParams(r=4, exposure=0.25, gamma=1.8, read_noise=0.01,
                           shot_noise=0.04, seed=0)
    train_recs = make_dataset(8, 16, (96, 96), params, str(root / "train"), seed=11,
                              exposure_range=(0.15, 0.3), gamma_range=(1.5, 2.0))
    test_recs = make_dataset(3, 6, (96, 96), params, str(root / "test"), seed=77,
                             exposure_range=(0.15, 0.3), gamma_range=(1.5, 2.0))
    return train_recs, test_recs


@pytest.fixture(scope="module")
def desk_run(desk_dataset, tmp_path_factory):
    """Criterion 5's full-scale run: 2000 steps, default desk config."""
    train_recs, _ = desk_dataset
    geom = FilterGeometry(r=4, k_h=3, k_w=3, k_t=3, t_frames=3)
    cfg = TrainConfig(predictor=PredictorConfig(geometry=geom), total_steps=2000,
                      batch=4, patch=64, seed=0)
    out = tmp_path_factory.mktemp("accept_run")
    result = train(cfg, train_recs, str(out))
    return cfg, result


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    """Smaller r=2 dataset for the ablation and smoothness criteria."""
    root = tmp_path_factory.mktemp("accept_small")
    params = DegradeParams(r=2, exposure=0.25, gamma=1.8, read_noise=0.01,
                           shot_noise=0.04, seed=0)
    train_recs = make_dataset(4, 10, (64, 64), params, str(root / "train"), seed=21,
                              exposure_range=(0.15, 0.3), gamma_range=(1.5, 2.0))
    test_recs = make_dataset(2, 6, (64, 64), params, str(root / "test"), seed=91,
                             exposure_range=(0.15, 0.3), gamma_range=(1.5, 2.0))
    return train_recs, test_recs


def small_config(seed=0):
    geom = FilterGeometry(r=2, k_h=3, k_w=3, k_t=3, t_frames=3)
    return TrainConfig(
        predictor=PredictorConfig(geometry=geom, levels=2, channels=(12, 24),
                                  blocks_per_level=1),
        total_steps=500, batch=4, patch=32, seed=seed,
    )


@pytest.fixture(scope="module")
def ablation_runs(small_dataset, tmp_path_factory):
    """One run per ablation variant, same seed and steps."""
    train_recs, test_recs = small_dataset
    out = tmp_path_factory.mktemp("accept_ablate")
    rows = run_ablation(small_config(), train_recs, test_recs, str(out))
    return rows, str(out)


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------


def test_criterion_01_gradient_suite():
    """Analytic gradients match central differences, >= 200 params, < 2 min."""
    t0 = time.perf_counter()
    suites, ok = run_gradcheck(seed=0, predictor_samples=220)
    elapsed = time.perf_counter() - t0
    total = sum(s.checked for s in suites)
    worst = max(s.max_rel_err for s in suites)
    covered = {s.name for s in suites}
    ok = (ok and total >= 200 and elapsed < 120.0
          and {"apply_dp3df", "losses", "predictor_full"} <= covered)
    report(1, "gradient suite", ok,
           f"{total} params, max rel err {worst:.2e}, {elapsed:.1f}s")


def test_criterion_02_oracle_equivalence():
    """Optimized apply equals the 7-loop oracle over a randomized grid."""
    rng = np.random.default_rng(0)
    worst = 0.0
    tested = 0
    for t, r, kh, kw, kt in itertools.product((1, 3, 5), (1, 2, 4), (1, 3), (1, 3), (1, 3)):
        if kt > t:
            continue
        h = int(rng.integers(4, 17))
        w = int(rng.integers(4, 17))
        geom = FilterGeometry(r=r, k_h=kh, k_w=kw, k_t=kt, t_frames=t)
        clip = rng.random((t, h, w, 2))
        raw = rng.standard_normal((h, w, geom.raw_channels))
        field = normalize_filters(raw, geom)
        want = apply_loop(clip, field.weights, field.gains, r, kh, kw, kt)
        for variant, threads in (("tiled", 1), ("parallel", 2)):
            got = apply_dp3df(clip, field, geom, variant=variant, threads=threads)
            worst = max(worst, float(np.abs(got - want).max()))
        tested += 1
    ok = worst <= 1e-6 and tested >= 50
    report(2, "oracle equivalence", ok, f"{tested} instances, max |d| {worst:.2e}")


def test_criterion_03_normalization_invariants():
    """Kernels sum to one with positive taps, gains > 1, Z = c*L on constants."""
    rng = np.random.default_rng(1)
    worst_sum = 0.0
    worst_prop = 0.0
    gains_ok = taps_ok = True
    for r in (1, 2, 4):
        geom = FilterGeometry(r=r, k_h=3, k_w=3, k_t=3, t_frames=3)
        raw = rng.standard_normal((8, 8, geom.raw_channels))
        field = normalize_filters(raw, geom)
        worst_sum = max(worst_sum, float(np.abs(field.weights.sum(-1) - 1).max()))
        taps_ok = taps_ok and bool((field.weights > 0).all())
        gains_ok = gains_ok and bool((field.gains > 1).all())
        c = float(rng.uniform(0.1, 0.9))
        clip = np.full((3, 8, 8, 2), c)
        z = apply_dp3df(clip, field, geom)
        want = (c * field.gains.reshape(8, 8, r, r).transpose(0, 2, 1, 3)
                .reshape(8 * r, 8 * r))[:, :, None]
        worst_prop = max(worst_prop, float(np.abs(z - want).max()))
    ok = worst_sum <= 1e-6 and taps_ok and gains_ok and worst_prop <= 1e-6
    report(3, "normalization invariants", ok,
           f"sum err {worst_sum:.2e}, taps>0 {taps_ok}, gains>1 {gains_ok}, "
           f"const-clip err {worst_prop:.2e}")


def test_criterion_04_special_case_reductions():
    """sr/denoise/illum reductions match independent references."""
    rng = np.random.default_rng(2)
    base = FilterGeometry(r=2, k_h=3, k_w=3, k_t=3, t_frames=3)
    worst = 0.0

    case = reduce_to_special_case(base, "sr")
    clip = rng.random((3, 6, 6, 3))
    raw = rng.standard_normal((6, 6, case.geometry.raw_channels))
    f = normalize_filters(raw, case.geometry, unit_gain=True)
    z = apply_dp3df(clip, f, case.geometry)
    want = upsample_2d_dynamic_loop(clip[1], f.weights.reshape(6, 6, 4, 9), 2, 3, 3)
    worst = max(worst, float(np.abs(z - want).max()))

    case = reduce_to_special_case(base, "denoise")
    clip = rng.random((3, 6, 6, 3))
    raw = np.zeros((6, 6, case.geometry.raw_channels))
    f = normalize_filters(raw, case.geometry, unit_gain=True)
    z = apply_dp3df(clip, f, case.geometry)
    worst = max(worst, float(np.abs(z - box_blur_3d_loop(clip, 3, 3, 3)).max()))

    case = reduce_to_special_case(base, "illum")
    clip = rng.random((3, 6, 6, 3))
    raw = np.zeros((6, 6, case.geometry.raw_channels))  # sigmoid(0) -> gain 2
    f = normalize_filters(raw, case.geometry)
    z = apply_dp3df(clip, f, case.geometry)
    worst = max(worst, float(np.abs(z - 2.0 * clip[1]).max()))

    ok = worst <= 1e-6
    report(4, "special-case reductions", ok, f"max |d| {worst:.2e}")


def test_criterion_05_scaled_training_trend(desk_dataset, desk_run):
    """Default desk training beats the bicubic+inverse-exposure baseline by
    >= 1 dB and total loss falls >= 50% from step 50; runtime within budget."""
    _, test_recs = desk_dataset
    cfg, result = desk_run
    with open(result.loss_csv_path) as f:
        rows = f.read().strip().splitlines()[1:]
    totals = [float(r.split(",")[4]) for r in rows]
    loss_ratio = totals[-1] / totals[50]
    weights, _ = load_checkpoint(result.checkpoint_path)
    model_rep = evaluate_model(weights, cfg, test_recs)
    base_rep = evaluate_baseline(test_recs)
    gain = model_rep.mean_psnr - base_rep.mean_psnr
    ok = (gain >= 1.0 and loss_ratio <= 0.5 and result.elapsed_s <= 15 * 60)
    report(5, "scaled training trend", ok,
           f"+{gain:.2f} dB over baseline ({model_rep.mean_psnr:.2f} vs "
           f"{base_rep.mean_psnr:.2f}), loss x{loss_ratio:.3f} from step 50, "
           f"{result.elapsed_s:.0f}s train")


def test_criterion_06_ablation_ordering(ablation_runs):
    """Full model PSNR >= every ablated variant (same seed, same steps)."""
    rows, _ = ablation_runs
    scores = dict((label, p) for label, p, _ in rows)
    full = scores["full"]
    ok = all(full >= scores[v] for v in ("no_temporal", "no_spatial", "no_residual"))
    detail = ", ".join(f"{label} {p:.2f}" for label, p, _ in rows)
    report(6, "ablation ordering", ok, detail)


def _l_map_msd(run_dir, cfg, test_recs):
    """Mean squared forward difference of the gain maps over test frames."""
    weights, _ = load_checkpoint(run_dir + "/model.dpt")
    pred = Predictor(cfg.predictor)
    msds = []
    for rec in test_recs:
        for t in range(rec.n_frames):
            clip = window(rec.lln, t, pred.geometry.center_frame)
            raw, _ = pred.forward(clip, weights)
            gains = normalize_filters(raw, pred.geometry).gains
            dx = np.diff(gains, axis=1)
            dy = np.diff(gains, axis=0)
            msds.append(float((dx**2).mean() + (dy**2).mean()))
    return float(np.mean(msds))


def test_criterion_07_smoothness_behavior(small_dataset, ablation_runs, tmp_path):
    """Raising lambda2 10x flattens the trained gain maps by >= 25%."""
    train_recs, test_recs = small_dataset
    _, ablate_dir = ablation_runs
    base = small_config()
    cfg10 = replace(base, loss_weights=LossWeights(1.0, 1.0, 1.0))
    train(cfg10, train_recs, str(tmp_path / "smooth10"))
    msd_default = _l_map_msd(ablate_dir + "/full", base, test_recs)
    msd_10x = _l_map_msd(str(tmp_path / "smooth10"), cfg10, test_recs)
    decrease = 1.0 - msd_10x / msd_default
    ok = decrease >= 0.25
    report(7, "smoothness behavior", ok,
           f"MSD {msd_default:.3e} -> {msd_10x:.3e}, {100 * decrease:.1f}% decrease")


def test_criterion_08_metric_fixtures():
    """PSNR and SSIM analytic fixtures."""
    a = np.zeros((10, 10))
    b = np.full((10, 10), 0.1)
    p = psnr(a, b)
    x = np.random.default_rng(3).random((24, 24, 3), dtype=np.float32)
    s = ssim(x, x.copy())
    ok = abs(p - 20.0) <= 1e-9 and abs(s - 1.0) <= 1e-6
    report(8, "metric fixtures", ok, f"psnr(mse=0.01)={p:.9f}, ssim(x,x)={s:.9f}")


def test_criterion_09_determinism(tmp_path):
    """Same seed: bit-identical loss CSV and checkpoint across two runs and
    across thread counts 1 and 4."""
    params = DegradeParams(r=2, exposure=0.3, gamma=1.5, read_noise=0.005,
                           shot_noise=0.02, seed=0)
    recs = make_dataset(2, 5, (24, 24), params, str(tmp_path / "ds"), seed=5)
    geom = FilterGeometry(r=2, k_h=3, k_w=3, k_t=3, t_frames=3)

    def cfg(threads):
        return TrainConfig(
            predictor=PredictorConfig(geometry=geom, levels=1, channels=(8,),
                                      blocks_per_level=1),
            total_steps=40, batch=2, patch=16, seed=3, threads=threads,
        )

    runs = [train(cfg(t), recs, str(tmp_path / f"run{i}"))
            for i, t in enumerate((1, 1, 4))]
    csvs = [open(r.loss_csv_path, "rb").read() for r in runs]
    ckpts = [open(r.checkpoint_path, "rb").read() for r in runs]
    ok = csvs[0] == csvs[1] == csvs[2] and ckpts[0] == ckpts[1] == ckpts[2]
    report(9, "determinism", ok,
           f"csv {len(csvs[0])} B and checkpoint {len(ckpts[0])} B identical "
           f"across 2 runs and threads 1/4")


def test_criterion_10_bench_gate_and_speedup():
    """All timed variants within 1e-6 of naive; parallel >= 2x naive
    throughput on the 256^2, T=3, r=4, k=3^3 instance with 4 threads."""
    results = bench_instance(height=256, width=256, t_frames=3, r=4,
                             k_h=3, k_w=3, k_t=3, threads=4, repeats=3, seed=0)
    by_name = {r.variant: r for r in results}
    gates = all(r.gate_passed for r in results)
    speedup = by_name["parallel"].throughput_px_s / by_name["naive"].throughput_px_s
    ok = gates and speedup >= 2.0
    report(10, "bench gate and speedup", ok,
           f"gates {'ok' if gates else 'FAILED'}, parallel/naive {speedup:.2f}x, "
           f"max |d| {max(r.max_abs_diff for r in results):.2e}")
