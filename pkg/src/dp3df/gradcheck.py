"""Finite-difference verification of every analytic gradient.

Primitives are probed with central differences at step 1e-3 in float64.
The end-to-end network check retries shrinking steps (1e-4, 1e-5, 1e-6)
per probe: kinks in the leaky relu / clamp make a single fixed step
unreliable, while a genuinely wrong analytic gradient stays wrong at
every step size.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .filters import (
    FilterGeometry,
    apply_dp3df,
    apply_dp3df_backward,
    combine_residual,
    combine_residual_bwd,
    normalize_filters,
    normalize_filters_bwd,
    apply_field_bwd,
)
from .losses import LossWeights, recon_loss, smoothness_loss, smoothness_weights, total_loss
from .predictor import Predictor, PredictorConfig, clip_to_input, init_weights
from .tensor_ops import (
    conv2d_bwd,
    conv2d_fwd,
    instance_norm_bwd,
    instance_norm_fwd,
    leaky_relu,
    leaky_relu_bwd,
    pixel_shuffle,
    pixel_shuffle_bwd,
    softmax_axis,
    softmax_axis_bwd,
)

DEFAULT_TOL = 1e-4


@dataclass
class SuiteResult:
    name: str
    checked: int
    max_rel_err: float
    threshold: float = DEFAULT_TOL

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.threshold


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


def fd_probe(f, arr: np.ndarray, idx, h: float) -> float:
    """Central difference of scalar f in one entry of arr (mutated in place)."""
    orig = arr[idx]
    arr[idx] = orig + h
    fp = f()
    arr[idx] = orig - h
    fm = f()
    arr[idx] = orig
    return (fp - fm) / (2.0 * h)


def check_entries(f, arr, analytic, rng, n_samples, h_schedule=(1e-3,)):
    """Max relative error over sampled entries; tries each h until one passes."""
    flat_idx = rng.choice(arr.size, size=min(n_samples, arr.size), replace=False)
    worst = 0.0
    for fi in flat_idx:
        idx = np.unravel_index(fi, arr.shape)
        best = np.inf
        for h in h_schedule:
            fd = fd_probe(f, arr, idx, h)
            best = min(best, rel_err(float(analytic[idx]), fd))
            if best <= DEFAULT_TOL:
                break
        worst = max(worst, best)
    return worst


# ---------------------------------------------------------------------------
# primitive suites (step 1e-3, float64)
# ---------------------------------------------------------------------------


def suite_conv2d(rng) -> SuiteResult:
    x = rng.standard_normal((1, 2, 5, 6))
    w = rng.standard_normal((3, 2, 3, 3)) * 0.5
    b = rng.standard_normal(3) * 0.1

    worst, n = 0.0, 0
    for stride, padding in ((1, "replicate"), (2, "zero")):
        out, cache = conv2d_fwd(x, w, b, stride, padding)
        pj = rng.standard_normal(out.shape)

        def f(stride=stride, padding=padding, pj=pj):
            return float((pj * conv2d_fwd(x, w, b, stride, padding)[0]).sum())

        gx, gw, gb = conv2d_bwd(pj, cache)
        worst = max(worst, check_entries(f, x, gx, rng, 20))
        worst = max(worst, check_entries(f, w, gw, rng, 20))
        worst = max(worst, check_entries(f, b, gb, rng, 3))
        n += 43
    return SuiteResult("conv2d", n, worst)


def suite_softmax(rng) -> SuiteResult:
    x = rng.standard_normal((4, 7, 3))
    proj = rng.standard_normal(x.shape)

    def f():
        return float((proj * softmax_axis(x, 1)).sum())

    s = softmax_axis(x, 1)
    g = softmax_axis_bwd(proj, s, 1)
    worst = check_entries(f, x, g, rng, 30)
    return SuiteResult("softmax_axis", 30, worst)


def suite_instance_norm(rng) -> SuiteResult:
    x = rng.standard_normal((2, 3, 5, 4))
    gamma = 1.0 + 0.1 * rng.standard_normal(3)
    beta = 0.1 * rng.standard_normal(3)
    proj = rng.standard_normal(x.shape)

    def f():
        return float((proj * instance_norm_fwd(x, gamma, beta)[0]).sum())

    _, cache = instance_norm_fwd(x, gamma, beta)
    gx, gg, gb = instance_norm_bwd(proj, cache)
    worst = check_entries(f, x, gx, rng, 25)
    worst = max(worst, check_entries(f, gamma, gg, rng, 3))
    worst = max(worst, check_entries(f, beta, gb, rng, 3))
    return SuiteResult("instance_norm", 31, worst)


def suite_pixel_shuffle(rng) -> SuiteResult:
    x = rng.standard_normal((1, 8, 3, 3))
    proj = rng.standard_normal((1, 2, 6, 6))

    def f():
        return float((proj * pixel_shuffle(x, 2)).sum())

    g = pixel_shuffle_bwd(proj, 2)
    worst = check_entries(f, x, g, rng, 20)
    return SuiteResult("pixel_shuffle", 20, worst)


def suite_leaky_relu(rng) -> SuiteResult:
    # sample away from the kink at 0 so the fixed 1e-3 step is valid
    x = rng.uniform(0.05, 2.0, size=(40,)) * rng.choice([-1.0, 1.0], size=(40,))
    proj = rng.standard_normal(x.shape)

    def f():
        return float((proj * leaky_relu(x)).sum())

    g = leaky_relu_bwd(proj, x)
    worst = check_entries(f, x, g, rng, 25)
    return SuiteResult("leaky_relu", 25, worst)


# ---------------------------------------------------------------------------
# filter application suite
# ---------------------------------------------------------------------------


def suite_apply(rng) -> SuiteResult:
    geom = FilterGeometry(r=2, k_h=3, k_w=3, k_t=3, t_frames=3)
    h = w = 3
    clip = rng.uniform(0.05, 0.95, size=(3, h, w, 2))
    raw = rng.standard_normal((h, w, geom.raw_channels))
    proj = rng.standard_normal((h * 2, w * 2, 2))

    def f():
        field = normalize_filters(raw, geom)
        return float((proj * apply_dp3df(clip, field, geom)).sum())

    field = normalize_filters(raw, geom)
    g_clip, g_raw = apply_dp3df_backward(clip, field, geom, proj)
    worst = check_entries(f, raw, g_raw, rng, 120)
    worst = max(worst, check_entries(f, clip, g_clip, rng, 40))
    return SuiteResult("apply_dp3df", 160, worst)


# ---------------------------------------------------------------------------
# loss suites
# ---------------------------------------------------------------------------


def suite_losses(rng) -> SuiteResult:
    worst, n = 0.0, 0

    pred = rng.uniform(0.1, 0.9, size=(5, 6, 3))
    gt = rng.uniform(0.1, 0.9, size=(5, 6, 3))

    def f_recon():
        return recon_loss(pred, gt)[0]

    _, g = recon_loss(pred, gt)
    worst = max(worst, check_entries(f_recon, pred, g, rng, 20))
    n += 20

    frame = rng.uniform(0.05, 0.9, size=(6, 6, 3))
    sw = smoothness_weights(frame)
    maps = 1.0 + rng.uniform(0.0, 1.0, size=(6, 6, 4))

    def f_smooth():
        return smoothness_loss(maps, sw)[0]

    _, gm = smoothness_loss(maps, sw)
    worst = max(worst, check_entries(f_smooth, maps, gm, rng, 25))
    n += 25

    z = rng.uniform(0.15, 0.85, size=(8, 8, 3))
    y = rng.uniform(0.15, 0.85, size=(8, 8, 3))
    tgt = rng.uniform(0.1, 0.9, size=(8, 8, 3))
    lmaps = 1.0 + rng.uniform(0.0, 1.0, size=(4, 4, 4))
    sw2 = smoothness_weights(rng.uniform(0.05, 0.9, size=(4, 4, 3)))
    lw = LossWeights(1.0, 0.1, 1.0)

    def f_total():
        return total_loss(z, y, tgt, lmaps, lw, sw2).total

    rep = total_loss(z, y, tgt, lmaps, lw, sw2)
    worst = max(worst, check_entries(f_total, z, rep.g_z, rng, 10))
    worst = max(worst, check_entries(f_total, y, rep.g_y, rng, 10))
    worst = max(worst, check_entries(f_total, lmaps, rep.g_l_maps, rng, 10))
    n += 30
    return SuiteResult("losses", n, worst)


# ---------------------------------------------------------------------------
# full-network suite
# ---------------------------------------------------------------------------


def tiny_config() -> PredictorConfig:
    geom = FilterGeometry(r=2, k_h=3, k_w=3, k_t=3, t_frames=3)
    return PredictorConfig(geometry=geom, levels=1, channels=(8,),
                           blocks_per_level=1, in_channels=3)


def pipeline_loss_and_grads(clip, gt, weights, config: PredictorConfig,
                            lw: LossWeights):
    """Loss of the full chain and its analytic weight gradients."""
    pred = Predictor(config)
    geom = pred.geometry
    x = clip_to_input(clip)
    raw_b, res_b, cache = pred.forward_batch(x, weights)
    field = normalize_filters(raw_b[0], geom)
    z = apply_dp3df(clip, field, geom)
    res = res_b[0] if res_b is not None else np.zeros_like(z)
    y = combine_residual(z, res)
    smooth = smoothness_weights(clip[geom.center_frame], lw.eps)
    report = total_loss(z, y, gt, field.gains, lw, smooth)
    gz_c, gres = combine_residual_bwd(report.g_y, z, res)
    gz = report.g_z + gz_c
    _, g_w, g_g = apply_field_bwd(clip, field, geom, gz)
    g_g = g_g + report.g_l_maps
    graw = normalize_filters_bwd(field, g_w, g_g, geom)
    grads = pred.backward_batch(weights, cache, graw[None],
                                gres[None] if res_b is not None else None)
    return report.total, grads


def suite_predictor(rng, n_samples: int = 220) -> SuiteResult:
    config = tiny_config()
    weights = {k: v.astype(np.float64) for k, v in init_weights(config, seed=7).items()}
    clip = rng.uniform(0.08, 0.55, size=(3, 8, 8, 3))
    gt = rng.uniform(0.15, 0.85, size=(16, 16, 3))
    lw = LossWeights(1.0, 0.01, 1.0)

    def f():
        return pipeline_loss_and_grads(clip, gt, weights, config, lw)[0]

    _, grads = pipeline_loss_and_grads(clip, gt, weights, config, lw)
    names = sorted(weights)
    sizes = np.array([weights[n].size for n in names], dtype=np.float64)
    picks = rng.choice(len(names), size=n_samples, p=sizes / sizes.sum())
    worst = 0.0
    checked = 0
    for pick in picks:
        name = names[pick]
        arr = weights[name]
        fi = int(rng.integers(arr.size))
        idx = np.unravel_index(fi, arr.shape)
        best = np.inf
        for h in (1e-4, 1e-5, 1e-6):
            fd = fd_probe(f, arr, idx, h)
            best = min(best, rel_err(float(grads[name][idx]), fd))
            if best <= DEFAULT_TOL:
                break
        worst = max(worst, best)
        checked += 1
    return SuiteResult("predictor_full", checked, worst)


def run_gradcheck(seed: int = 0, predictor_samples: int = 220):
    rng = np.random.default_rng(seed)
    suites = [
        suite_conv2d(rng),
        suite_softmax(rng),
        suite_instance_norm(rng),
        suite_pixel_shuffle(rng),
        suite_leaky_relu(rng),
        suite_apply(rng),
        suite_losses(rng),
        suite_predictor(rng, predictor_samples),
    ]
    return suites, all(s.passed for s in suites)
