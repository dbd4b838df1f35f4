"""Whole-sequence evaluation: run a trained model over held-out sequences,
score PSNR/SSIM against the clean frames, and compare with the classic
no-learning baseline (invert the known exposure curve, then bicubic
upsample). Also drives the ablation sweep."""

from __future__ import annotations

import os

import numpy as np

from .data_synth import SequenceRecord, window
from .fileio import ensure_dir
from .filters import normalize_filters, apply_dp3df, combine_residual
from .metrics import EvalReport, psnr, ssim
from .predictor import Predictor
from .trainer import TrainConfig, load_checkpoint, train


def _cubic_kernel(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Catmull-Rom style cubic, the standard bicubic interpolation kernel."""
    ax = np.abs(x)
    out = np.zeros_like(ax)
    inner = ax <= 1
    outer = (ax > 1) & (ax < 2)
    out[inner] = (a + 2) * ax[inner] ** 3 - (a + 3) * ax[inner] ** 2 + 1
    out[outer] = a * ax[outer] ** 3 - 5 * a * ax[outer] ** 2 + 8 * a * ax[outer] - 4 * a
    return out


def _resize_matrix(n_in: int, factor: int) -> np.ndarray:
    """[n_in*factor, n_in] row-stochastic bicubic interpolation matrix."""
    n_out = n_in * factor
    centers = (np.arange(n_out) + 0.5) / factor - 0.5
    base = np.floor(centers).astype(int)
    mat = np.zeros((n_out, n_in))
    for tap in range(-1, 3):
        src = base + tap
        w = _cubic_kernel(centers - src)
        src = np.clip(src, 0, n_in - 1)
        np.add.at(mat, (np.arange(n_out), src), w)
    return mat / mat.sum(axis=1, keepdims=True)


def bicubic_upsample(frame: np.ndarray, factor: int) -> np.ndarray:
    """Separable bicubic upsampling with replicated edges, [H,W,C] float."""
    if factor == 1:
        return frame.copy()
    h, w = frame.shape[:2]
    my = _resize_matrix(h, factor)
    mx = _resize_matrix(w, factor)
    out = np.einsum("ij,jwc->iwc", my, frame.astype(np.float64))
    out = np.einsum("kj,hjc->hkc", mx, out)
    return out.astype(frame.dtype)


def baseline_restore(lln_frame: np.ndarray, meta: dict) -> np.ndarray:
    """Invert the known darkening ((e*x)^g) pointwise, then bicubic upsample."""
    exposure = float(meta["exposure"])
    gamma = float(meta["gamma"])
    x = np.clip(lln_frame.astype(np.float64), 0.0, 1.0)
    restored = np.clip(x ** (1.0 / gamma) / exposure, 0.0, 1.0)
    return bicubic_upsample(restored.astype(np.float32), int(meta["r"]))


def evaluate_baseline(records: list) -> EvalReport:
    report = EvalReport()
    for rec in records:
        seq = os.path.basename(rec.directory)
        for t in range(rec.n_frames):
            restored = baseline_restore(rec.lln[t], rec.meta)
            report.add(seq, t, psnr(restored, rec.hnn[t]), ssim(restored, rec.hnn[t]))
    return report


def enhance_clip(clip: np.ndarray, weights: dict, pred: Predictor, threads: int = 1):
    """One clip -> (Z, R, Y) full-res frames."""
    geom = pred.geometry
    raw, res = pred.forward(clip, weights)
    field = normalize_filters(raw, geom)
    variant = "parallel" if threads > 1 else "tiled"
    z = apply_dp3df(clip, field, geom, variant=variant, threads=threads)
    r = res if res is not None else np.zeros_like(z)
    y = combine_residual(z, r)
    return z, r, y


def evaluate_model(weights: dict, config: TrainConfig, records: list,
                   threads: int = 1) -> EvalReport:
    pred = Predictor(config.predictor)
    n = pred.geometry.center_frame
    report = EvalReport()
    for rec in records:
        seq = os.path.basename(rec.directory)
        for t in range(rec.n_frames):
            clip = window(rec.lln, t, n)
            _, _, y = enhance_clip(clip, weights, pred, threads)
            report.add(seq, t, psnr(y, rec.hnn[t]), ssim(y, rec.hnn[t]))
    return report


ABLATION_ORDER = ("none", "no_temporal", "no_spatial", "no_residual")
ABLATION_LABELS = {"none": "full"}


def run_ablation(base: TrainConfig, train_records: list, test_records: list,
                 out_dir: str):
    """Train every ablation variant with the same seed and score it.

    Returns [(label, psnr, ssim)] in a fixed order; artifacts land in
    out_dir/<label>/."""
    from dataclasses import replace

    ensure_dir(out_dir)
    rows = []
    for ablation in ABLATION_ORDER:
        label = ABLATION_LABELS.get(ablation, ablation)
        cfg = replace(base, predictor=replace(base.predictor, ablation=ablation))
        run_dir = os.path.join(out_dir, label)
        result = train(cfg, train_records, run_dir)
        weights, _ = load_checkpoint(result.checkpoint_path)
        report = evaluate_model(weights, cfg, test_records, threads=cfg.threads)
        rows.append((label, report.mean_psnr, report.mean_ssim))
    return rows


def ablation_csv(rows) -> str:
    lines = ["variant,psnr,ssim\n"]
    for label, p, s in rows:
        lines.append(f"{label},{p:.6f},{s:.6f}\n")
    return "".join(lines)
