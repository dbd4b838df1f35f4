"""End-to-end optimization loop.

Patches are cropped from the low-res frames, windowed into T-frame clips,
augmented (rot90 multiples plus horizontal flip, applied consistently to
the clip and high-res target), pushed through the predictor, filtered,
fused with the residual, scored, and the whole chain is differentiated by
hand back to the weights. Adam with bias correction, cosine learning rate,
global-norm gradient clipping at 10.

A run is bit-reproducible: same seed and config give identical loss CSVs
and checkpoints regardless of the thread count used for filtering.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from .data_synth import window
from .errors import ContractViolation, TrainingDiverged
from .fileio import ensure_dir, write_config, write_container
from .filters import (
    FilterGeometry,
    apply_dp3df,
    apply_field_bwd,
    combine_residual,
    combine_residual_bwd,
    normalize_filters,
    normalize_filters_bwd,
)
from .losses import LossWeights, smoothness_weights, total_loss
from .predictor import Predictor, PredictorConfig, clip_to_input, init_weights


@dataclass(frozen=True)
class TrainConfig:
    predictor: PredictorConfig
    lr0: float = 4e-4
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    batch: int = 4
    patch: int = 64
    total_steps: int = 2000
    seed: int = 0
    grad_clip: float = 10.0
    threads: int = 1
    loss_weights: LossWeights = dc_field(default_factory=LossWeights)
    checkpoint_every: int = 0  # 0 = final only
    unit_gain: bool = False    # bypass the gain path (gains pinned to 1)

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ContractViolation(f"train: lr0 must be > 0, got {self.lr0}")
        if self.patch % (1 << self.predictor.levels):
            raise ContractViolation(
                f"train: patch ({self.patch}) must divide 2^levels "
                f"({1 << self.predictor.levels})"
            )
        if self.batch < 1 or self.total_steps < 1:
            raise ContractViolation("train: batch and total_steps must be >= 1")


@dataclass
class OptimizerState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def for_weights(cls, weights):
        return cls(
            m={k: np.zeros_like(w) for k, w in weights.items()},
            v={k: np.zeros_like(w) for k, w in weights.items()},
        )


def adam_step(weights: dict, grads: dict, state: OptimizerState, lr: float,
              betas=(0.9, 0.999), eps=1e-8):
    """Bias-corrected Adam update, in place. Aborts on a non-finite gradient."""
    b1, b2 = betas
    state.step += 1
    t = state.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name in sorted(weights):
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        weights[name] -= (lr / c1) * m / (np.sqrt(v / c2) + eps)
    return weights, state


def cosine_lr(step: int, total: int, lr0: float) -> float:
    """lr0 * 0.5 * (1 + cos(pi * step / total)); lr0 at 0, 0 at total."""
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * min(step, total) / total))


def augment(clip: np.ndarray, target: np.ndarray, rng: np.random.Generator):
    """Shared random rot90 multiple and horizontal flip for clip and target."""
    k = int(rng.integers(0, 4))
    flip = bool(rng.random() < 0.5)
    if k:
        clip = np.rot90(clip, k, axes=(1, 2))
        target = np.rot90(target, k, axes=(0, 1))
    if flip:
        clip = clip[:, :, ::-1, :]
        target = target[:, ::-1, :]
    return np.ascontiguousarray(clip), np.ascontiguousarray(target)


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    sq = 0.0
    for name in sorted(grads):
        g = grads[name]
        sq += float(np.dot(g.ravel(), g.ravel()))
    norm = math.sqrt(sq)
    if norm > max_norm:
        scale = np.float32(max_norm / (norm + 1e-12))
        for name in grads:
            grads[name] = grads[name] * scale
    return norm


@dataclass
class TrainResult:
    checkpoint_path: str
    config_path: str
    loss_csv_path: str
    steps: int
    first_losses: dict
    final_losses: dict
    elapsed_s: float


def _sample_batch(records, cfg: TrainConfig, rng):
    """Aligned (clip, target, center_frame) triples for one step."""
    geom = cfg.predictor.geometry
    n = geom.center_frame
    r = geom.r
    p = cfg.patch
    batch = []
    for _ in range(cfg.batch):
        rec = records[int(rng.integers(len(records)))]
        t = int(rng.integers(rec.n_frames))
        h, w = rec.lln.shape[1:3]
        if h < p or w < p:
            raise ContractViolation(
                f"train: patch {p} larger than frames {h}x{w} in {rec.directory}"
            )
        i = int(rng.integers(h - p + 1))
        j = int(rng.integers(w - p + 1))
        clip = window(rec.lln, t, n)[:, i:i + p, j:j + p, :]
        target = rec.hnn[t, i * r:(i + p) * r, j * r:(j + p) * r, :]
        clip, target = augment(clip, target, rng)
        batch.append((clip, target))
    return batch


def _format_row(step, parts):
    return "%d,%r,%r,%r,%r\n" % (step, parts[0], parts[1], parts[2], parts[3])


def train(config: TrainConfig, records, out_dir: str) -> TrainResult:
    """Optimize on the given sequences; write checkpoint, config and loss CSV."""
    if not records:
        raise ContractViolation("train: empty dataset")
    ensure_dir(out_dir)
    started = time.perf_counter()
    pred = Predictor(config.predictor)
    geom = pred.geometry
    weights = init_weights(config.predictor, config.seed)
    state = OptimizerState.for_weights(weights)
    rng = np.random.default_rng(config.seed)
    rows = ["step,loss_r,loss_s,loss_e,total\n"]
    first = last = None
    variant = "parallel" if config.threads > 1 else "tiled"

    for step in range(config.total_steps):
        lr = cosine_lr(step, config.total_steps, config.lr0)
        batch = _sample_batch(records, config, rng)
        x = np.concatenate([clip_to_input(c) for c, _ in batch], axis=0)
        raw_b, res_b, cache = pred.forward_batch(x, weights)

        g_raw = np.empty_like(raw_b)
        g_res = np.empty_like(res_b) if res_b is not None else None
        sums = np.zeros(4, dtype=np.float64)
        for b, (clip, target) in enumerate(batch):
            field = normalize_filters(raw_b[b], geom, unit_gain=config.unit_gain)
            z = apply_dp3df(clip, field, geom, variant=variant, threads=config.threads)
            res = res_b[b] if res_b is not None else np.zeros_like(z)
            y = combine_residual(z, res)
            smooth = smoothness_weights(clip[geom.center_frame], config.loss_weights.eps)
            report = total_loss(z, y, target, field.gains, config.loss_weights, smooth)
            if not math.isfinite(report.total):
                raise TrainingDiverged(
                    f"loss became non-finite at step {step} "
                    f"(recon_z={report.recon_z}, smooth={report.smooth}, "
                    f"recon_y={report.recon_y})"
                )
            sums += (report.recon_z, report.smooth, report.recon_y, report.total)
            gz_c, gres = combine_residual_bwd(report.g_y, z, res)
            gz = report.g_z + gz_c
            _, g_w, g_g = apply_field_bwd(clip, field, geom, gz)
            g_g = g_g + report.g_l_maps
            normalize_filters_bwd(field, g_w, g_g, geom, out=g_raw[b])
            if g_res is not None:
                g_res[b] = gres

        scale = np.float32(1.0 / config.batch)
        g_raw *= scale
        if g_res is not None:
            g_res *= scale
        grads = pred.backward_batch(weights, cache, g_raw, g_res)
        clip_grad_norm(grads, config.grad_clip)
        adam_step(weights, grads, state, lr, config.betas, config.adam_eps)

        parts = tuple(float(v) for v in sums / config.batch)
        rows.append(_format_row(step, parts))
        losses = {"loss_r": parts[0], "loss_s": parts[1], "loss_e": parts[2], "total": parts[3]}
        if first is None:
            first = losses
        last = losses
        if config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
            _save_checkpoint(os.path.join(out_dir, f"model_step{step + 1:06d}.dpt"),
                             weights, state)

    csv_path = os.path.join(out_dir, "loss.csv")
    with open(csv_path, "w", encoding="utf-8") as f:
        f.writelines(rows)
    ckpt_path = os.path.join(out_dir, "model.dpt")
    _save_checkpoint(ckpt_path, weights, state)
    cfg_path = os.path.join(out_dir, "model.cfg")
    write_config(cfg_path, describe_config(config))
    return TrainResult(
        checkpoint_path=ckpt_path,
        config_path=cfg_path,
        loss_csv_path=csv_path,
        steps=config.total_steps,
        first_losses=first,
        final_losses=last,
        elapsed_s=time.perf_counter() - started,
    )


def _save_checkpoint(path, weights, state: OptimizerState):
    sections = dict(weights)
    for name, arr in state.m.items():
        sections[f"opt.m.{name}"] = arr
    for name, arr in state.v.items():
        sections[f"opt.v.{name}"] = arr
    sections["opt.step"] = np.array([state.step], dtype=np.float32)
    write_container(path, sections)


def load_checkpoint(path):
    """Returns (weights, OptimizerState or None)."""
    sections = read_container_weights(path)
    weights = {k: v for k, v in sections.items() if not k.startswith("opt.")}
    if "opt.step" not in sections:
        return weights, None
    m = {k[len("opt.m."):]: v for k, v in sections.items() if k.startswith("opt.m.")}
    v = {k[len("opt.v."):]: v for k, v in sections.items() if k.startswith("opt.v.")}
    state = OptimizerState(m=m, v=v, step=int(sections["opt.step"][0]))
    return weights, state


def read_container_weights(path):
    from .fileio import read_container

    return read_container(path)


def describe_config(config: TrainConfig) -> dict:
    p = config.predictor
    g = p.geometry
    return {
        "levels": p.levels,
        "channels": tuple(p.channels),
        "blocks_per_level": p.blocks_per_level,
        "in_channels": p.in_channels,
        "ablation": p.ablation,
        "r": g.r,
        "kh": g.k_h,
        "kw": g.k_w,
        "kt": g.k_t,
        "frames": g.t_frames,
        "lr0": config.lr0,
        "batch": config.batch,
        "patch": config.patch,
        "total_steps": config.total_steps,
        "seed": config.seed,
        "lambda1": config.loss_weights.lambda1,
        "lambda2": config.loss_weights.lambda2,
        "lambda3": config.loss_weights.lambda3,
        "smooth_eps": config.loss_weights.eps,
    }


def config_from_dict(values: dict) -> TrainConfig:
    """Inverse of describe_config, with defaults for missing keys."""
    geom = FilterGeometry(
        r=int(values.get("r", 4)),
        k_h=int(values.get("kh", 3)),
        k_w=int(values.get("kw", 3)),
        k_t=int(values.get("kt", 3)),
        t_frames=int(values.get("frames", 3)),
    )
    channels = values.get("channels", (16, 32, 64))
    if isinstance(channels, (int, float)):
        channels = (int(channels),)
    pred = PredictorConfig(
        geometry=geom,
        levels=int(values.get("levels", 3)),
        channels=tuple(int(c) for c in channels),
        blocks_per_level=int(values.get("blocks_per_level", 2)),
        in_channels=int(values.get("in_channels", 3)),
        ablation=str(values.get("ablation", "none")),
    )
    lw = LossWeights(
        lambda1=float(values.get("lambda1", 1.0)),
        lambda2=float(values.get("lambda2", 0.1)),
        lambda3=float(values.get("lambda3", 1.0)),
        eps=float(values.get("smooth_eps", 1e-4)),
    )
    return TrainConfig(
        predictor=pred,
        lr0=float(values.get("lr0", 4e-4)),
        batch=int(values.get("batch", 4)),
        patch=int(values.get("patch", 64)),
        total_steps=int(values.get("total_steps", 2000)),
        seed=int(values.get("seed", 0)),
        threads=int(values.get("threads", 1)),
        loss_weights=lw,
    )
