"""Training objective: two reconstruction terms plus gain-map smoothness.

All three terms return their gradient alongside the scalar so the training
step can hand-chain them; scalar reductions accumulate in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation


@dataclass(frozen=True)
class LossWeights:
    """Term weights and the smoothness guard constant."""

    lambda1: float = 1.0   # intermediate-frame reconstruction
    lambda2: float = 0.1   # gain-map smoothness
    lambda3: float = 1.0   # final-frame reconstruction
    eps: float = 1e-4      # guards the inverse-gradient weights

    def __post_init__(self):
        if self.eps <= 0:
            raise ContractViolation(f"LossWeights: eps must be > 0, got {self.eps}")
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ContractViolation("LossWeights: loss weights must be nonnegative")
        if self.lambda1 == self.lambda2 == self.lambda3 == 0:
            raise ContractViolation("LossWeights: at least one loss weight must be > 0")


@dataclass
class SmoothnessWeights:
    """Per-channel inverse-gradient weights of the log center frame.

    v gates horizontal differences, u vertical ones. Flat image regions get
    weight 1/eps; strong edges get small weight, letting the gain maps jump
    where the input itself jumps.
    """

    v: np.ndarray  # [H, W, C]
    u: np.ndarray  # [H, W, C]


def recon_loss(pred: np.ndarray, gt: np.ndarray):
    """Mean squared error after clamping both frames to [0, 1].

    Returns (loss, grad_wrt_pred). The clamp mirrors target normalization;
    gradient is zero where pred sits outside the open unit interval.
    """
    if pred.shape != gt.shape:
        raise ContractViolation(
            f"recon_loss: pred shape {pred.shape} != gt shape {gt.shape}"
        )
    diff = np.clip(pred, 0.0, 1.0)
    diff -= np.clip(gt, 0.0, 1.0)
    loss = float(np.mean(np.square(diff), dtype=np.float64))
    diff *= pred.dtype.type(2.0 / diff.size)
    diff[(pred <= 0.0) | (pred >= 1.0)] = 0.0
    return loss, diff


def _forward_diff_x(x):
    d = np.zeros_like(x)
    d[:, :-1] = x[:, 1:] - x[:, :-1]
    return d


def _forward_diff_y(x):
    d = np.zeros_like(x)
    d[:-1, :] = x[1:, :] - x[:-1, :]
    return d


def smoothness_weights(center_frame: np.ndarray, eps: float = 1e-4) -> SmoothnessWeights:
    """Inverse-gradient weights from the log of the center input frame.

    v = (|dx log X|^1.2 + eps)^-1, u likewise for dy. Forward differences
    with a replicate edge (so the last column/row difference is zero); the
    frame is floored at 1e-4 before the log.
    """
    if center_frame.ndim != 3:
        raise ContractViolation(
            f"smoothness_weights: frame must be [H,W,C], got {center_frame.ndim} axes"
        )
    logx = np.log(np.maximum(center_frame.astype(np.float64), 1e-4))
    v = 1.0 / (np.abs(_forward_diff_x(logx)) ** 1.2 + eps)
    u = 1.0 / (np.abs(_forward_diff_y(logx)) ** 1.2 + eps)
    dt = center_frame.dtype
    return SmoothnessWeights(v=v.astype(dt), u=u.astype(dt))


def smoothness_loss(l_maps: np.ndarray, weights: SmoothnessWeights):
    """Weighted squared forward differences of the gain maps, summed.

    l_maps is [H, W, r*r] (post-activation gains). The per-channel weights
    are averaged into a single channel before gating, since gain maps carry
    no channel axis. Returns (loss, grad_wrt_l_maps).
    """
    if l_maps.ndim != 3:
        raise ContractViolation(
            f"smoothness_loss: l_maps must be [H,W,B], got {l_maps.ndim} axes"
        )
    if weights.v.shape[:2] != l_maps.shape[:2]:
        raise ContractViolation(
            f"smoothness_loss: weights {weights.v.shape[:2]} do not match "
            f"l_maps {l_maps.shape[:2]}"
        )
    vbar = weights.v.mean(axis=2, dtype=np.float64)[:, :, None]
    ubar = weights.u.mean(axis=2, dtype=np.float64)[:, :, None]
    maps = l_maps.astype(np.float64)
    dx = np.zeros_like(maps)
    dy = np.zeros_like(maps)
    dx[:, :-1] = maps[:, 1:] - maps[:, :-1]
    dy[:-1, :] = maps[1:, :] - maps[:-1, :]
    loss = float((vbar * dx**2).sum() + (ubar * dy**2).sum())
    grad = np.zeros_like(maps)
    gdx = 2.0 * vbar * dx
    gdy = 2.0 * ubar * dy
    grad[:, 1:] += gdx[:, :-1]
    grad[:, :-1] -= gdx[:, :-1]
    grad[1:, :] += gdy[:-1, :]
    grad[:-1, :] -= gdy[:-1, :]
    return loss, grad.astype(l_maps.dtype)


@dataclass
class LossReport:
    """Scalar terms and the upstream gradients a training step needs."""

    total: float
    recon_z: float
    smooth: float
    recon_y: float
    g_z: np.ndarray       # gradient on the intermediate frame (recon path)
    g_y: np.ndarray       # gradient on the final frame (residual recon path)
    g_l_maps: np.ndarray  # gradient on the post-activation gain maps


def total_loss(z, y, gt, l_maps, weights: LossWeights,
               smooth: SmoothnessWeights) -> LossReport:
    """lambda1 * recon(Z) + lambda2 * smoothness(L) + lambda3 * recon(Y)."""
    l_r, g_z = recon_loss(z, gt)
    l_e, g_y = recon_loss(y, gt)
    l_s, g_l = smoothness_loss(l_maps, smooth)
    total = weights.lambda1 * l_r + weights.lambda2 * l_s + weights.lambda3 * l_e
    return LossReport(
        total=total,
        recon_z=l_r,
        smooth=l_s,
        recon_y=l_e,
        g_z=weights.lambda1 * g_z,
        g_y=weights.lambda3 * g_y,
        g_l_maps=weights.lambda2 * g_l,
    )
