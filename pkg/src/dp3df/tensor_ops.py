"""Dense array primitives with hand-written backward passes.

Arrays are plain contiguous numpy ndarrays. Activations and weights are
float32 by default; every op is dtype-generic so the whole stack can run
in float64 for gradient verification. Reductions accumulate in the input
dtype except where noted; tap/tile orderings are fixed so results are
bitwise reproducible across runs and thread counts.

Network tensors use NCHW layout throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation


@dataclass
class GradPair:
    """A value bundled with a gradient of identical shape."""

    value: np.ndarray
    grad: np.ndarray

    def __post_init__(self):
        if self.value.shape != self.grad.shape:
            raise ContractViolation(
                f"GradPair: grad shape {self.grad.shape} != value shape {self.value.shape}"
            )


def assert_finite(x: np.ndarray, what: str = "tensor") -> None:
    if not np.all(np.isfinite(x)):
        raise ContractViolation(f"{what} contains NaN or Inf")


# ---------------------------------------------------------------------------
# padding helpers
# ---------------------------------------------------------------------------

def pad2d(x: np.ndarray, ph: int, pw: int, mode: str) -> np.ndarray:
    """Pad the trailing two axes of an NCHW array."""
    if ph == 0 and pw == 0:
        return x
    spec = ((0, 0),) * (x.ndim - 2) + ((ph, ph), (pw, pw))
    if mode == "zero":
        return np.pad(x, spec)
    if mode == "replicate":
        return np.pad(x, spec, mode="edge")
    raise ContractViolation(f"unknown padding mode {mode!r}")


def fold_pad2d(gxp: np.ndarray, ph: int, pw: int, mode: str) -> np.ndarray:
    """Backward of pad2d: collapse gradient in the margins onto the interior."""
    if ph == 0 and pw == 0:
        return gxp
    h = gxp.shape[-2] - 2 * ph
    w = gxp.shape[-1] - 2 * pw
    if mode == "zero":
        return np.ascontiguousarray(gxp[..., ph:ph + h, pw:pw + w])
    g = gxp.copy()
    if ph:
        g[..., ph, :] += g[..., :ph, :].sum(axis=-2)
        g[..., ph + h - 1, :] += g[..., ph + h:, :].sum(axis=-2)
    g = g[..., ph:ph + h, :]
    if pw:
        g[..., pw] += g[..., :pw].sum(axis=-1)
        g[..., pw + w - 1] += g[..., pw + w:].sum(axis=-1)
    return np.ascontiguousarray(g[..., pw:pw + w])


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------

def _conv_check(x, weights, bias, stride):
    if x.ndim != 4:
        raise ContractViolation(f"conv2d: input must be NCHW, got {x.ndim} axes")
    if weights.ndim != 4:
        raise ContractViolation(f"conv2d: weights must be OCKK, got {weights.ndim} axes")
    o, ci, kh, kw = weights.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ContractViolation(f"conv2d: kernel extents must be odd, got {kh}x{kw}")
    if ci != x.shape[1]:
        raise ContractViolation(
            f"conv2d: weights C axis ({ci}) does not match input C axis ({x.shape[1]})"
        )
    if bias.shape != (o,):
        raise ContractViolation(
            f"conv2d: bias O axis {bias.shape} does not match weights O axis ({o},)"
        )
    if stride not in (1, 2):
        raise ContractViolation(f"conv2d: stride must be 1 or 2, got {stride}")


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: str):
    """Lower input to a [C*kh*kw, N*Ho*Wo] matrix for a single GEMM."""
    n, c, h, w = x.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xp = pad2d(x, ph, pw, padding)
    ho = (h + 2 * ph - kh) // stride + 1
    wo = (w + 2 * pw - kw) // stride + 1
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride].transpose(1, 0, 2, 3)
    return cols.reshape(c * kh * kw, n * ho * wo), ho, wo


def _col2im(gcols: np.ndarray, x_shape, kh, kw, stride, padding, ho, wo) -> np.ndarray:
    n, c, h, w = x_shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    gxp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=gcols.dtype)
    g6 = gcols.reshape(c, kh, kw, n, ho, wo)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += g6[:, i, j].transpose(1, 0, 2, 3)
    return fold_pad2d(gxp, ph, pw, padding)


def conv2d_fwd(x, weights, bias, stride=1, padding="replicate"):
    """Cross-correlation with same-style padding p=(k-1)/2.

    Returns (out [N,O,Ho,Wo], cache). Ho = (H + 2p - kh)//stride + 1.
    """
    _conv_check(x, weights, bias, stride)
    o, ci, kh, kw = weights.shape
    cols, ho, wo = _im2col(x, kh, kw, stride, padding)
    out = weights.reshape(o, ci * kh * kw) @ cols
    out += bias[:, None]
    n = x.shape[0]
    out = np.ascontiguousarray(out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3))
    cache = (cols, x.shape, weights, stride, padding, ho, wo)
    return out, cache


def conv2d(x, weights, bias, stride=1, padding="replicate"):
    return conv2d_fwd(x, weights, bias, stride, padding)[0]


def conv2d_bwd(gout, cache, need_input_grad=True):
    """Returns (gx, gweights, gbias); gx is None when need_input_grad is False."""
    cols, x_shape, weights, stride, padding, ho, wo = cache
    o, ci, kh, kw = weights.shape
    g = np.ascontiguousarray(gout.transpose(1, 0, 2, 3)).reshape(o, -1)
    gw = (g @ cols.T).reshape(weights.shape)
    gb = g.sum(axis=1)
    gx = None
    if need_input_grad:
        gcols = weights.reshape(o, -1).T @ g
        gx = _col2im(gcols, x_shape, kh, kw, stride, padding, ho, wo)
    return gx, gw, gb


# ---------------------------------------------------------------------------
# pixel shuffle
# ---------------------------------------------------------------------------

def pixel_shuffle(x: np.ndarray, r: int) -> np.ndarray:
    """Rearrange [N, r*r*C, H, W] -> [N, C, rH, rW].

    Channel c*r*r + a*r + b lands on sub-pixel offset (a, b).
    """
    n, cr2, h, w = x.shape
    if cr2 % (r * r) != 0:
        raise ContractViolation(
            f"pixel_shuffle: channel axis ({cr2}) not divisible by r*r ({r * r})"
        )
    c = cr2 // (r * r)
    return np.ascontiguousarray(
        x.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * r, w * r)
    )


def pixel_unshuffle(x: np.ndarray, r: int) -> np.ndarray:
    """Exact inverse of pixel_shuffle."""
    n, c, hr, wr = x.shape
    if hr % r != 0 or wr % r != 0:
        raise ContractViolation(f"pixel_unshuffle: spatial axes ({hr}x{wr}) not divisible by r")
    h, w = hr // r, wr // r
    return np.ascontiguousarray(
        x.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h, w)
    )


def pixel_shuffle_bwd(gout: np.ndarray, r: int) -> np.ndarray:
    return pixel_unshuffle(gout, r)


# ---------------------------------------------------------------------------
# softmax
# ---------------------------------------------------------------------------

def softmax_axis(x: np.ndarray, axis: int) -> np.ndarray:
    """Max-shifted softmax along one axis; every slice sums to 1."""
    if not -x.ndim <= axis < x.ndim:
        raise ContractViolation(f"softmax_axis: axis {axis} out of range for {x.ndim} axes")
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_axis_bwd(gout: np.ndarray, softmax_out: np.ndarray, axis: int) -> np.ndarray:
    dot = (gout * softmax_out).sum(axis=axis, keepdims=True)
    return softmax_out * (gout - dot)


# ---------------------------------------------------------------------------
# instance norm
# ---------------------------------------------------------------------------

def instance_norm_fwd(x, gamma=None, beta=None, eps=1e-5):
    """Standardize each (n, c) plane to zero mean, unit variance.

    gamma/beta are per-channel affine parameters, applied when given.
    A constant plane maps to zeros (variance guarded by eps).
    """
    if x.ndim != 4:
        raise ContractViolation(f"instance_norm: input must be NCHW, got {x.ndim} axes")
    if x.shape[2] * x.shape[3] < 2:
        raise ContractViolation("instance_norm: needs at least 2 spatial elements")
    mu = x.mean(axis=(2, 3), keepdims=True)
    var = x.var(axis=(2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    out = xhat
    if gamma is not None:
        out = xhat * gamma[None, :, None, None]
    if beta is not None:
        out = out + beta[None, :, None, None]
    return out, (xhat, inv_std, gamma)


def instance_norm(x, gamma=None, beta=None, eps=1e-5):
    return instance_norm_fwd(x, gamma, beta, eps)[0]


def instance_norm_bwd(gout, cache):
    """Returns (gx, ggamma, gbeta); affine grads are None without affine params."""
    xhat, inv_std, gamma = cache
    m = xhat.shape[2] * xhat.shape[3]
    ggamma = gbeta = None
    gxhat = gout
    if gamma is not None:
        ggamma = (gout * xhat).sum(axis=(0, 2, 3))
        gbeta = gout.sum(axis=(0, 2, 3))
        gxhat = gout * gamma[None, :, None, None]
    s1 = gxhat.sum(axis=(2, 3), keepdims=True)
    s2 = (gxhat * xhat).sum(axis=(2, 3), keepdims=True)
    gx = inv_std * (gxhat - s1 / m - xhat * (s2 / m))
    return gx, ggamma, gbeta


# ---------------------------------------------------------------------------
# leaky relu
# ---------------------------------------------------------------------------

def leaky_relu(x: np.ndarray, slope: float = 0.2) -> np.ndarray:
    # for slope < 1 this picks x when x >= 0 and slope*x otherwise
    return np.maximum(x, x * x.dtype.type(slope))


def leaky_relu_bwd(gout: np.ndarray, x: np.ndarray, slope: float = 0.2) -> np.ndarray:
    return np.where(x >= 0, gout, gout * gout.dtype.type(slope))


# ---------------------------------------------------------------------------
# channels-last (NHWC) twins used by the network for speed: the GEMM runs
# tall (pixels x taps), outputs land contiguous in the layout the next op
# wants, and no transposes are needed. Semantics match the NCHW ops above.
# ---------------------------------------------------------------------------

def _pad_nhwc(x, ph, pw, mode):
    if ph == 0 and pw == 0:
        return x
    spec = ((0, 0), (ph, ph), (pw, pw), (0, 0))
    if mode == "zero":
        return np.pad(x, spec)
    return np.pad(x, spec, mode="edge")


def nhwc_conv2d_fwd(x, weights, bias, stride=1, padding="replicate"):
    """x [N,H,W,C], weights [O,C,kh,kw] -> out [N,Ho,Wo,O]."""
    n, h, w, c = x.shape
    o, ci, kh, kw = weights.shape
    if ci != c:
        raise ContractViolation(
            f"conv2d: weights C axis ({ci}) does not match input C axis ({c})"
        )
    if kh == 1 and kw == 1 and stride == 1:
        cols = x.reshape(n * h * w, c)
        wmat = weights.reshape(o, c)
        out = cols @ wmat.T
        out += bias
        cache = (cols, wmat, x.shape, 1, padding, h, w, True)
        return out.reshape(n, h, w, o), cache
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    xp = _pad_nhwc(x, ph, pw, padding)
    ho = (h + 2 * ph - kh) // stride + 1
    wo = (w + 2 * pw - kw) // stride + 1
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :]
    cols = cols.reshape(n * ho * wo, kh * kw * c)
    wmat = np.ascontiguousarray(weights.transpose(0, 2, 3, 1).reshape(o, kh * kw * c))
    out = cols @ wmat.T
    out += bias
    cache = (cols, wmat, x.shape, stride, padding, ho, wo, False)
    return out.reshape(n, ho, wo, o), cache


def nhwc_conv2d_bwd(gout, cache, weights_shape, need_input_grad=True):
    cols, wmat, x_shape, stride, padding, ho, wo, one_by_one = cache
    o, c, kh, kw = weights_shape
    g2 = gout.reshape(-1, o)
    gwmat = g2.T @ cols
    gb = g2.sum(axis=0)
    if one_by_one:
        gw = gwmat.reshape(weights_shape)
        gx = (g2 @ wmat).reshape(x_shape) if need_input_grad else None
        return gx, gw, gb
    gw = np.ascontiguousarray(gwmat.reshape(o, kh, kw, c).transpose(0, 3, 1, 2))
    gx = None
    if need_input_grad:
        n, h, w, _ = x_shape
        ph, pw = (kh - 1) // 2, (kw - 1) // 2
        gcols = (g2 @ wmat).reshape(n, ho, wo, kh, kw, c)
        gxp = np.zeros((n, h + 2 * ph, w + 2 * pw, c), dtype=gout.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += gcols[:, :, :, i, j, :]
        gx = _fold_pad_nhwc(gxp, ph, pw, padding, h, w)
    return gx, gw, gb


def _fold_pad_nhwc(gxp, ph, pw, mode, h, w):
    if ph == 0 and pw == 0:
        return gxp
    if mode == "zero":
        return np.ascontiguousarray(gxp[:, ph:ph + h, pw:pw + w, :])
    g = gxp
    if ph:
        g[:, ph, :, :] += g[:, :ph, :, :].sum(axis=1)
        g[:, ph + h - 1, :, :] += g[:, ph + h:, :, :].sum(axis=1)
    g = g[:, ph:ph + h]
    if pw:
        g[:, :, pw, :] += g[:, :, :pw, :].sum(axis=2)
        g[:, :, pw + w - 1, :] += g[:, :, pw + w:, :].sum(axis=2)
    return np.ascontiguousarray(g[:, :, pw:pw + w, :])


def nhwc_instance_norm_fwd(x, gamma, beta, eps=1e-5):
    """x [N,H,W,C]; per (n, c) standardization over H, W."""
    mu = x.mean(axis=(1, 2), keepdims=True)
    var = x.var(axis=(1, 2), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    out = xhat * gamma + beta
    return out, (xhat, inv_std, gamma)


def nhwc_instance_norm_bwd(gout, cache):
    xhat, inv_std, gamma = cache
    m = xhat.shape[1] * xhat.shape[2]
    ggamma = (gout * xhat).sum(axis=(0, 1, 2))
    gbeta = gout.sum(axis=(0, 1, 2))
    gxhat = gout * gamma
    s1 = gxhat.sum(axis=(1, 2), keepdims=True)
    s2 = (gxhat * xhat).sum(axis=(1, 2), keepdims=True)
    gx = inv_std * (gxhat - s1 / m - xhat * (s2 / m))
    return gx, ggamma, gbeta


def nhwc_pixel_shuffle(x, r):
    """[N,H,W,r*r*C] -> [N,rH,rW,C]; channel c*r*r + a*r + b -> offset (a, b)."""
    n, h, w, cr2 = x.shape
    c = cr2 // (r * r)
    return np.ascontiguousarray(
        x.reshape(n, h, w, c, r, r).transpose(0, 1, 4, 2, 5, 3).reshape(n, h * r, w * r, c)
    )


def nhwc_pixel_unshuffle(x, r):
    n, hr, wr, c = x.shape
    h, w = hr // r, wr // r
    return np.ascontiguousarray(
        x.reshape(n, h, r, w, r, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h, w, c * r * r)
    )
