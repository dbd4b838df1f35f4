"""Per-pixel parametric 3D filters: normalization, application, gradients.

A filter field assigns to every low-res pixel (i, j) a bank of r*r kernels.
Each kernel has k_h*k_w*k_t smoothing taps (softmax-normalized, so they sum
to one) plus a single luminance gain (reciprocal of a sigmoid, so it is
always > 1). Kernel b = r1*r + r2 produces output pixel (i*r + r1, j*r + r2),
so one application maps a [T, H, W, C] clip to an [rH, rW, C] frame.

Layout conventions, fixed here and relied on everywhere else:
  raw field   [H, W, r*r*(k+1)]  first r*r*k entries = tap logits,
                                 last r*r entries = gain logits
  weights     [H, W, r*r, k]     tap index = ((m+s_h)*k_w + (n+s_w))*k_t + (o+s_t)
  gains       [H, W, r*r]        b = r1*r + r2, both zero-based

Spatial out-of-range samples replicate the nearest edge pixel; temporal
out-of-range clamps to the first/last frame of the clip.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

# Rows of the low-res plane processed per tile. Fixed (never derived from
# the thread count) so tiled/parallel results are bitwise identical.
TILE_ROWS = 16

# Gain logits are clipped here before exp; gradients are zeroed outside.
GAIN_LOGIT_LIMIT = 60.0


@dataclass(frozen=True)
class FilterGeometry:
    """Kernel extents and upsampling factor of a filter field."""

    r: int
    k_h: int
    k_w: int
    k_t: int
    t_frames: int

    def __post_init__(self):
        if self.r < 1:
            raise ContractViolation(f"geometry: r must be >= 1, got {self.r}")
        for name in ("k_h", "k_w", "k_t"):
            v = getattr(self, name)
            if v < 1 or v % 2 == 0:
                raise ContractViolation(f"geometry: {name} must be odd and >= 1, got {v}")
        if self.t_frames < 1 or self.t_frames % 2 == 0:
            raise ContractViolation(
                f"geometry: t_frames must be odd and >= 1, got {self.t_frames}"
            )
        if self.k_t > self.t_frames:
            raise ContractViolation(
                f"geometry: k_t ({self.k_t}) exceeds t_frames ({self.t_frames})"
            )

    @property
    def s_h(self):
        return (self.k_h - 1) // 2

    @property
    def s_w(self):
        return (self.k_w - 1) // 2

    @property
    def s_t(self):
        return (self.k_t - 1) // 2

    @property
    def n_taps(self):
        return self.k_h * self.k_w * self.k_t

    @property
    def kernels(self):
        return self.r * self.r

    @property
    def raw_channels(self):
        return self.kernels * (self.n_taps + 1)

    @property
    def center_frame(self):
        return (self.t_frames - 1) // 2

    def tap_offsets(self):
        """(dm, dn, do) triples in tap-index order."""
        return [
            (m - self.s_h, n - self.s_w, o - self.s_t)
            for m in range(self.k_h)
            for n in range(self.k_w)
            for o in range(self.k_t)
        ]


@dataclass
class FilterField:
    """Normalized filter parameters for one frame, plus the raw logits."""

    raw: np.ndarray        # [H, W, r*r*(k+1)]
    weights: np.ndarray    # [H, W, r*r, k]
    gains: np.ndarray      # [H, W, r*r]
    unit_gain: bool = False

    @property
    def height(self):
        return self.weights.shape[0]

    @property
    def width(self):
        return self.weights.shape[1]


def normalize_filters(raw: np.ndarray, geom: FilterGeometry, unit_gain: bool = False) -> FilterField:
    """Split raw logits into softmax tap weights and reciprocal-sigmoid gains.

    With unit_gain the sigmoid path is bypassed and every gain is exactly 1
    (used by the special-case reductions; a sigmoid reciprocal can only
    approach 1 from above).
    """
    if raw.ndim != 3:
        raise ContractViolation(f"normalize_filters: raw must be [H,W,F], got {raw.ndim} axes")
    if raw.shape[2] != geom.raw_channels:
        raise ContractViolation(
            f"normalize_filters: raw channel axis ({raw.shape[2]}) != "
            f"r*r*(k_h*k_w*k_t+1) = {geom.raw_channels}"
        )
    h, w = raw.shape[:2]
    b = geom.kernels
    k = geom.n_taps
    logits = raw[:, :, : b * k].reshape(h, w, b, k)
    weights = logits - logits.max(axis=-1, keepdims=True)
    np.exp(weights, out=weights)
    weights /= weights.sum(axis=-1, keepdims=True)
    if unit_gain:
        gains = np.ones((h, w, b), dtype=raw.dtype)
    else:
        gains = np.clip(raw[:, :, b * k:], -GAIN_LOGIT_LIMIT, GAIN_LOGIT_LIMIT)
        np.negative(gains, out=gains)
        np.exp(gains, out=gains)
        gains += 1.0
    return FilterField(raw=raw, weights=weights, gains=gains, unit_gain=unit_gain)


def normalize_filters_bwd(field: FilterField, g_weights: np.ndarray, g_gains: np.ndarray,
                          geom: FilterGeometry, out: np.ndarray | None = None) -> np.ndarray:
    """Chain gradients on (weights, gains) back to the raw logit tensor.

    g_weights is consumed (overwritten) as scratch. An `out` buffer of the
    raw tensor's shape may be supplied to avoid an allocation.
    """
    h, w = field.weights.shape[:2]
    b, k = geom.kernels, geom.n_taps
    if out is None:
        out = np.empty((h, w, geom.raw_channels), dtype=g_weights.dtype)
    dot = (g_weights * field.weights).sum(axis=-1, keepdims=True)
    g_weights -= dot
    g_weights *= field.weights
    out[:, :, : b * k] = g_weights.reshape(h, w, b * k)
    if field.unit_gain:
        out[:, :, b * k:] = 0.0
    else:
        raw_l = field.raw[:, :, b * k:]
        inside = np.abs(raw_l) < GAIN_LOGIT_LIMIT
        # d(1 + exp(-x))/dx = -(gains - 1)
        out[:, :, b * k:] = np.where(inside, g_gains * (1.0 - field.gains), 0.0)
    return out


# ---------------------------------------------------------------------------
# application
# ---------------------------------------------------------------------------

def _check_apply_args(clip, field, geom):
    if clip.ndim != 4:
        raise ContractViolation(f"apply: clip must be [T,H,W,C], got {clip.ndim} axes")
    t, h, w, _ = clip.shape
    if t != geom.t_frames:
        raise ContractViolation(
            f"apply: clip T axis ({t}) does not match geometry t_frames ({geom.t_frames})"
        )
    if (field.height, field.width) != (h, w):
        raise ContractViolation(
            f"apply: filter field is {field.height}x{field.width} "
            f"but clip frames are {h}x{w}"
        )
    if field.weights.shape[2:] != (geom.kernels, geom.n_taps):
        raise ContractViolation(
            f"apply: field kernel axes {field.weights.shape[2:]} do not match "
            f"geometry ({geom.kernels}, {geom.n_taps})"
        )


def _pad_clip(clip, geom):
    return np.pad(
        clip,
        ((0, 0), (geom.s_h, geom.s_h), (geom.s_w, geom.s_w), (0, 0)),
        mode="edge",
    )


def _frame_index(geom, do):
    return min(max(geom.center_frame + do, 0), geom.t_frames - 1)


def _scatter_subpixels(acc, r):
    """acc [rows, W, r*r, C] -> [rows*r, W*r, C] with b = r1*r + r2."""
    rows, w, _, c = acc.shape
    return acc.reshape(rows, w, r, r, c).transpose(0, 2, 1, 3, 4).reshape(rows * r, w * r, c)


def _gather_subpixels(z, r):
    """Inverse of _scatter_subpixels."""
    hr, wr, c = z.shape
    rows, w = hr // r, wr // r
    return z.reshape(rows, r, w, r, c).transpose(0, 2, 1, 3, 4).reshape(rows, w, r * r, c)


def _gather_patches(padded, geom, row_lo, row_hi, w, dtype):
    """[rows, W, k, C] tensor of the 3D neighborhood of every pixel in the band."""
    rows = row_hi - row_lo
    k = geom.n_taps
    c = padded.shape[3]
    patches = np.empty((rows, w, k, c), dtype=dtype)
    for idx, (dm, dn, do) in enumerate(geom.tap_offsets()):
        f = _frame_index(geom, do)
        patches[:, :, idx, :] = padded[
            f, geom.s_h + dm + row_lo: geom.s_h + dm + row_hi, geom.s_w + dn: geom.s_w + dn + w, :
        ]
    return patches


def _apply_naive(clip, field, geom):
    """Direct transcription: one full-plane multiply-add per tap, f64 accumulator."""
    t, h, w, c = clip.shape
    padded = _pad_clip(clip, geom)
    acc = np.zeros((h, w, geom.kernels, c), dtype=np.float64)
    for idx, (dm, dn, do) in enumerate(geom.tap_offsets()):
        f = _frame_index(geom, do)
        view = padded[f, geom.s_h + dm: geom.s_h + dm + h, geom.s_w + dn: geom.s_w + dn + w, :]
        acc += field.weights[:, :, :, idx, None].astype(np.float64) * view[:, :, None, :].astype(np.float64)
    acc *= field.gains[:, :, :, None]
    return _scatter_subpixels(acc, geom.r).astype(clip.dtype)


def _apply_tile(padded, field, geom, row_lo, row_hi, w, out):
    # accumulate in float64 regardless of storage dtype; cast on store
    rows = row_hi - row_lo
    p = rows * w
    patches = _gather_patches(padded, geom, row_lo, row_hi, w, np.float64)
    wts = field.weights[row_lo:row_hi].astype(np.float64).reshape(p, geom.kernels, geom.n_taps)
    acc = np.matmul(wts, patches.reshape(p, geom.n_taps, -1))
    acc = acc.reshape(rows, w, geom.kernels, -1)
    acc *= field.gains[row_lo:row_hi, :, :, None]
    r = geom.r
    out[row_lo * r: row_hi * r] = _scatter_subpixels(acc, r)


def _apply_tiled(clip, field, geom, threads=1):
    t, h, w, c = clip.shape
    padded = _pad_clip(clip, geom)
    out = np.empty((h * geom.r, w * geom.r, c), dtype=clip.dtype)
    bands = [(lo, min(lo + TILE_ROWS, h)) for lo in range(0, h, TILE_ROWS)]
    if threads <= 1:
        for lo, hi in bands:
            _apply_tile(padded, field, geom, lo, hi, w, out)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(_apply_tile, padded, field, geom, lo, hi, w, out)
                for lo, hi in bands
            ]
            for fut in futures:
                fut.result()
    return out


def apply_dp3df(clip, field, geom, variant="tiled", threads=1):
    """Filter a clip into the upsampled intermediate frame Z.

    For pixel (i, j) and kernel b = r1*r + r2:
        Z[i*r + r1, j*r + r2] = (sum_taps W_b * patch) * L_b
    applied per channel with shared kernels. `variant` selects the
    implementation (all agree to <= 1e-6): "naive" is the per-tap
    reference, "tiled" blocks rows for cache locality, "parallel" runs
    tiles on a thread pool.
    """
    _check_apply_args(clip, field, geom)
    if variant == "naive":
        return _apply_naive(clip, field, geom)
    if variant == "tiled":
        return _apply_tiled(clip, field, geom, threads=1)
    if variant == "parallel":
        return _apply_tiled(clip, field, geom, threads=max(2, threads))
    raise ContractViolation(f"apply: unknown variant {variant!r}")


def apply_field_bwd(clip, field, geom, upstream):
    """Gradients of Z w.r.t. the clip and the normalized (post-activation) field.

    Returns (grad_clip, grad_weights, grad_gains). grad_gains is zero when
    the field was built with unit_gain.
    """
    _check_apply_args(clip, field, geom)
    t, h, w, c = clip.shape
    r = geom.r
    if upstream.shape != (h * r, w * r, c):
        raise ContractViolation(
            f"apply backward: upstream shape {upstream.shape} != {(h * r, w * r, c)}"
        )
    dtype = np.result_type(clip.dtype, upstream.dtype)
    padded = _pad_clip(clip, geom)
    g_weights = np.empty_like(field.weights, dtype=dtype)
    g_gains = np.empty_like(field.gains, dtype=dtype)
    g_padded = np.zeros(padded.shape, dtype=dtype)
    k = geom.n_taps
    for lo in range(0, h, TILE_ROWS):
        hi = min(lo + TILE_ROWS, h)
        rows = hi - lo
        p = rows * w
        patches = _gather_patches(padded, geom, lo, hi, w, dtype)
        wts = field.weights[lo:hi].astype(dtype, copy=False).reshape(p, geom.kernels, k)
        zw = np.matmul(wts, patches.reshape(p, k, c)).reshape(rows, w, geom.kernels, c)
        gacc = _gather_subpixels(upstream[lo * r: hi * r].astype(dtype, copy=False), r)
        g_gains[lo:hi] = (gacc * zw).sum(axis=-1)
        gzw = gacc * field.gains[lo:hi, :, :, None]
        gzw_m = gzw.reshape(p, geom.kernels, c)
        g_weights[lo:hi] = np.matmul(
            gzw_m, patches.reshape(p, k, c).transpose(0, 2, 1)
        ).reshape(rows, w, geom.kernels, k)
        g_patches = np.matmul(wts.transpose(0, 2, 1), gzw_m).reshape(rows, w, k, c)
        for idx, (dm, dn, do) in enumerate(geom.tap_offsets()):
            f = _frame_index(geom, do)
            g_padded[
                f, geom.s_h + dm + lo: geom.s_h + dm + hi, geom.s_w + dn: geom.s_w + dn + w, :
            ] += g_patches[:, :, idx, :]
    grad_clip = _fold_clip_pad(g_padded, geom, h, w)
    if field.unit_gain:
        g_gains[...] = 0.0
    return grad_clip, g_weights, g_gains


def _fold_clip_pad(g_padded, geom, h, w):
    sh, sw = geom.s_h, geom.s_w
    g = g_padded
    if sh:
        g[:, sh, :, :] += g[:, :sh, :, :].sum(axis=1)
        g[:, sh + h - 1, :, :] += g[:, sh + h:, :, :].sum(axis=1)
    g = g[:, sh:sh + h]
    if sw:
        g[:, :, sw, :] += g[:, :, :sw, :].sum(axis=2)
        g[:, :, sw + w - 1, :] += g[:, :, sw + w:, :].sum(axis=2)
    return np.ascontiguousarray(g[:, :, sw:sw + w])


def apply_dp3df_backward(clip, field, geom, upstream):
    """Gradients of Z w.r.t. the clip and the raw (pre-activation) filter tensor.

    Chains apply_field_bwd through the softmax / reciprocal-sigmoid
    normalization. Returns (grad_clip, grad_raw).
    """
    grad_clip, g_weights, g_gains = apply_field_bwd(clip, field, geom, upstream)
    grad_raw = normalize_filters_bwd(field, g_weights, g_gains, geom)
    return grad_clip, grad_raw


# ---------------------------------------------------------------------------
# residual fusion
# ---------------------------------------------------------------------------

def combine_residual(z: np.ndarray, residual: np.ndarray) -> np.ndarray:
    """Y = clamp(Z + R, 0, 1). Residuals are signed; outputs live in [0, 1]."""
    if z.shape != residual.shape:
        raise ContractViolation(
            f"combine_residual: Z shape {z.shape} != residual shape {residual.shape}"
        )
    return np.clip(z + residual, 0.0, 1.0)


def combine_residual_bwd(gout, z, residual):
    """Gradient flows only where the sum was strictly inside (0, 1)."""
    s = z + residual
    mask = (s > 0.0) & (s < 1.0)
    g = np.where(mask, gout, 0.0)
    return g, g.copy()


# ---------------------------------------------------------------------------
# special-case reductions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpecialCase:
    """A reduced geometry plus the constraint it imposes on the gains."""

    geometry: FilterGeometry
    unit_gain: bool


def reduce_to_special_case(geom: FilterGeometry, mode: str) -> SpecialCase:
    """Collapse the filter to one of the classic single-task dynamic filters.

    sr      -> 2D per-subpixel kernels, gain pinned to 1
    denoise -> one 3D kernel per pixel, gain pinned to 1
    illum   -> one plain per-pixel multiplier
    """
    if mode == "sr":
        g = FilterGeometry(geom.r, geom.k_h, geom.k_w, 1, geom.t_frames)
        return SpecialCase(g, unit_gain=True)
    if mode == "denoise":
        g = FilterGeometry(1, geom.k_h, geom.k_w, geom.k_t, geom.t_frames)
        return SpecialCase(g, unit_gain=True)
    if mode == "illum":
        g = FilterGeometry(1, 1, 1, 1, geom.t_frames)
        return SpecialCase(g, unit_gain=False)
    raise ContractViolation(f"reduce_to_special_case: unknown mode {mode!r}")


def identity_field(geom: FilterGeometry, h: int, w: int, dtype=np.float32) -> FilterField:
    """One-hot center tap, unit gain: applying it nearest-neighbor upsamples
    the center frame. Built post-activation (softmax cannot emit exact one-hots)."""
    k = geom.n_taps
    b = geom.kernels
    center = (geom.s_h * geom.k_w + geom.s_w) * geom.k_t + geom.s_t
    weights = np.zeros((h, w, b, k), dtype=dtype)
    weights[:, :, :, center] = 1.0
    gains = np.ones((h, w, b), dtype=dtype)
    raw = np.zeros((h, w, geom.raw_channels), dtype=dtype)
    return FilterField(raw=raw, weights=weights, gains=gains, unit_gain=True)
