"""Encoder-decoder backbone with a filter head and a residual head.

The T input frames are folded into the channel axis; all temporal mixing
happens in the predicted filters, not in the backbone. Each encoder level
is a stride-2 conv followed by residual blocks with instance norm; the
decoder upsamples with pixel shuffle and concatenates the encoder skip at
each resolution. Both heads read the shared full-res trunk: three convs
emit the raw filter logits, one conv plus a pixel shuffle emits the
full-res residual frame.

Activations run channels-last ([B, H, W, C]) so the conv GEMMs are tall
and copy-free; weights keep the conventional [O, C, kh, kw] shape. All
weights live in a flat name -> array dict so checkpoints are trivially a
named-tensor container. The backward pass is the hand-written reverse of
the fixed forward graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractViolation
from .filters import FilterGeometry
from .tensor_ops import (
    leaky_relu,
    leaky_relu_bwd,
    nhwc_conv2d_bwd,
    nhwc_conv2d_fwd,
    nhwc_instance_norm_bwd,
    nhwc_instance_norm_fwd,
    nhwc_pixel_shuffle,
    nhwc_pixel_unshuffle,
)

ABLATIONS = ("none", "no_temporal", "no_spatial", "no_residual")

LRELU_SLOPE = 0.2

# Head output convs start small so the filter logits begin near uniform
# (mean kernel, gain 2) and the residual starts near zero.
HEAD_INIT_SCALE = 0.1


@dataclass(frozen=True)
class PredictorConfig:
    geometry: FilterGeometry
    levels: int = 3
    channels: tuple = (16, 32, 64)
    blocks_per_level: int = 2
    in_channels: int = 3
    ablation: str = "none"
    norm_eps: float = 1e-5

    def __post_init__(self):
        if self.levels < 1:
            raise ContractViolation(f"config: levels must be >= 1, got {self.levels}")
        if len(self.channels) != self.levels:
            raise ContractViolation(
                f"config: channels list ({len(self.channels)}) must have one entry "
                f"per level ({self.levels})"
            )
        if self.ablation not in ABLATIONS:
            raise ContractViolation(f"config: unknown ablation {self.ablation!r}")

    @property
    def effective_geometry(self) -> FilterGeometry:
        """Geometry after the ablation edits."""
        g = self.geometry
        if self.ablation == "no_temporal":
            g = replace(g, k_t=1)
        elif self.ablation == "no_spatial":
            g = replace(g, k_h=1, k_w=1)
        return g

    @property
    def residual_enabled(self) -> bool:
        return self.ablation != "no_residual"

    @property
    def input_channels(self) -> int:
        return self.geometry.t_frames * self.in_channels


def kaiming_normal(rng: np.random.Generator, shape, fan_in: int, gain: float) -> np.ndarray:
    """Zero-mean normal with std = gain / sqrt(fan_in)."""
    std = gain / math.sqrt(fan_in)
    return (rng.standard_normal(shape) * std).astype(np.float32)


def lrelu_gain(slope: float = LRELU_SLOPE) -> float:
    return math.sqrt(2.0 / (1.0 + slope * slope))


def _conv_shapes(config: PredictorConfig):
    """(name, c_in, c_out, ksize) for every conv, in creation order."""
    g = config.effective_geometry
    ch = config.channels
    convs = [("stem", config.input_channels, ch[0], 3)]
    c_prev = ch[0]
    for lvl in range(config.levels):
        convs.append((f"enc{lvl}.down", c_prev, ch[lvl], 3))
        for blk in range(config.blocks_per_level):
            convs.append((f"enc{lvl}.block{blk}.conv1", ch[lvl], ch[lvl], 3))
            convs.append((f"enc{lvl}.block{blk}.conv2", ch[lvl], ch[lvl], 3))
        c_prev = ch[lvl]
    for blk in range(config.blocks_per_level):
        convs.append((f"bot.block{blk}.conv1", ch[-1], ch[-1], 3))
        convs.append((f"bot.block{blk}.conv2", ch[-1], ch[-1], 3))
    cur = ch[-1]
    for i in range(config.levels):
        out = ch[config.levels - 2 - i] if i < config.levels - 1 else ch[0]
        skip = ch[config.levels - 2 - i] if i < config.levels - 1 else ch[0]
        convs.append((f"dec{i}.up", cur, 4 * out, 3))
        cur = out + skip
    convs.append(("fuse", cur, ch[0], 1))
    convs.append(("fhead.conv1", ch[0], ch[0], 3))
    convs.append(("fhead.conv2", ch[0], ch[0], 3))
    convs.append(("fhead.out", ch[0], g.raw_channels, 1))
    if config.residual_enabled:
        convs.append(("rhead.out", ch[0], g.r * g.r * config.in_channels, 1))
    return convs


def _norm_names(config: PredictorConfig):
    names = []
    for lvl in range(config.levels):
        for blk in range(config.blocks_per_level):
            names.append((f"enc{lvl}.block{blk}.norm1", config.channels[lvl]))
            names.append((f"enc{lvl}.block{blk}.norm2", config.channels[lvl]))
    for blk in range(config.blocks_per_level):
        names.append((f"bot.block{blk}.norm1", config.channels[-1]))
        names.append((f"bot.block{blk}.norm2", config.channels[-1]))
    return names


def init_weights(config: PredictorConfig, seed: int) -> dict:
    """Kaiming-normal conv weights (gain matched to the leaky relu), zero
    biases, identity norm affines. Deterministic in the seed; the two head
    output convs are scaled down so the initial prediction is the uniform
    smoothing filter with gain 2 and a near-zero residual."""
    rng = np.random.default_rng(seed)
    gain = lrelu_gain()
    weights = {}
    for name, c_in, c_out, k in _conv_shapes(config):
        scale = HEAD_INIT_SCALE if name in ("fhead.out", "rhead.out") else 1.0
        weights[name + ".w"] = kaiming_normal(rng, (c_out, c_in, k, k), c_in * k * k, gain) * np.float32(scale)
        weights[name + ".b"] = np.zeros(c_out, dtype=np.float32)
    for name, c in _norm_names(config):
        weights[name + ".g"] = np.ones(c, dtype=np.float32)
        weights[name + ".b"] = np.zeros(c, dtype=np.float32)
    return weights


def clip_to_input(clip: np.ndarray) -> np.ndarray:
    """[T, H, W, C] -> [1, H, W, T*C] with channel t*C + c."""
    t, h, w, c = clip.shape
    return np.ascontiguousarray(clip.transpose(1, 2, 0, 3).reshape(1, h, w, t * c))


class Predictor:
    """Topology-aware forward/backward over a flat weight dict."""

    def __init__(self, config: PredictorConfig):
        self.config = config
        self.geometry = config.effective_geometry

    # -- single-sample API ---------------------------------------------------

    def forward(self, clip: np.ndarray, weights: dict):
        """clip [T,H,W,C] -> (raw_filters [H,W,F], residual [rH,rW,C] or None)."""
        raw, res, _ = self.forward_batch(clip_to_input(clip), weights, need_cache=False)
        return raw[0], (res[0] if res is not None else None)

    # -- batched internals ----------------------------------------------------

    def _conv(self, name, x, weights, cache, stride=1):
        out, c = nhwc_conv2d_fwd(x, weights[name + ".w"], weights[name + ".b"], stride=stride)
        if cache is not None:
            cache[name] = c
        return out

    def _block(self, prefix, x, weights, cache):
        cfg = self.config
        c1 = self._conv(prefix + ".conv1", x, weights, cache)
        n1, n1c = nhwc_instance_norm_fwd(c1, weights[prefix + ".norm1.g"],
                                         weights[prefix + ".norm1.b"], cfg.norm_eps)
        a1 = leaky_relu(n1, LRELU_SLOPE)
        c2 = self._conv(prefix + ".conv2", a1, weights, cache)
        n2, n2c = nhwc_instance_norm_fwd(c2, weights[prefix + ".norm2.g"],
                                         weights[prefix + ".norm2.b"], cfg.norm_eps)
        y = x + n2
        out = leaky_relu(y, LRELU_SLOPE)
        if cache is not None:
            cache[prefix + ".state"] = (n1, n1c, n2c, y)
        return out

    def forward_batch(self, x: np.ndarray, weights: dict, need_cache: bool = True):
        """x [B,H,W,T*C] -> (raw [B,H,W,F], residual [B,rH,rW,C] or None, cache)."""
        cfg = self.config
        g = self.geometry
        if x.ndim != 4 or x.shape[3] != cfg.input_channels:
            raise ContractViolation(
                f"forward: input must be [B,H,W,{cfg.input_channels}], got {x.shape}"
            )
        if x.shape[1] % (1 << cfg.levels) or x.shape[2] % (1 << cfg.levels):
            raise ContractViolation(
                f"forward: spatial axes {x.shape[1:3]} must divide 2^levels ({1 << cfg.levels})"
            )
        cache = {} if need_cache else None
        acts = {} if need_cache else None

        def remember(name, arr):
            if acts is not None:
                acts[name] = arr

        stem_pre = self._conv("stem", x, weights, cache)
        remember("stem_pre", stem_pre)
        h = leaky_relu(stem_pre, LRELU_SLOPE)
        skips = [h]
        for lvl in range(cfg.levels):
            down_pre = self._conv(f"enc{lvl}.down", h, weights, cache, stride=2)
            remember(f"enc{lvl}.down_pre", down_pre)
            h = leaky_relu(down_pre, LRELU_SLOPE)
            for blk in range(cfg.blocks_per_level):
                h = self._block(f"enc{lvl}.block{blk}", h, weights, cache)
            if lvl < cfg.levels - 1:
                skips.append(h)
        for blk in range(cfg.blocks_per_level):
            h = self._block(f"bot.block{blk}", h, weights, cache)
        for i in range(cfg.levels):
            up_pre = self._conv(f"dec{i}.up", h, weights, cache)
            shuffled = nhwc_pixel_shuffle(up_pre, 2)
            remember(f"dec{i}.shuffled", shuffled)
            up = leaky_relu(shuffled, LRELU_SLOPE)
            skip = skips[cfg.levels - 1 - i]
            remember(f"dec{i}.split", up.shape[3])
            h = np.concatenate([up, skip], axis=3)
        fuse_pre = self._conv("fuse", h, weights, cache)
        remember("fuse_pre", fuse_pre)
        trunk = leaky_relu(fuse_pre, LRELU_SLOPE)

        f1_pre = self._conv("fhead.conv1", trunk, weights, cache)
        remember("fhead.pre1", f1_pre)
        f1 = leaky_relu(f1_pre, LRELU_SLOPE)
        f2_pre = self._conv("fhead.conv2", f1, weights, cache)
        remember("fhead.pre2", f2_pre)
        f2 = leaky_relu(f2_pre, LRELU_SLOPE)
        raw = self._conv("fhead.out", f2, weights, cache)

        residual = None
        if cfg.residual_enabled:
            r_pre = self._conv("rhead.out", trunk, weights, cache)
            residual = nhwc_pixel_shuffle(r_pre, g.r)

        if need_cache:
            cache["__acts__"] = acts
        return raw, residual, cache

    def backward_batch(self, weights: dict, cache: dict, g_raw: np.ndarray,
                       g_residual, frozen=()):
        """Reverse of forward_batch. Returns a grads dict keyed like weights."""
        cfg = self.config
        g = self.geometry
        acts = cache["__acts__"]
        grads = {}

        def conv_bwd(name, gout, need_input=True):
            gx, gw, gb = nhwc_conv2d_bwd(gout, cache[name],
                                         weights[name + ".w"].shape,
                                         need_input_grad=need_input)
            grads[name + ".w"] = gw
            grads[name + ".b"] = gb
            return gx

        def block_bwd(prefix, gout):
            n1, n1c, n2c, y = cache[prefix + ".state"]
            gy = leaky_relu_bwd(gout, y, LRELU_SLOPE)
            gn2, gg2, gb2 = nhwc_instance_norm_bwd(gy, n2c)
            grads[prefix + ".norm2.g"] = gg2
            grads[prefix + ".norm2.b"] = gb2
            ga1 = conv_bwd(prefix + ".conv2", gn2)
            gn1 = leaky_relu_bwd(ga1, n1, LRELU_SLOPE)
            gc1, gg1, gb1 = nhwc_instance_norm_bwd(gn1, n1c)
            grads[prefix + ".norm1.g"] = gg1
            grads[prefix + ".norm1.b"] = gb1
            gx = conv_bwd(prefix + ".conv1", gc1)
            return gx + gy

        g_trunk = None
        if cfg.residual_enabled:
            if g_residual is None:
                raise ContractViolation("backward: residual gradient missing")
            gr_pre = nhwc_pixel_unshuffle(g_residual, g.r)
            g_trunk = conv_bwd("rhead.out", gr_pre)

        gf2 = conv_bwd("fhead.out", g_raw)
        gf2 = leaky_relu_bwd(gf2, acts["fhead.pre2"], LRELU_SLOPE)
        gf1 = conv_bwd("fhead.conv2", gf2)
        gf1 = leaky_relu_bwd(gf1, acts["fhead.pre1"], LRELU_SLOPE)
        ghd = conv_bwd("fhead.conv1", gf1)
        g_trunk = ghd if g_trunk is None else g_trunk + ghd

        g_trunk = leaky_relu_bwd(g_trunk, acts["fuse_pre"], LRELU_SLOPE)
        gh = conv_bwd("fuse", g_trunk)

        g_skips = [None] * cfg.levels  # keyed by skip index used at decode step i
        for i in reversed(range(cfg.levels)):
            up_ch = acts[f"dec{i}.split"]
            gup = gh[:, :, :, :up_ch]
            gskip = np.ascontiguousarray(gh[:, :, :, up_ch:])
            g_skips[cfg.levels - 1 - i] = gskip
            gup = leaky_relu_bwd(gup, acts[f"dec{i}.shuffled"], LRELU_SLOPE)
            gup_pre = nhwc_pixel_unshuffle(gup, 2)
            gh = conv_bwd(f"dec{i}.up", gup_pre)

        for blk in reversed(range(cfg.blocks_per_level)):
            gh = block_bwd(f"bot.block{blk}", gh)
        for lvl in reversed(range(cfg.levels)):
            if lvl < cfg.levels - 1:
                gh = gh + g_skips[lvl + 1]
            for blk in reversed(range(cfg.blocks_per_level)):
                gh = block_bwd(f"enc{lvl}.block{blk}", gh)
            gh = leaky_relu_bwd(gh, acts[f"enc{lvl}.down_pre"], LRELU_SLOPE)
            gh = conv_bwd(f"enc{lvl}.down", gh)
        gh = gh + g_skips[0]
        gh = leaky_relu_bwd(gh, acts["stem_pre"], LRELU_SLOPE)
        conv_bwd("stem", gh, need_input=False)

        for name in frozen:
            if name in grads:
                grads[name] = np.zeros_like(grads[name])
        return grads


def forward(clip: np.ndarray, weights: dict, config: PredictorConfig):
    """Single-clip forward pass; see Predictor.forward."""
    return Predictor(config).forward(clip, weights)
