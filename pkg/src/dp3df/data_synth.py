"""Synthetic paired sequences: clean bright high-res video plus a degraded
low-res, dark, noisy counterpart.

Each sequence is a crop window panning at constant velocity over a static
procedural world (smooth random fields) with a few independently moving
shapes on top. The degradation is box downsampling, exposure scaling with a
gamma curve, then heteroscedastic shot + read noise. Everything is seeded;
regenerating with the same seed is bit-identical.

On disk: out/seq_XXXX/{lln,hnn}/frame_NNNN.ppm plus meta.txt (key = value).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .fileio import ensure_dir, read_config, read_ppm, write_config, write_ppm


@dataclass(frozen=True)
class DegradeParams:
    """How a clean frame is turned into its low-light noisy counterpart."""

    r: int = 4
    exposure: float = 0.25    # multiplicative darkening, (0, 1]
    gamma: float = 1.8        # applied after exposure
    read_noise: float = 0.01  # additive sigma
    shot_noise: float = 0.04  # sigma scales with sqrt of signal
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.exposure <= 1.0:
            raise ContractViolation(f"degrade: exposure must be in (0,1], got {self.exposure}")
        if self.read_noise < 0 or self.shot_noise < 0:
            raise ContractViolation("degrade: noise sigmas must be >= 0")
        if self.r < 1:
            raise ContractViolation(f"degrade: r must be >= 1, got {self.r}")


def degrade(hnn_frame: np.ndarray, params: DegradeParams, rng: np.random.Generator) -> np.ndarray:
    """Box-downsample by r, darken with (exposure*x)^gamma, add noise, clamp."""
    h, w = hnn_frame.shape[:2]
    r = params.r
    if h % r or w % r:
        raise ContractViolation(f"degrade: frame {h}x{w} not divisible by r={r}")
    x = hnn_frame.reshape(h // r, r, w // r, r, -1).mean(axis=(1, 3), dtype=np.float64)
    y = (params.exposure * x) ** params.gamma
    if params.shot_noise > 0 or params.read_noise > 0:
        n1 = rng.standard_normal(y.shape)
        n2 = rng.standard_normal(y.shape)
        y = y + params.shot_noise * np.sqrt(y) * n1 + params.read_noise * n2
    return np.clip(y, 0.0, 1.0).astype(np.float32)


def window(frames: np.ndarray, t: int, n: int) -> np.ndarray:
    """Frames t-n .. t+n with indices clamped to the sequence bounds."""
    if not 0 <= t < len(frames):
        raise ContractViolation(f"window: t={t} outside sequence of {len(frames)} frames")
    idx = np.clip(np.arange(t - n, t + n + 1), 0, len(frames) - 1)
    return frames[idx]


@dataclass
class SequenceRecord:
    """One aligned pair of frame stacks plus its generation metadata."""

    directory: str
    lln: np.ndarray   # [F, h, w, 3] float32
    hnn: np.ndarray   # [F, r*h, r*w, 3] float32
    meta: dict

    @property
    def n_frames(self):
        return self.lln.shape[0]


# ---------------------------------------------------------------------------
# procedural world
# ---------------------------------------------------------------------------


def _bilinear_upsample(coarse: np.ndarray, h: int, w: int) -> np.ndarray:
    ch, cw = coarse.shape
    ys = np.linspace(0, ch - 1, h)
    xs = np.linspace(0, cw - 1, w)
    y0 = np.clip(ys.astype(int), 0, ch - 2)
    x0 = np.clip(xs.astype(int), 0, cw - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    tl = coarse[y0][:, x0]
    tr = coarse[y0][:, x0 + 1]
    bl = coarse[y0 + 1][:, x0]
    br = coarse[y0 + 1][:, x0 + 1]
    return (tl * (1 - fy) * (1 - fx) + tr * (1 - fy) * fx
            + bl * fy * (1 - fx) + br * fy * fx)


def _smooth_field(rng, h, w, cells):
    return _bilinear_upsample(rng.random((cells, cells)), h, w)


def _make_world(rng, h, w):
    """Smooth multi-scale color field with decent contrast, values ~[0.1, 0.95]."""
    world = np.empty((h, w, 3), dtype=np.float64)
    base = 0.6 * _smooth_field(rng, h, w, 6) + 0.4 * _smooth_field(rng, h, w, 12)
    detail = _smooth_field(rng, h, w, 24)
    for c in range(3):
        tint = 0.55 * base + 0.3 * _smooth_field(rng, h, w, 10) + 0.15 * detail
        world[:, :, c] = tint
    lo, hi = world.min(), world.max()
    world = 0.1 + 0.85 * (world - lo) / max(hi - lo, 1e-9)
    return world


@dataclass
class _Shape:
    kind: str
    cy: float
    cx: float
    size: int
    vy: float
    vx: float
    color: np.ndarray


def _draw_shapes(frame, shapes, step):
    h, w = frame.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    for s in shapes:
        cy = s.cy + step * s.vy
        cx = s.cx + step * s.vx
        if s.kind == "disk":
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= s.size**2
        else:
            mask = (np.abs(yy - cy) <= s.size) & (np.abs(xx - cx) <= s.size)
        frame[mask] = s.color
    return frame


def make_sequence(seq_rng: np.random.Generator, n_frames: int, size, params: DegradeParams,
                  velocity=None, n_shapes=3):
    """Generate one (hnn, lln) pair of frame stacks.

    size is the low-res (h, w); the clean stack is r times larger. velocity
    is the global pan in high-res pixels per frame (integer); when None it
    is drawn from [-3, 3].
    """
    h, w = size
    r = params.r
    hh, hw = h * r, w * r
    if velocity is None:
        velocity = (int(seq_rng.integers(-3, 4)), int(seq_rng.integers(-3, 4)))
    vy, vx = velocity
    margin_y = abs(vy) * (n_frames - 1)
    margin_x = abs(vx) * (n_frames - 1)
    world = _make_world(seq_rng, hh + margin_y, hw + margin_x)
    oy = margin_y if vy < 0 else 0
    ox = margin_x if vx < 0 else 0
    shapes = []
    for _ in range(n_shapes):
        shapes.append(_Shape(
            kind="disk" if seq_rng.random() < 0.5 else "rect",
            cy=float(seq_rng.uniform(0.2, 0.8) * hh),
            cx=float(seq_rng.uniform(0.2, 0.8) * hw),
            size=int(seq_rng.integers(max(2, hh // 24), max(3, hh // 10))),
            vy=float(seq_rng.uniform(-2, 2)),
            vx=float(seq_rng.uniform(-2, 2)),
            color=seq_rng.uniform(0.15, 0.95, size=3),
        ))
    hnn = np.empty((n_frames, hh, hw, 3), dtype=np.float32)
    lln = np.empty((n_frames, h, w, 3), dtype=np.float32)
    for f in range(n_frames):
        y0 = oy + f * vy
        x0 = ox + f * vx
        frame = world[y0:y0 + hh, x0:x0 + hw].copy()
        frame = _draw_shapes(frame, shapes, f)
        hnn[f] = frame.astype(np.float32)
        frame_rng = np.random.default_rng([params.seed, f])
        lln[f] = degrade(hnn[f], params, frame_rng)
    return hnn, lln, velocity


def make_dataset(n_sequences: int, frames_per_seq: int, size, params: DegradeParams,
                 out_dir: str, seed: int = 0, n_shapes: int = 3, velocity=None,
                 exposure_range=None, gamma_range=None, fps: int = 24):
    """Generate sequences and write them to out_dir; returns the records.

    Per-sequence exposure/gamma are drawn from the given ranges (or pinned
    by params when a range is None). Fully deterministic in seed.
    """
    if n_sequences < 1 or frames_per_seq < 1:
        raise ContractViolation("make_dataset: need at least one sequence and frame")
    ensure_dir(out_dir)
    streams = np.random.SeedSequence(seed).spawn(n_sequences)
    records = []
    for s in range(n_sequences):
        seq_rng = np.random.default_rng(streams[s])
        exposure = params.exposure if exposure_range is None else float(
            seq_rng.uniform(*exposure_range))
        gamma = params.gamma if gamma_range is None else float(seq_rng.uniform(*gamma_range))
        seq_params = DegradeParams(
            r=params.r, exposure=exposure, gamma=gamma,
            read_noise=params.read_noise, shot_noise=params.shot_noise,
            seed=seed * 100003 + s,
        )
        hnn, lln, vel = make_sequence(seq_rng, frames_per_seq, size, seq_params,
                                      velocity=velocity, n_shapes=n_shapes)
        seq_dir = os.path.join(out_dir, f"seq_{s:04d}")
        meta = {
            "r": seq_params.r,
            "fps": fps,
            "frames": frames_per_seq,
            "height": size[0],
            "width": size[1],
            "exposure": seq_params.exposure,
            "gamma": seq_params.gamma,
            "read_noise": seq_params.read_noise,
            "shot_noise": seq_params.shot_noise,
            "seed": seq_params.seed,
            "velocity_y": vel[0],
            "velocity_x": vel[1],
        }
        _write_sequence(seq_dir, lln, hnn, meta)
        records.append(SequenceRecord(directory=seq_dir, lln=lln, hnn=hnn, meta=meta))
    return records


def _write_sequence(seq_dir, lln, hnn, meta):
    ensure_dir(os.path.join(seq_dir, "lln"))
    ensure_dir(os.path.join(seq_dir, "hnn"))
    for f in range(lln.shape[0]):
        write_ppm(os.path.join(seq_dir, "lln", f"frame_{f:04d}.ppm"), lln[f])
        write_ppm(os.path.join(seq_dir, "hnn", f"frame_{f:04d}.ppm"), hnn[f])
    write_config(os.path.join(seq_dir, "meta.txt"), meta)


def load_dataset(root: str):
    """Read every seq_* directory under root back into SequenceRecords."""
    if not os.path.isdir(root):
        raise ContractViolation(f"load_dataset: {root} is not a directory")
    records = []
    for name in sorted(os.listdir(root)):
        seq_dir = os.path.join(root, name)
        if not (name.startswith("seq_") and os.path.isdir(seq_dir)):
            continue
        meta = read_config(os.path.join(seq_dir, "meta.txt"))
        lln = _read_frames(os.path.join(seq_dir, "lln"))
        hnn = _read_frames(os.path.join(seq_dir, "hnn"))
        if lln.shape[0] != hnn.shape[0]:
            raise ContractViolation(f"{seq_dir}: unequal lln/hnn frame counts")
        r = meta["r"]
        if hnn.shape[1] != r * lln.shape[1] or hnn.shape[2] != r * lln.shape[2]:
            raise ContractViolation(f"{seq_dir}: hnn dims are not r x lln dims")
        records.append(SequenceRecord(directory=seq_dir, lln=lln, hnn=hnn, meta=meta))
    if not records:
        raise ContractViolation(f"load_dataset: no seq_* directories under {root}")
    return records


def _read_frames(frame_dir):
    names = sorted(n for n in os.listdir(frame_dir) if n.endswith(".ppm"))
    frames = [read_ppm(os.path.join(frame_dir, n)) for n in names]
    return np.stack(frames)
