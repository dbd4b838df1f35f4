"""Quantitative evaluation: PSNR and SSIM over RGB frames.

SSIM follows the classic single-scale recipe: 11x11 Gaussian window with
sigma 1.5, K1 = 0.01, K2 = 0.03, computed per channel on valid windows
and averaged. PSNR is capped at 100 dB so identical frames compare equal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation

PSNR_CAP = 100.0


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE), capped at 100 dB."""
    if a.shape != b.shape:
        raise ContractViolation(f"psnr: shapes differ, {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse))


def _gaussian_window(size=11, sigma=1.5):
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    w = np.exp(-(x**2) / (2.0 * sigma**2))
    return w / w.sum()


def _filter_valid(plane: np.ndarray, win: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation of a 2D plane with win x win."""
    size = win.size
    h, w = plane.shape
    rows = np.zeros((h, w - size + 1), dtype=np.float64)
    for i, coef in enumerate(win):
        rows += coef * plane[:, i:i + w - size + 1]
    out = np.zeros((h - size + 1, rows.shape[1]), dtype=np.float64)
    for i, coef in enumerate(win):
        out += coef * rows[i:i + h - size + 1, :]
    return out


def ssim(a: np.ndarray, b: np.ndarray, k1: float = 0.01, k2: float = 0.03,
         win_size: int = 11, sigma: float = 1.5, peak: float = 1.0) -> float:
    """Mean structural similarity; per-channel maps averaged over channels."""
    if a.shape != b.shape:
        raise ContractViolation(f"ssim: shapes differ, {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if min(a.shape[0], a.shape[1]) < win_size:
        raise ContractViolation(
            f"ssim: frame {a.shape[:2]} smaller than the {win_size}x{win_size} window"
        )
    win = _gaussian_window(win_size, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    vals = []
    for c in range(a.shape[2]):
        x = a[:, :, c].astype(np.float64)
        y = b[:, :, c].astype(np.float64)
        mx = _filter_valid(x, win)
        my = _filter_valid(y, win)
        mxx = _filter_valid(x * x, win)
        myy = _filter_valid(y * y, win)
        mxy = _filter_valid(x * y, win)
        vx = mxx - mx * mx
        vy = myy - my * my
        cxy = mxy - mx * my
        num = (2 * mx * my + c1) * (2 * cxy + c2)
        den = (mx * mx + my * my + c1) * (vx + vy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


@dataclass
class EvalReport:
    """Per-frame scores with sequence and dataset level means."""

    color_space: str = "rgb"
    frames: list = field(default_factory=list)  # (sequence, frame, psnr, ssim)

    def add(self, sequence: str, frame: int, psnr_db: float, ssim_val: float):
        self.frames.append((sequence, frame, psnr_db, ssim_val))

    def sequence_means(self):
        by_seq = {}
        for seq, _, p, s in self.frames:
            by_seq.setdefault(seq, []).append((p, s))
        return {
            seq: (float(np.mean([p for p, _ in vals])), float(np.mean([s for _, s in vals])))
            for seq, vals in by_seq.items()
        }

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([p for _, _, p, _ in self.frames])) if self.frames else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([s for _, _, _, s in self.frames])) if self.frames else float("nan")

    def to_csv(self) -> str:
        lines = [f"# color_space={self.color_space}\n", "sequence,frame,psnr,ssim\n"]
        for seq, fr, p, s in self.frames:
            lines.append(f"{seq},{fr},{p:.6f},{s:.6f}\n")
        for seq, (p, s) in sorted(self.sequence_means().items()):
            lines.append(f"{seq},mean,{p:.6f},{s:.6f}\n")
        lines.append(f"all,mean,{self.mean_psnr:.6f},{self.mean_ssim:.6f}\n")
        return "".join(lines)

    def table(self) -> str:
        rows = [f"{'sequence':<12} {'psnr':>8} {'ssim':>7}"]
        for seq, (p, s) in sorted(self.sequence_means().items()):
            rows.append(f"{seq:<12} {p:8.2f} {s:7.4f}")
        rows.append(f"{'mean':<12} {self.mean_psnr:8.2f} {self.mean_ssim:7.4f}")
        return "\n".join(rows)
