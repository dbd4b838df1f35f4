"""Request/response schemas for the HTTP service.

Paths in requests refer to the server's filesystem; the service reads and
writes datasets, checkpoints and reports there, and responses echo the
paths of everything written.
"""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class SynthRequest(BaseModel):
    out_dir: str
    sequences: int = 8
    frames: int = 16
    height: int = 96
    width: int = 96
    r: int = 4
    seed: int = 0
    exposure: float = 0.25
    gamma: float = 1.8
    read_noise: float = 0.01
    shot_noise: float = 0.04
    shapes: int = 3
    exposure_min: Optional[float] = None
    exposure_max: Optional[float] = None
    gamma_min: Optional[float] = None
    gamma_max: Optional[float] = None
    velocity_y: Optional[int] = None
    velocity_x: Optional[int] = None


class SynthResponse(BaseModel):
    out_dir: str
    sequences: int
    frames: int
    lln_height: int
    lln_width: int
    hnn_height: int
    hnn_width: int


class TrainRequest(BaseModel):
    data_dir: str
    out_dir: str
    steps: int = 2000
    batch: int = 4
    patch: int = 64
    seed: int = 0
    lr0: float = 4e-4
    lambda1: float = 1.0
    lambda2: float = 0.1
    lambda3: float = 1.0
    r: int = 4
    kh: int = 3
    kw: int = 3
    kt: int = 3
    frames_t: int = 3
    levels: int = 3
    channels: list[int] = Field(default_factory=lambda: [16, 32, 64])
    blocks: int = 2
    ablation: str = "none"
    threads: int = 1


class TrainResponse(BaseModel):
    checkpoint: str
    config_path: str
    loss_csv: str
    steps: int
    first_losses: dict
    final_losses: dict
    elapsed_s: float


class InferRequest(BaseModel):
    data_dir: str
    out_dir: str
    sequence: str = "seq_0000"
    checkpoint: Optional[str] = None
    frame: Optional[int] = None
    threads: int = 1
    identity: bool = False
    # geometry for identity mode (no checkpoint involved)
    r: int = 4
    kh: int = 3
    kw: int = 3
    kt: int = 3
    frames_t: int = 3


class InferResponse(BaseModel):
    out_dir: str
    frames_written: list[str]


class EvalRequest(BaseModel):
    data_dir: str
    checkpoint: Optional[str] = None
    baseline: bool = False
    out_csv: Optional[str] = None
    threads: int = 1


class EvalResponse(BaseModel):
    mean_psnr: float
    mean_ssim: float
    color_space: str
    per_sequence: dict
    csv_path: Optional[str] = None
    table: str


class GradcheckRequest(BaseModel):
    seed: int = 0
    samples: int = 220


class SuiteModel(BaseModel):
    name: str
    checked: int
    max_rel_err: float
    threshold: float
    passed: bool


class GradcheckResponse(BaseModel):
    passed: bool
    suites: list[SuiteModel]


class BenchRequest(BaseModel):
    height: int = 256
    width: int = 256
    frames_t: int = 3
    r: int = 4
    kh: int = 3
    kw: int = 3
    kt: int = 3
    threads: int = 4
    repeats: int = 3
    seed: int = 0
    out_csv: Optional[str] = None


class BenchRow(BaseModel):
    variant: str
    dims: str
    threads: int
    max_abs_diff: float
    gate_passed: bool
    timed: bool
    wall_time_s: Optional[float] = None
    throughput_px_s: Optional[float] = None


class BenchResponse(BaseModel):
    results: list[BenchRow]
    csv_path: Optional[str] = None


class AblateRequest(BaseModel):
    data_dir: str
    test_dir: str
    out_dir: str
    steps: int = 400
    batch: int = 4
    patch: int = 32
    seed: int = 0
    lr0: float = 4e-4
    lambda1: float = 1.0
    lambda2: float = 0.1
    lambda3: float = 1.0
    r: int = 2
    kh: int = 3
    kw: int = 3
    kt: int = 3
    frames_t: int = 3
    levels: int = 2
    channels: list[int] = Field(default_factory=lambda: [12, 24])
    blocks: int = 1
    threads: int = 1


class AblateRow(BaseModel):
    variant: str
    psnr: float
    ssim: float


class AblateResponse(BaseModel):
    rows: list[AblateRow]
    csv_path: str
