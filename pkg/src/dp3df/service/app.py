"""HTTP front end. Every endpoint is a thin wrapper over the core package;
contract violations surface as 422 responses with the original message."""

from __future__ import annotations

import os

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from ..bench import bench_csv, bench_instance
from ..data_synth import DegradeParams, load_dataset, make_dataset, window
from ..errors import ContractViolation, ContainerFormatError, TrainingDiverged
from ..evaluate import (
    ablation_csv,
    enhance_clip,
    evaluate_baseline,
    evaluate_model,
    run_ablation,
)
from ..fileio import ensure_dir, read_config, write_ppm
from ..filters import FilterGeometry, apply_dp3df, combine_residual, identity_field
from ..gradcheck import run_gradcheck
from ..predictor import Predictor, PredictorConfig
from ..trainer import TrainConfig, config_from_dict, load_checkpoint, train
from ..losses import LossWeights
from . import models as m


def _train_config(req) -> TrainConfig:
    geom = FilterGeometry(r=req.r, k_h=req.kh, k_w=req.kw, k_t=req.kt,
                          t_frames=req.frames_t)
    pred = PredictorConfig(
        geometry=geom,
        levels=req.levels,
        channels=tuple(req.channels),
        blocks_per_level=req.blocks,
        ablation=getattr(req, "ablation", "none"),
    )
    return TrainConfig(
        predictor=pred,
        lr0=req.lr0,
        batch=req.batch,
        patch=req.patch,
        total_steps=req.steps,
        seed=req.seed,
        threads=req.threads,
        loss_weights=LossWeights(req.lambda1, req.lambda2, req.lambda3),
    )


def create_app() -> FastAPI:
    app = FastAPI(title="dp3df", version="0.1.0")

    @app.exception_handler(ContractViolation)
    async def _contract(request: Request, exc: ContractViolation):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.exception_handler(ContainerFormatError)
    async def _container(request: Request, exc: ContainerFormatError):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.exception_handler(FileNotFoundError)
    async def _missing(request: Request, exc: FileNotFoundError):
        return JSONResponse(status_code=404, content={"detail": str(exc)})

    @app.exception_handler(TrainingDiverged)
    async def _diverged(request: Request, exc: TrainingDiverged):
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/synth", response_model=m.SynthResponse)
    def synth(req: m.SynthRequest):
        params = DegradeParams(r=req.r, exposure=req.exposure, gamma=req.gamma,
                               read_noise=req.read_noise, shot_noise=req.shot_noise,
                               seed=req.seed)
        exposure_range = None
        if req.exposure_min is not None and req.exposure_max is not None:
            exposure_range = (req.exposure_min, req.exposure_max)
        gamma_range = None
        if req.gamma_min is not None and req.gamma_max is not None:
            gamma_range = (req.gamma_min, req.gamma_max)
        velocity = None
        if req.velocity_y is not None and req.velocity_x is not None:
            velocity = (req.velocity_y, req.velocity_x)
        make_dataset(req.sequences, req.frames, (req.height, req.width), params,
                     req.out_dir, seed=req.seed, n_shapes=req.shapes,
                     velocity=velocity, exposure_range=exposure_range,
                     gamma_range=gamma_range)
        return m.SynthResponse(
            out_dir=req.out_dir, sequences=req.sequences, frames=req.frames,
            lln_height=req.height, lln_width=req.width,
            hnn_height=req.height * req.r, hnn_width=req.width * req.r,
        )

    @app.post("/train", response_model=m.TrainResponse)
    def train_endpoint(req: m.TrainRequest):
        records = load_dataset(req.data_dir)
        result = train(_train_config(req), records, req.out_dir)
        return m.TrainResponse(
            checkpoint=result.checkpoint_path,
            config_path=result.config_path,
            loss_csv=result.loss_csv_path,
            steps=result.steps,
            first_losses=result.first_losses,
            final_losses=result.final_losses,
            elapsed_s=result.elapsed_s,
        )

    @app.post("/infer", response_model=m.InferResponse)
    def infer(req: m.InferRequest):
        seq_dir = os.path.join(req.data_dir, req.sequence)
        if not os.path.isdir(seq_dir):
            raise ContractViolation(f"infer: no sequence directory {seq_dir}")
        records = [r for r in load_dataset(req.data_dir)
                   if os.path.basename(r.directory) == req.sequence]
        rec = records[0]
        ensure_dir(req.out_dir)
        frames = range(rec.n_frames) if req.frame is None else [req.frame]

        if req.identity:
            geom = FilterGeometry(r=req.r, k_h=req.kh, k_w=req.kw, k_t=req.kt,
                                  t_frames=req.frames_t)
            h, w = rec.lln.shape[1:3]
            field = identity_field(geom, h, w)

            def run(clip):
                z = apply_dp3df(clip, field, geom, threads=req.threads)
                return z, np.zeros_like(z), combine_residual(z, np.zeros_like(z))
        else:
            if req.checkpoint is None:
                raise ContractViolation("infer: need a checkpoint unless identity is set")
            weights, _ = load_checkpoint(req.checkpoint)
            cfg = config_from_dict(read_config(_sibling_cfg(req.checkpoint)))
            pred = Predictor(cfg.predictor)
            geom = pred.geometry

            def run(clip):
                return enhance_clip(clip, weights, pred, req.threads)

        n = geom.center_frame
        written = []
        for t in frames:
            if not 0 <= t < rec.n_frames:
                raise ContractViolation(f"infer: frame {t} outside 0..{rec.n_frames - 1}")
            clip = window(rec.lln, t, n)
            z, res, y = run(clip)
            base = os.path.join(req.out_dir, f"frame_{t:04d}")
            write_ppm(base + "_z.ppm", z)
            write_ppm(base + "_res.ppm", 0.5 + 0.5 * res)  # signed, shown shifted
            write_ppm(base + "_y.ppm", y)
            written.append(base + "_y.ppm")
        return m.InferResponse(out_dir=req.out_dir, frames_written=written)

    @app.post("/eval", response_model=m.EvalResponse)
    def eval_endpoint(req: m.EvalRequest):
        records = load_dataset(req.data_dir)
        if req.baseline:
            report = evaluate_baseline(records)
        else:
            if req.checkpoint is None:
                raise ContractViolation("eval: need a checkpoint unless baseline is set")
            weights, _ = load_checkpoint(req.checkpoint)
            cfg = config_from_dict(read_config(_sibling_cfg(req.checkpoint)))
            report = evaluate_model(weights, cfg, records, threads=req.threads)
        csv_path = None
        if req.out_csv:
            ensure_dir(os.path.dirname(req.out_csv) or ".")
            with open(req.out_csv, "w", encoding="utf-8") as f:
                f.write(report.to_csv())
            csv_path = req.out_csv
        return m.EvalResponse(
            mean_psnr=report.mean_psnr,
            mean_ssim=report.mean_ssim,
            color_space=report.color_space,
            per_sequence={k: {"psnr": p, "ssim": s}
                          for k, (p, s) in report.sequence_means().items()},
            csv_path=csv_path,
            table=report.table(),
        )

    @app.post("/gradcheck", response_model=m.GradcheckResponse)
    def gradcheck_endpoint(req: m.GradcheckRequest):
        suites, ok = run_gradcheck(seed=req.seed, predictor_samples=req.samples)
        return m.GradcheckResponse(
            passed=ok,
            suites=[m.SuiteModel(name=s.name, checked=s.checked,
                                 max_rel_err=s.max_rel_err, threshold=s.threshold,
                                 passed=s.passed) for s in suites],
        )

    @app.post("/bench", response_model=m.BenchResponse)
    def bench_endpoint(req: m.BenchRequest):
        results = bench_instance(height=req.height, width=req.width,
                                 t_frames=req.frames_t, r=req.r, k_h=req.kh,
                                 k_w=req.kw, k_t=req.kt, threads=req.threads,
                                 repeats=req.repeats, seed=req.seed)
        csv_path = None
        if req.out_csv:
            ensure_dir(os.path.dirname(req.out_csv) or ".")
            with open(req.out_csv, "w", encoding="utf-8") as f:
                f.write(bench_csv(results))
            csv_path = req.out_csv
        rows = [m.BenchRow(
            variant=r.variant, dims=r.dims, threads=r.threads,
            max_abs_diff=r.max_abs_diff, gate_passed=r.gate_passed, timed=r.timed,
            wall_time_s=None if not r.timed else r.wall_time_s,
            throughput_px_s=None if not r.timed else r.throughput_px_s,
        ) for r in results]
        return m.BenchResponse(results=rows, csv_path=csv_path)

    @app.post("/ablate", response_model=m.AblateResponse)
    def ablate(req: m.AblateRequest):
        train_records = load_dataset(req.data_dir)
        test_records = load_dataset(req.test_dir)
        base = _train_config(req)
        rows = run_ablation(base, train_records, test_records, req.out_dir)
        csv_path = os.path.join(req.out_dir, "ablation.csv")
        with open(csv_path, "w", encoding="utf-8") as f:
            f.write(ablation_csv(rows))
        return m.AblateResponse(
            rows=[m.AblateRow(variant=v, psnr=p, ssim=s) for v, p, s in rows],
            csv_path=csv_path,
        )

    return app


def _sibling_cfg(checkpoint_path: str) -> str:
    cfg = os.path.splitext(checkpoint_path)[0] + ".cfg"
    if not os.path.exists(cfg):
        raise ContractViolation(f"no config file next to checkpoint: {cfg}")
    return cfg
