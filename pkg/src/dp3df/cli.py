"""Command-line client for the service.

By default every command talks to an in-process instance of the app, so
no server needs to be running and all paths are local; pass --server to
point the same commands at a remote instance. `dp3df serve` starts the
HTTP server itself.

Exit codes: 0 success, 1 contract violation or request failure, 2 usage.
"""

from __future__ import annotations

import argparse
import asyncio
import sys

import httpx

from .fileio import read_config


def _add_common(p):
    p.add_argument("--config", help="key = value file; flags override its entries")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (or csv path for eval/bench)")
    p.add_argument("--r", type=int, help="upsampling factor")
    p.add_argument("--kh", type=int, help="kernel height")
    p.add_argument("--kw", type=int, help="kernel width")
    p.add_argument("--kt", type=int, help="kernel time extent")
    p.add_argument("--threads", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dp3df",
        description="joint video super-resolution, denoising and low-light enhancement",
    )
    parser.add_argument("--server", help="base URL of a running service; default in-process")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic paired dataset")
    _add_common(p)
    p.add_argument("--sequences", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--exposure", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--read-noise", type=float, dest="read_noise")
    p.add_argument("--shot-noise", type=float, dest="shot_noise")
    p.add_argument("--shapes", type=int)
    p.add_argument("--exposure-min", type=float, dest="exposure_min")
    p.add_argument("--exposure-max", type=float, dest="exposure_max")
    p.add_argument("--gamma-min", type=float, dest="gamma_min")
    p.add_argument("--gamma-max", type=float, dest="gamma_max")
    p.add_argument("--velocity-y", type=int, dest="velocity_y")
    p.add_argument("--velocity-x", type=int, dest="velocity_x")

    p = sub.add_parser("train", help="train a model on a dataset")
    _add_common(p)
    p.add_argument("--data", required=True, help="dataset root (from synth)")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--patch", type=int)
    p.add_argument("--lr0", type=float)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--lambda3", type=float)
    p.add_argument("--frames-t", type=int, dest="frames_t")
    p.add_argument("--levels", type=int)
    p.add_argument("--channels", help="comma list, e.g. 16,32,64")
    p.add_argument("--blocks", type=int)
    p.add_argument("--ablation", choices=["none", "no_temporal", "no_spatial", "no_residual"])

    p = sub.add_parser("infer", help="enhance frames of one sequence")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--sequence")
    p.add_argument("--checkpoint")
    p.add_argument("--frame", type=int)
    p.add_argument("--frames-t", type=int, dest="frames_t")
    p.add_argument("--identity", action="store_true", default=None,
                   help="apply the identity filter instead of a model")

    p = sub.add_parser("eval", help="PSNR/SSIM report over a dataset")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--baseline", action="store_true", default=None,
                   help="score the inverse-exposure + bicubic baseline")

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    _add_common(p)
    p.add_argument("--samples", type=int)

    p = sub.add_parser("bench", help="filter application benchmark")
    _add_common(p)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--frames-t", type=int, dest="frames_t")
    p.add_argument("--repeats", type=int)

    p = sub.add_parser("ablate", help="train and score every ablation variant")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--test-data", required=True, dest="test_data")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--patch", type=int)
    p.add_argument("--lr0", type=float)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--lambda3", type=float)
    p.add_argument("--frames-t", type=int, dest="frames_t")
    p.add_argument("--levels", type=int)
    p.add_argument("--channels")
    p.add_argument("--blocks", type=int)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8333)

    return parser


# field names each endpoint accepts, in CLI terms
_FIELDS = {
    "synth": ["seed", "r", "sequences", "frames", "height", "width", "exposure",
              "gamma", "read_noise", "shot_noise", "shapes", "exposure_min",
              "exposure_max", "gamma_min", "gamma_max", "velocity_y", "velocity_x"],
    "train": ["seed", "r", "kh", "kw", "kt", "threads", "steps", "batch", "patch",
              "lr0", "lambda1", "lambda2", "lambda3", "frames_t", "levels",
              "channels", "blocks", "ablation"],
    "infer": ["r", "kh", "kw", "kt", "threads", "sequence", "checkpoint", "frame",
              "frames_t", "identity"],
    "eval": ["threads", "checkpoint", "baseline"],
    "gradcheck": ["seed", "samples"],
    "bench": ["seed", "r", "kh", "kw", "kt", "threads", "height", "width",
              "frames_t", "repeats"],
    "ablate": ["seed", "r", "kh", "kw", "kt", "threads", "steps", "batch", "patch",
               "lr0", "lambda1", "lambda2", "lambda3", "frames_t", "levels",
               "channels", "blocks"],
}

_OUT_FIELD = {
    "synth": "out_dir", "train": "out_dir", "infer": "out_dir",
    "eval": "out_csv", "bench": "out_csv", "ablate": "out_dir",
}


def _payload(args) -> dict:
    payload = {}
    if getattr(args, "config", None):
        payload.update(read_config(args.config))
    for name in _FIELDS[args.command]:
        value = getattr(args, name, None)
        if value is not None:
            payload[name] = value
    if getattr(args, "data", None) is not None:
        payload["data_dir"] = args.data
    if getattr(args, "test_data", None) is not None:
        payload["test_dir"] = args.test_data
    if getattr(args, "out", None) is not None:
        payload[_OUT_FIELD[args.command]] = args.out
    channels = payload.get("channels")
    if isinstance(channels, str):
        payload["channels"] = [int(c) for c in channels.split(",")]
    elif isinstance(channels, (int, float)):
        payload["channels"] = [int(channels)]
    elif isinstance(channels, tuple):
        payload["channels"] = [int(c) for c in channels]
    return payload


class ServiceClient:
    """POSTs either to a remote server or to the app in this process."""

    def __init__(self, server: str | None):
        self.server = server

    def post(self, path: str, payload: dict):
        if self.server:
            with httpx.Client(base_url=self.server, timeout=None) as client:
                resp = client.post(path, json=payload)
                return resp.status_code, resp.json()
        return asyncio.run(self._post_local(path, payload))

    async def _post_local(self, path, payload):
        from . import service

        transport = httpx.ASGITransport(app=service.create_app())
        async with httpx.AsyncClient(transport=transport, base_url="http://dp3df",
                                     timeout=None) as client:
            resp = await client.post(path, json=payload)
            return resp.status_code, resp.json()


def _print_response(command: str, data: dict) -> None:
    if command == "synth":
        print(f"wrote {data['sequences']} sequences x {data['frames']} frames to "
              f"{data['out_dir']} (lln {data['lln_height']}x{data['lln_width']}, "
              f"hnn {data['hnn_height']}x{data['hnn_width']})")
    elif command == "train":
        f = data["final_losses"]
        print(f"trained {data['steps']} steps in {data['elapsed_s']:.1f}s; "
              f"final total loss {f['total']:.6f}")
        print(f"checkpoint: {data['checkpoint']}")
        print(f"loss csv:   {data['loss_csv']}")
    elif command == "infer":
        print(f"wrote {len(data['frames_written'])} frames to {data['out_dir']}")
    elif command == "eval":
        print(data["table"])
        if data.get("csv_path"):
            print(f"csv: {data['csv_path']}")
    elif command == "gradcheck":
        for s in data["suites"]:
            mark = "pass" if s["passed"] else "FAIL"
            print(f"{mark}  {s['name']:<16} checked={s['checked']:<4} "
                  f"max_rel_err={s['max_rel_err']:.3e}")
        print("all passed" if data["passed"] else "FAILED")
    elif command == "bench":
        for r in data["results"]:
            if r["timed"]:
                print(f"{r['variant']:<9} {r['dims']:<24} threads={r['threads']} "
                      f"max|d|={r['max_abs_diff']:.2e} {r['wall_time_s']*1e3:8.1f} ms "
                      f"{r['throughput_px_s']/1e6:7.2f} Mpx/s")
            else:
                print(f"{r['variant']:<9} {r['dims']:<24} EXCLUDED "
                      f"(max|d|={r['max_abs_diff']:.2e} over gate)")
        if data.get("csv_path"):
            print(f"csv: {data['csv_path']}")
    elif command == "ablate":
        for row in data["rows"]:
            print(f"{row['variant']:<12} psnr={row['psnr']:.2f} ssim={row['ssim']:.4f}")
        print(f"csv: {data['csv_path']}")


_ENDPOINT = {c: "/" + c for c in _FIELDS}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        from . import service

        uvicorn.run(service.create_app(), host=args.host, port=args.port)
        return 0
    client = ServiceClient(args.server)
    try:
        status, data = client.post(_ENDPOINT[args.command], _payload(args))
    except httpx.HTTPError as exc:
        print(f"request failed: {exc}", file=sys.stderr)
        return 1
    if status != 200:
        detail = data.get("detail", data) if isinstance(data, dict) else data
        print(f"error: {detail}", file=sys.stderr)
        return 1
    _print_response(args.command, data)
    if args.command == "gradcheck" and not data["passed"]:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
