"""Command line interface: ``hran {train,sr,eval,params,gradcheck,featmaps,degrade}``.

Exit codes: 0 success, 1 configuration error, 2 data error (missing or
unreadable files, bad images, checkpoint problems), 3 training diverged,
4 gradient check failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .autodiff import finite_diff_check, l1_loss
from .checkpoint import CheckpointError, load_checkpoint
from .config import (
    DEGRADATION_KEYS,
    MODEL_KEYS,
    TRAIN_KEYS,
    ConfigError,
    DegradationSpec,
    RunConfig,
    load_run_config,
    make_rng,
)
from .data import (
    SRDataset,
    bicubic_upscale,
    degrade,
    images_to_batch,
    list_pngs,
    mod_crop,
    read_png,
    write_png,
)
from .metrics import EvalProtocol, psnr_y, ssim_y
from .model import HRAN, dump_feature_maps
from .trainer import TrainingDiverged, super_resolve, train

log = logging.getLogger("hran")

EXIT_CONFIG, EXIT_DATA, EXIT_NAN, EXIT_CHECK = 1, 2, 3, 4
TILE_OVERLAP = 8
CONFIG_KEYS = list(MODEL_KEYS) + [k for k in TRAIN_KEYS if k not in MODEL_KEYS] + list(DEGRADATION_KEYS)


class DataError(Exception):
    pass


def _add_overrides(p: argparse.ArgumentParser):
    group = p.add_argument_group("config overrides (take precedence over --config)")
    for key in CONFIG_KEYS:
        group.add_argument(f"--{key.replace('_', '-')}", dest=f"cfg_{key}", metavar="VALUE", default=None)


def _overrides(args) -> dict:
    return {k: getattr(args, f"cfg_{k}") for k in CONFIG_KEYS if getattr(args, f"cfg_{k}", None) is not None}


def _resolve_config(args) -> RunConfig:
    overrides = _overrides(args)
    if getattr(args, "config", None):
        return load_run_config(args.config, overrides)
    return RunConfig.from_mapping(overrides, "<flags>")


def _load_ckpt(path):
    try:
        return load_checkpoint(path)
    except CheckpointError as exc:
        raise DataError(f"{path}: {exc}") from None


def _read_image(path) -> np.ndarray:
    try:
        return read_png(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: cannot read image ({exc})") from None


def _hr_pngs(directory) -> List[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory}: not a directory")
    paths = list_pngs(directory)
    if not paths:
        raise DataError(f"{directory}: no PNG images found")
    return paths


# -- inference helpers ---------------------------------------------------------

def _tile_spans(n: int, tile: int):
    """Core ``[a, b)`` spans of width ``tile`` covering ``0..n``."""
    return [(a, min(a + tile, n)) for a in range(0, n, tile)]


def super_resolve_tiled(model: HRAN, lr: np.ndarray, tile: int, overlap: int = TILE_OVERLAP) -> np.ndarray:
    """Run the model on overlapping LR tiles and stitch the centre crops."""
    s = model.config.scale
    h, w = lr.shape[:2]
    out = np.zeros((h * s, w * s, 3), dtype=np.uint8)
    for y0, y1 in _tile_spans(h, tile):
        for x0, x1 in _tile_spans(w, tile):
            ya, yb = max(0, y0 - overlap), min(h, y1 + overlap)
            xa, xb = max(0, x0 - overlap), min(w, x1 + overlap)
            sr = super_resolve(model, lr[ya:yb, xa:xb])
            out[y0 * s:y1 * s, x0 * s:x1 * s] = sr[(y0 - ya) * s:(y1 - ya) * s, (x0 - xa) * s:(x1 - xa) * s]
    return out


def _format_metric(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.4f}"


# -- commands ------------------------------------------------------------------

def cmd_train(args) -> int:
    if args.resume:
        model, optim, ckpt_run = _load_ckpt(args.resume)
        values = ckpt_run.to_mapping()
        values.update(_overrides(args))
        run = RunConfig.from_mapping(values, "<resume>")
        if run.model != model.config:
            raise ConfigError("model settings cannot be changed when resuming")
    else:
        run = _resolve_config(args)
        model, optim = None, None
    if run.train is None:
        raise ConfigError("total_iters and seed are required (set them in --config or pass --total-iters/--seed)")
    if args.data is None:
        raise DataError("--data is required: a directory of HR PNG images")
    try:
        dataset = SRDataset.from_dir(args.data, run.degradation)
        val = None
        if args.val:
            vset = SRDataset.from_dir(args.val, DegradationSpec("BI", run.model.scale))
            val = list(zip(vset.lr, vset.hr))
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from None
    if model is None:
        model = HRAN(run.model, seed=run.train.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(run.dumps())
    try:
        train(model, dataset, run.train, optim=optim, val_pairs=val, out_dir=out, degradation=run.degradation,
              on_log=lambda line: print(line, flush=True))
    except ValueError as exc:
        raise DataError(str(exc)) from None
    return 0


def cmd_sr(args) -> int:
    model, _, _ = _load_ckpt(args.ckpt)
    if args.scale is not None and args.scale != model.config.scale:
        raise ConfigError(f"--scale {args.scale} disagrees with the checkpoint's x{model.config.scale}")
    lr = _read_image(args.input)
    if args.tile:
        sr = super_resolve_tiled(model, lr, args.tile)
    else:
        sr = super_resolve(model, lr)
    write_png(args.output, sr)
    return 0


def cmd_eval(args) -> int:
    if args.baseline is None and args.ckpt is None:
        raise ConfigError("give --ckpt or --baseline")
    model = None
    scale = args.scale
    if args.ckpt:
        model, _, _ = _load_ckpt(args.ckpt)
        if scale is not None and scale != model.config.scale:
            raise ConfigError(f"--scale {scale} disagrees with the checkpoint's x{model.config.scale}")
        scale = model.config.scale
    scale = scale or 4
    spec = DegradationSpec(args.deg, scale, allow_any_scale=args.allow_any_scale)
    protocol = EvalProtocol(shave=scale if args.shave is None else args.shave)
    rows = []
    for path in _hr_pngs(args.hr):
        hr = mod_crop(_read_image(path), scale)
        if args.baseline == "identity":
            sr = hr
        else:
            lr = degrade(hr, spec)
            sr = bicubic_upscale(lr, scale) if args.baseline == "bicubic" else super_resolve(model, lr)
        rows.append((path.name, psnr_y(sr, hr, protocol), ssim_y(sr, hr, protocol)))
    finite = [r for r in rows if math.isfinite(r[1])]
    n_inf = len(rows) - len(finite)
    mean_psnr = float(np.mean([r[1] for r in finite])) if finite else math.inf
    mean_ssim = float(np.mean([r[2] for r in rows]))
    if args.json:
        print(json.dumps({"images": [{"name": n, "psnr": None if math.isinf(p) else p, "ssim": s}
                                     for n, p, s in rows],
                          "mean": {"psnr": None if math.isinf(mean_psnr) else mean_psnr, "ssim": mean_ssim},
                          "excluded_inf": n_inf, "scale": scale, "shave": protocol.shave}))
        return 0
    width = max(len(r[0]) for r in rows + [("MEAN", 0, 0)])
    for name, p, s in rows:
        print(f"{name:<{width}}  {_format_metric(p):>8}  {s:.4f}")
    mark = "*" if n_inf else ""
    print(f"{'MEAN':<{width}}  {_format_metric(mean_psnr):>8}  {mean_ssim:.4f}{mark}")
    if n_inf:
        print(f"* {n_inf} image(s) with infinite PSNR excluded from the MEAN PSNR")
    return 0


def cmd_params(args) -> int:
    run = _resolve_config(args)
    pc = HRAN(run.model).count_params()
    print(pc.format_kv() if args.kv else pc.format_table())
    return 0


def tiny_config(model_config):
    """The given architecture at the smallest width: 1 group, 1 block, 2 channels."""
    kw = dict(num_rafgs=1, blocks_per_rafg=1, channels=2)
    if model_config.attention == "ca":
        kw["ca_reduction"] = 2
    return model_config.replace(**kw)


def run_gradcheck(model_config, seed: int = 0, size: int = 4):
    model = HRAN(tiny_config(model_config))
    rng = make_rng(seed)
    params = {}
    for name, v in model.params.items():
        draw = rng.normal(size=v.shape)
        if name.endswith(".weight"):
            # unit-norm rows on average, matching the g-scaled weight-normalized kernels
            draw /= math.sqrt(int(np.prod(v.shape[1:])))
        params[name] = draw
    s = model.config.scale
    x = rng.uniform(size=(1, 3, size, size))
    hr = rng.uniform(size=(1, 3, size * s, size * s))
    return finite_diff_check(lambda p: l1_loss(model.forward(x, p), hr), params)


def cmd_gradcheck(args) -> int:
    run = _resolve_config(args)
    report = run_gradcheck(run.model, args.check_seed)
    status = "PASS" if report.passed else "FAIL"
    rel = "<" if report.passed else ">="
    line = f"{status} max_rel_err{rel}1e-4 ({report.max_rel_error:.3e} over {report.n_coords} coordinates)"
    if not report.passed:
        line += f" worst={report.worst_param}{list(report.worst_index)}"
    print(line)
    return 0 if report.passed else EXIT_CHECK


def cmd_featmaps(args) -> int:
    model, _, _ = _load_ckpt(args.ckpt)
    lr = images_to_batch([_read_image(args.input)])
    for path in dump_feature_maps(model, lr, args.output):
        print(path)
    return 0


def cmd_degrade(args) -> int:
    spec = DegradationSpec(args.deg, args.scale, allow_any_scale=args.allow_any_scale)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for path in _hr_pngs(args.hr):
        write_png(out / path.name, degrade(_read_image(path), spec))
    return 0


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hran", description="HRAN super-resolution: train, apply, evaluate and inspect models.",
        epilog="exit codes: 0 ok, 1 config, 2 data, 3 diverged, 4 gradient check failed")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", type=Path)
    p.add_argument("--data", type=Path, help="directory of HR PNGs")
    p.add_argument("--val", type=Path, help="directory of held-out HR PNGs")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--resume", type=Path, help="continue from a checkpoint")
    _add_overrides(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sr", help="super-resolve one image")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", dest="output", type=Path, required=True)
    p.add_argument("--scale", type=int, help="expected scale; must match the checkpoint")
    p.add_argument("--tile", type=int, default=0, help=f"LR tile size; tiles overlap by {TILE_OVERLAP} pixels")
    p.set_defaults(func=cmd_sr)

    p = sub.add_parser("eval", help="PSNR/SSIM over a directory of HR images")
    p.add_argument("--ckpt", type=Path)
    p.add_argument("--baseline", choices=["bicubic", "identity"])
    p.add_argument("--hr", type=Path, required=True)
    p.add_argument("--deg", choices=["BI", "BD"], default="BI")
    p.add_argument("--scale", type=int)
    p.add_argument("--shave", type=int, help="border to ignore (default: scale)")
    p.add_argument("--allow-any-scale", action="store_true")
    p.add_argument("--json", action="store_true", help="print one JSON document instead of the table")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("params", help="parameter table")
    p.add_argument("--config", type=Path)
    p.add_argument("--kv", action="store_true", help="key=value lines instead of an aligned table")
    _add_overrides(p)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("gradcheck", help="finite-difference check of a tiny instance of the config")
    p.add_argument("--config", type=Path)
    p.add_argument("--check-seed", type=int, default=0)
    _add_overrides(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("featmaps", help="dump average feature maps")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--out", dest="output", type=Path, required=True)
    p.set_defaults(func=cmd_featmaps)

    p = sub.add_parser("degrade", help="write LR versions of a directory of HR images")
    p.add_argument("--hr", type=Path, required=True)
    p.add_argument("--deg", choices=["BI", "BD"], default="BI")
    p.add_argument("--scale", type=int, required=True)
    p.add_argument("--allow-any-scale", action="store_true")
    p.add_argument("--out", dest="output", type=Path, required=True)
    p.set_defaults(func=cmd_degrade)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}; state saved to {exc.checkpoint}", file=sys.stderr)
        return EXIT_NAN


if __name__ == "__main__":
    sys.exit(main())
