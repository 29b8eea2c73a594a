"""``chainhdr`` command line: prepare, train, infer, merge, tonemap, evaluate,
pipeline, synthetic.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Options can also come from a JSON file given with ``--config``; flags given
on the command line win over the file.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import shutil
import sys
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import data as D
from . import hdr
from . import inference as I
from . import metrics as M
from . import rgbe
from . import training as T

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class StageError(Exception):
    """Failure inside a named pipeline stage; ``code`` is the exit code."""

    def __init__(self, stage: str, message: str, code: int):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# option defaults; parsers use None so a config file can fill gaps
DEFAULTS = {
    "seed": 0,
    "lambda_smooth": 100.0,
    "n_samples": 70,
    "key": 0.18,
    "white": None,
    "stride": 1,
    "count": 20,
    "height": 96,
    "width_px": 96,
    "width": 32,
    "epochs": 100,
    "joint_epochs": 1,
    "batch_size": 1,
    "learning_rate": 1e-3,
    "beta1": 0.9,
    "beta2": 0.999,
    "lambda_tv": 0.001,
    "patch_stride": 10,
    "teacher_forcing": True,
    "bn_mode": "frozen",
}


def _resolve(args: argparse.Namespace) -> argparse.Namespace:
    cfg = {}
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except FileNotFoundError as exc:
            raise D.DataError(f"config file not found: {args.config}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = [k for k in cfg if not hasattr(args, k)]
        if unknown:
            raise UsageError(f"unknown config keys for '{args.command}': {sorted(unknown)}")
    for key in vars(args):
        if getattr(args, key) is None:
            if key in cfg:
                setattr(args, key, cfg[key])
            elif key in DEFAULTS:
                setattr(args, key, DEFAULTS[key])
    return args


@contextmanager
def _atomic_dir(out: Path):
    """Build a directory under a temporary name and move it into place on
    success; on failure nothing is left behind."""
    out = Path(out)
    if out.exists() and (not out.is_dir() or any(out.iterdir())):
        raise D.DataError(f"output directory {out} exists and is not empty")
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=out.parent, prefix=f".{out.name}-"))
    try:
        yield tmp
        if out.exists():
            out.rmdir()
        os.replace(tmp, out)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp)


def _atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)



def _finite_or_str(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else "nan"
    return v


# ---------------------------------------------------------------------------
# synthetic / prepare
# ---------------------------------------------------------------------------

def cmd_synthetic(args) -> int:
    out = Path(args.out)
    with _atomic_dir(out) as tmp:
        for i in range(args.count):
            st = D.synthetic_stack(args.seed + i, args.height, args.width_px)
            D.save_stack(st, tmp / st.scene_id)
    print(f"wrote {args.count} synthetic stacks to {out}")
    return EXIT_OK


def scan_scenes(root: Path) -> tuple[list[str], list[dict]]:
    valid, excluded = [], []
    for d in sorted(p for p in root.iterdir() if p.is_dir() and not p.name.startswith(".")):
        missing = D.missing_evs(d)
        if missing:
            excluded.append({"scene": d.name,
                             "reason": "missing " + ", ".join(D.ev_filename(ev) for ev in missing)})
        else:
            valid.append(d.name)
    return valid, excluded


def split_manifest(root: Path, seed: int) -> dict:
    valid, excluded = scan_scenes(root)
    if not valid:
        raise D.DataError(f"no complete scenes under {root}")
    train, val, test = D.split_dataset(valid, seed)
    return {"seed": seed, "train": sorted(train), "val": sorted(val), "test": sorted(test),
            "excluded": excluded}


def cmd_prepare(args) -> int:
    root = Path(args.data)
    if not root.is_dir():
        raise D.DataError(f"dataset root {root} is not a directory")
    manifest = split_manifest(root, args.seed)
    for item in manifest["excluded"]:
        print(f"excluded {item['scene']}: {item['reason']}", file=sys.stderr)
    out = Path(args.out) if args.out else root / "splits.json"
    _atomic_write(out, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    print(f"train {len(manifest['train'])}  val {len(manifest['val'])}  test {len(manifest['test'])}  "
          f"excluded {len(manifest['excluded'])} -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _train_config(args) -> T.TrainConfig:
    try:
        return T.TrainConfig(
            learning_rate=args.learning_rate, beta1=args.beta1, beta2=args.beta2,
            batch_size=args.batch_size, epochs=args.epochs, patch_stride=args.patch_stride,
            lambda_tv=args.lambda_tv, seed=args.seed, teacher_forcing=bool(args.teacher_forcing),
            joint_epochs=args.joint_epochs, width=args.width, bn_mode=args.bn_mode)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _load_training_data(args) -> tuple[list, list]:
    if args.synthetic:
        stacks = [D.synthetic_stack(args.seed + i) for i in range(args.synthetic)]
        train, val, _ = D.split_dataset(stacks, args.seed)
        return train, val
    if not args.data:
        raise UsageError("train needs --data (with a prepared splits.json) or --synthetic N")
    root = Path(args.data)
    splits_path = Path(args.splits) if args.splits else root / "splits.json"
    if not splits_path.is_file():
        raise D.DataError(f"split manifest {splits_path} not found; run 'chainhdr prepare' first")
    splits = json.loads(splits_path.read_text())
    for name in splits["train"] + splits["val"]:
        if not (root / name).is_dir():
            raise D.DataError(f"scene directory {root / name} listed in {splits_path} is missing")
    train = [D.load_stack(root / n) for n in splits["train"]]
    val = [D.load_stack(root / n) for n in splits["val"]]
    return train, val


def cmd_train(args) -> int:
    cfg = _train_config(args)
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.parent.exists():
        raise D.DataError(f"checkpoint directory {ckpt_path.parent} does not exist")
    log_path = Path(args.log) if args.log else ckpt_path.with_name(ckpt_path.name + ".log.jsonl")
    model = state = None
    if args.resume:
        if not ckpt_path.is_file():
            raise D.DataError(f"--resume: checkpoint {ckpt_path} not found")
        model, state = ckpt.load_checkpoint_with_state(ckpt_path, expected_width=cfg.width)
        if state is None:
            raise D.DataError(f"--resume: {ckpt_path} holds no training state")
    train, val = _load_training_data(args)

    stop_after = args.stop_after_epoch

    class _Stop(Exception):
        pass

    def on_epoch(m, st):
        ckpt.save_checkpoint(m, ckpt_path, st)
        _atomic_write(log_path, "".join(T.format_log_record(r) + "\n" for r in st.log).encode())
        print(T.format_log_record(st.log[-1]), flush=True)
        if stop_after is not None and st.epochs_done >= stop_after and st.epochs_done < cfg.epochs:
            raise _Stop

    try:
        result = T.train_chain(train, val, cfg, model, state, on_epoch)
    except _Stop:
        print(f"stopped after epoch {stop_after}; continue with --resume", file=sys.stderr)
        return EXIT_OK
    if result.state.epochs_done == 0 or not result.log:
        ckpt.save_checkpoint(result.model, ckpt_path, result.state)
        _atomic_write(log_path, b"")
    final = result.log[-1]["train_pixel"] if result.log else None
    if args.max_final_loss is not None and (final is None or final > args.max_final_loss):
        print(f"final training pixel loss {final} is above --max-final-loss {args.max_final_loss}",
              file=sys.stderr)
        return EXIT_NUMERIC
    print(f"checkpoint {ckpt_path} sha256 {ckpt.file_digest(ckpt_path)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# infer / merge / tonemap
# ---------------------------------------------------------------------------

def _load_model(path: str):
    p = Path(path)
    if not p.is_file():
        raise D.DataError(f"checkpoint {p} not found")
    return ckpt.load_checkpoint(p), ckpt.file_digest(p)


def _read_input(path: str) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise D.DataError(f"input image {p} not found")
    try:
        return D.read_png(p)
    except OSError as exc:
        raise D.DataError(f"cannot read image {p}: {exc}") from exc


def _write_stack(stack: I.InferredStack, out: Path) -> None:
    for ev, img in sorted(stack.images.items()):
        D.write_png(out / D.ev_filename(ev), img)
    (out / "manifest.json").write_text(stack.manifest() + "\n")


def cmd_infer(args) -> int:
    img = _read_input(args.input)
    model, digest = _load_model(args.checkpoint)
    with _atomic_dir(Path(args.out)) as tmp:
        stack = I.generate_stack(model, img, args.stride, provenance=digest)
        _write_stack(stack, tmp)
    print(f"wrote EV -3..+3 to {args.out}")
    return EXIT_OK


def _merge_dir(stack_dir: Path, args) -> tuple[np.ndarray, str]:
    stack = D.load_stack(stack_dir)
    radiance, _, mode = hdr.merge_stack(stack, args.lambda_smooth, args.n_samples, args.seed)
    return radiance, mode


def cmd_merge(args) -> int:
    stack_dir = Path(args.stack)
    if not stack_dir.is_dir():
        raise D.DataError(f"stack directory {stack_dir} not found")
    radiance, mode = _merge_dir(stack_dir, args)
    out = Path(args.out)
    fd, tmp = tempfile.mkstemp(dir=out.parent if str(out.parent) else ".", prefix=".merge-")
    os.close(fd)
    try:
        rgbe.write_rgbe(tmp, radiance)
        os.replace(tmp, out)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    print(f"merged ({mode}) {radiance.shape[1]}x{radiance.shape[0]} radiance map -> {out}")
    return EXIT_OK


def cmd_tonemap(args) -> int:
    src = Path(args.input)
    if not src.is_file():
        raise D.DataError(f"radiance file {src} not found")
    radiance = rgbe.read_rgbe(src)
    img = hdr.tonemap_to_uint8(radiance, args.key, args.white)
    out = Path(args.out)
    fd, tmp = tempfile.mkstemp(dir=out.parent if str(out.parent) else ".", prefix=".tonemap-", suffix=".png")
    os.close(fd)
    try:
        D.write_png(tmp, img)
        os.replace(tmp, out)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    print(f"tone mapped -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

def run_pipeline(img: np.ndarray, model, digest: str, out: Path, args) -> dict:
    with _atomic_dir(out) as tmp:
        try:
            stack = I.generate_stack(model, img, args.stride, provenance=digest)
            (tmp / "stack").mkdir()
            _write_stack(stack, tmp / "stack")
        except (ValueError, OSError) as exc:
            raise StageError("infer", str(exc), EXIT_DATA) from exc
        try:
            radiance, _, mode = hdr.merge_stack(stack.images, args.lambda_smooth, args.n_samples, args.seed)
            rgbe.write_rgbe(tmp / "radiance.hdr", radiance)
        except hdr.SingularSystemError as exc:
            raise StageError("merge", str(exc), EXIT_NUMERIC) from exc
        except ValueError as exc:
            raise StageError("merge", str(exc), EXIT_DATA) from exc
        try:
            tm = hdr.tonemap_to_uint8(radiance, args.key, args.white)
            D.write_png(tmp / "tonemapped.png", tm)
        except ValueError as exc:
            raise StageError("tonemap", str(exc), EXIT_NUMERIC) from exc
        manifest = {
            "model_sha256": digest,
            "input_sha256": stack.input_hash,
            "stride": args.stride,
            "merge": {"mode": mode, "lambda_smooth": args.lambda_smooth, "n_samples": args.n_samples,
                      "seed": args.seed},
            "tonemap": {"key": args.key, "white": args.white},
            "files": ["stack/" + D.ev_filename(ev) for ev in sorted(stack.images)]
                     + ["stack/manifest.json", "radiance.hdr", "tonemapped.png"],
        }
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def cmd_pipeline(args) -> int:
    img = _read_input(args.input)
    if img.shape[0] < D.PATCH_SIZE or img.shape[1] < D.PATCH_SIZE:
        raise D.DataError(f"input {img.shape[0]}x{img.shape[1]} is smaller than {D.PATCH_SIZE}x{D.PATCH_SIZE}")
    model, digest = _load_model(args.checkpoint)
    out = Path(args.out)
    if out.exists() and (not out.is_dir() or any(out.iterdir())):
        raise D.DataError(f"output directory {out} exists and is not empty")
    run_pipeline(img, model, digest, out, args)
    print(f"pipeline outputs in {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _scene_dirs(root: Path) -> dict[str, Path]:
    """A stack directory itself, or a directory of scene directories."""
    if any(root.glob("ev*.png")):
        return {root.name: root}
    return {d.name: d for d in sorted(root.iterdir()) if d.is_dir() and any(d.glob("ev*.png"))}


def evaluate_dirs(gt_root: Path, inf_root: Path, args) -> dict:
    gt_scenes, inf_scenes = _scene_dirs(gt_root), _scene_dirs(inf_root)
    if len(gt_scenes) == 1 and len(inf_scenes) == 1:
        pairs = [(next(iter(gt_scenes)), next(iter(gt_scenes.values())), next(iter(inf_scenes.values())))]
    else:
        missing = sorted(set(gt_scenes) - set(inf_scenes))
        if missing:
            raise D.DataError(f"no inferred stack for scenes: {missing}")
        pairs = [(n, gt_scenes[n], inf_scenes[n]) for n in sorted(gt_scenes)]
    if not pairs:
        raise D.DataError(f"no stacks found under {gt_root}")
    stack_report = M.MetricReport()
    hdr_report = M.MetricReport(metrics=("psnr",))
    evs = (-3, -2, -1, 1, 2, 3)
    for name, gdir, idir in pairs:
        for ev in evs:
            missing = [str(d / D.ev_filename(ev)) for d in (gdir, idir) if D.missing_evs(d, [ev])]
            if missing:
                raise D.DataError(f"scene {name}: missing counterpart files {missing}")
        gt = D.load_stack(gdir)
        inf = D.load_stack(idir)
        for ev in evs:
            a, b = gt.images[ev], inf.images[ev]
            if a.shape != b.shape:
                raise D.DataError(f"scene {name} EV {ev}: dimension mismatch {a.shape} vs {b.shape}")
            big = min(a.shape[:2]) >= M.SSIM_WINDOW * 2 ** (len(M.MS_SSIM_WEIGHTS) - 1)
            stack_report.add(scene=name, ev=ev, psnr=M.psnr(a, b), ssim=M.ssim(a, b),
                             ms_ssim=M.ms_ssim(a, b) if big else None)
        tm = []
        for st in (gt, inf):
            radiance, _, _ = hdr.merge_stack(st, args.lambda_smooth, args.n_samples, args.seed)
            tm.append(hdr.tonemap_to_uint8(radiance, args.key, args.white))
        hdr_report.add(scene=name, psnr=M.psnr(tm[0], tm[1]))

    table4 = {}
    for ev in evs:
        table4[f"{ev:+d}"] = {
            m: dict(zip(("m", "sigma"), map(_finite_or_str, stack_report.aggregate(m, ev=ev))))
            for m in stack_report.metrics
        }
    table5 = {"tonemapped_psnr": dict(zip(("m", "sigma"), map(_finite_or_str, hdr_report.aggregate("psnr"))))}
    rows = [{k: _finite_or_str(v) for k, v in r.items()} for r in stack_report.rows]
    hdr_rows = [{k: _finite_or_str(v) for k, v in r.items()} for r in hdr_report.rows]
    return {"stack_metrics": table4, "tonemapped": table5, "rows": rows, "tonemapped_rows": hdr_rows}


def format_table(report: dict) -> str:
    lines = [f"{'EV':>4} {'':>6} {'PSNR':>9} {'SSIM':>8} {'MS-SSIM':>8}"]
    for ev, cols in report["stack_metrics"].items():
        for stat in ("m", "sigma"):
            vals = []
            for metric in ("psnr", "ssim", "ms_ssim"):
                v = cols[metric][stat]
                if v is None:
                    v = "n/a"
                vals.append(f"{v:>8.4f}" if isinstance(v, float) and math.isfinite(v) else f"{str(v):>8}")
            lines.append(f"{ev:>4} {stat:>6} {vals[0]:>9} {vals[1]} {vals[2]}")
    t = report["tonemapped"]["tonemapped_psnr"]
    lines.append(f"tone-mapped HDR PSNR  m {t['m']}  sigma {t['sigma']}")
    return "\n".join(lines)


def cmd_evaluate(args) -> int:
    gt_root, inf_root = Path(args.gt), Path(args.inferred)
    for p in (gt_root, inf_root):
        if not p.is_dir():
            raise D.DataError(f"stack directory {p} not found")
    report = evaluate_dirs(gt_root, inf_root, args)
    print(format_table(report))
    if args.out:
        _atomic_write(Path(args.out), (json.dumps(report, indent=2, sort_keys=True) + "\n").encode())
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, *groups: str) -> None:
    p.add_argument("--config", help="JSON file with option values; command-line flags win")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    if "merge" in groups:
        p.add_argument("--lambda-smooth", dest="lambda_smooth", type=float,
                       help="response-curve smoothness weight (default 100)")
        p.add_argument("--n-samples", dest="n_samples", type=int,
                       help="pixel samples per channel for response recovery (default 70)")
    if "tonemap" in groups:
        p.add_argument("--key", type=float, help="tone-mapping key value (default 0.18)")
        p.add_argument("--white", type=float,
                       help="smallest luminance mapped to white (default: the scene maximum)")
    if "infer" in groups:
        p.add_argument("--stride", type=int,
                       help="patch stride for inference: 1 is dense, 64 non-overlapping tiles (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="chainhdr", description="Single-image HDR through an inferred exposure stack.",
                     epilog="exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synthetic", help="write procedural seven-exposure stacks")
    p.add_argument("--out", required=True, help="output dataset directory (must not exist or be empty)")
    p.add_argument("--count", type=int, help="number of stacks (default 20)")
    p.add_argument("--height", type=int, help="image height (default 96)")
    p.add_argument("--width", dest="width_px", type=int, help="image width (default 96)")
    _common(p)
    p.set_defaults(func=cmd_synthetic)

    p = sub.add_parser("prepare", help="validate scenes and write a train/val/test split manifest")
    p.add_argument("--data", required=True, help="dataset root with one directory per scene")
    p.add_argument("--out", help="manifest path (default DATA/splits.json)")
    _common(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train both three-stage chains")
    p.add_argument("--data", help="dataset root holding splits.json")
    p.add_argument("--splits", help="split manifest (default DATA/splits.json)")
    p.add_argument("--synthetic", type=int, metavar="N", default=0,
                   help="train on N generated stacks instead of --data")
    p.add_argument("--checkpoint", required=True, help="checkpoint path, rewritten after every epoch")
    p.add_argument("--log", help="per-epoch JSONL log (default CHECKPOINT.log.jsonl)")
    p.add_argument("--resume", action="store_true", help="continue from the training state in --checkpoint")
    p.add_argument("--stop-after-epoch", dest="stop_after_epoch", type=int, metavar="K",
                   help="stop after epoch K, leaving a resumable checkpoint")
    p.add_argument("--max-final-loss", dest="max_final_loss", type=float,
                   help="exit 3 unless the last epoch's summed pixel loss is at most this")
    p.add_argument("--epochs", type=int, help="epochs (default 100)")
    p.add_argument("--joint-epochs", dest="joint_epochs", type=int,
                   help="final epochs run chained when teacher forcing is on (default 1)")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="patches per step (default 1)")
    p.add_argument("--learning-rate", dest="learning_rate", type=float, help="Adam step size (default 0.001)")
    p.add_argument("--beta1", type=float, help="Adam beta1 (default 0.9)")
    p.add_argument("--beta2", type=float, help="Adam beta2 (default 0.999)")
    p.add_argument("--lambda-tv", dest="lambda_tv", type=float, help="TV weight (default 0.001)")
    p.add_argument("--patch-stride", dest="patch_stride", type=int, help="training patch stride (default 10)")
    p.add_argument("--width", type=int, help="feature channels per block (default 32)")
    p.add_argument("--bn-mode", dest="bn_mode", choices=T.BN_MODES,
                   help="batch-norm statistics during training (default frozen)")
    tf = p.add_mutually_exclusive_group()
    tf.add_argument("--teacher-forcing", dest="teacher_forcing", action="store_const", const=True,
                    help="feed ground-truth intermediate exposures (default)")
    tf.add_argument("--chained", dest="teacher_forcing", action="store_const", const=False,
                    help="feed each stage the previous stage's output in every epoch")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="generate EV -3..+3 from one image")
    p.add_argument("--input", required=True, help="8-bit PNG, at least 64x64")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output stack directory")
    _common(p, "infer")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("merge", help="recover the response curve and merge a stack into .hdr")
    p.add_argument("--stack", required=True, help="directory with ev-3.png .. ev+3.png")
    p.add_argument("--out", required=True, help="output Radiance .hdr file")
    _common(p, "merge")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("tonemap", help="global tone mapping of a .hdr file to PNG")
    p.add_argument("--input", required=True, help="Radiance .hdr file")
    p.add_argument("--out", required=True, help="output PNG")
    _common(p, "tonemap")
    p.set_defaults(func=cmd_tonemap)

    p = sub.add_parser("evaluate", help="PSNR/SSIM/MS-SSIM per EV and tone-mapped HDR PSNR")
    p.add_argument("--gt", required=True, help="ground-truth stack directory (or directory of scenes)")
    p.add_argument("--inferred", required=True, help="inferred stack directory (or directory of scenes)")
    p.add_argument("--out", help="write the JSON report here")
    _common(p, "merge", "tonemap")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="infer the stack, merge to .hdr and tone map in one go")
    p.add_argument("--input", required=True, help="8-bit PNG, at least 64x64")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output directory (must not exist or be empty)")
    _common(p, "infer", "merge", "tonemap")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = _resolve(parser.parse_args(argv))
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"error in stage {exc}", file=sys.stderr)
        return exc.code
    except T.NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except hdr.SingularSystemError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (D.DataError, ckpt.CheckpointError, rgbe.RGBEError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
