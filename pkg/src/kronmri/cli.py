"""Command-line interface.

Subcommands cover dataset/mask generation, training, reconstruction,
metric reporting, parameter accounting, algebra verification, gradient
checking, and kernel benchmarking. Results go to stdout (JSON or CSV);
errors go to stderr as one JSON line with exit codes 2 (config), 3
(numeric), 4 (I/O).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time

import numpy as np

from . import tensor as T
from .algebra import preset, verify_algebra
from .blocks import (AttentionConfig, PhmMlp, UNet, UNetConfig,
                     WindowAttention, build_unet)
from .errors import ConfigError, NumericError, ShapeError
from .kspace import (CENTER_FRACTION_DEFAULTS, complex_magnitude, fft2c,
                     gen_cartesian_mask, gen_phantom, ifft2c)
from .kten import read_kten, write_kten, write_pgm
from .layers import (DenseConv2d, DenseLinear, KroneckerConv2d,
                     KroneckerLinear)
from .losses import LossWeights, loss_total
from .metrics import psnr, ssim
from .rng import Rng
from .tensor import Tensor, grad_check, mac_count, reset_mac_count
from .training import (Adam, ConsistentModel, DatasetSpec, TrainConfig,
                       evaluate, held_out_seed, make_sample, train,
                       write_history)


class _Parser(argparse.ArgumentParser):
    """Argparse whose usage errors are emitted as JSON on stderr."""

    def error(self, message):
        print(json.dumps({"error": "ConfigError", "message": message}),
              file=sys.stderr)
        raise SystemExit(2)


def _fmt(prog):
    # fixed width keeps --help output stable for snapshot tests
    return argparse.ArgumentDefaultsHelpFormatter(prog, width=80)


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _parse_multiples(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part != ""]
    except ValueError:
        raise ConfigError(f"bad channel multiples {text!r}; expected e.g. 1,2,4")


def _normalize_kind(kind: str) -> str:
    return "kronecker" if kind == "kron" else kind


def _load_pair(path: str) -> np.ndarray:
    arr = read_kten(path)
    if arr.ndim != 3 or arr.shape[0] != 2:
        raise ShapeError(f"{path}: expected a [2, H, W] complex pair, "
                         f"got shape {arr.shape}")
    return arr


def _magnitude_image(path: str) -> np.ndarray:
    arr = read_kten(path)
    if arr.ndim == 3 and arr.shape[0] == 2:
        return complex_magnitude(arr)
    if arr.ndim == 2:
        return np.asarray(arr, dtype=np.float64)
    raise ShapeError(f"{path}: expected [2, H, W] or [H, W], got {arr.shape}")


# ---------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    spec = DatasetSpec(height=args.height, width=args.width,
                       n_ellipses=args.ellipses)
    os.makedirs(args.out, exist_ok=True)
    files = []
    for i in range(args.count):
        s = make_sample(spec, args.af, args.seed, i)
        for tag, arr in (("truth", s.truth), ("zf", s.zf),
                         ("mask", s.mask_columns)):
            name = f"sample{i:04d}.{tag}.kten"
            write_kten(os.path.join(args.out, name), arr)
            files.append(name)
    manifest = {"count": args.count, "seed": args.seed, "af": args.af,
                "height": args.height, "width": args.width,
                "ellipses": args.ellipses}
    with open(os.path.join(args.out, "dataset.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    _emit({"written": len(files) + 1, "out": args.out, **manifest})
    return 0


def cmd_gen_mask(args) -> int:
    mask = gen_cartesian_mask(args.width, args.af,
                              center_fraction=args.center_fraction,
                              rng=Rng(args.seed))
    write_kten(args.out, mask.sampled)
    if args.pgm:
        write_pgm(args.pgm, mask.sampled[None, :], maxval=1)
    _emit({"width": mask.width, "af": mask.af,
           "center_fraction": mask.center_fraction,
           "center_columns": mask.center_columns,
           "sampled_fraction": mask.sampled_fraction,
           "out": args.out})
    return 0


def _unet_config_from_args(args) -> UNetConfig:
    kind = _normalize_kind(args.layer_kind)
    return UNetConfig(channel_multiples=_parse_multiples(args.multiples),
                      base_channels=args.base, layer_kind=kind,
                      n=1 if kind == "dense" else args.n)


def cmd_train(args) -> int:
    ucfg = _unet_config_from_args(args)
    model = ConsistentModel(build_unet(ucfg, Rng(args.seed)))
    spec = DatasetSpec(height=args.size, width=args.size,
                       n_ellipses=args.ellipses)
    cfg = TrainConfig(steps=args.steps, batch=args.batch, seed=args.seed,
                      af=args.af, dataset_size=args.dataset_size,
                      eval_every=args.eval_every, eval_size=args.eval_size,
                      lr=args.lr)
    eval_seed = held_out_seed(cfg.seed)
    baseline = evaluate(None, spec, cfg.af, eval_seed, cfg.eval_size)
    history = train(model, spec, cfg)
    final = evaluate(model, spec, cfg.af, eval_seed, cfg.eval_size)
    summary = {"config": {**ucfg.to_dict(), "steps": cfg.steps,
                          "batch": cfg.batch, "seed": cfg.seed, "af": cfg.af,
                          "lr": cfg.lr, "dataset_size": cfg.dataset_size,
                          "size": args.size, "ellipses": args.ellipses},
               "zero_filled": {k: baseline[k] for k in
                               ("psnr_mean", "psnr_std", "ssim_mean", "ssim_std")},
               "final": {k: final[k] for k in
                         ("psnr_mean", "psnr_std", "ssim_mean", "ssim_std")},
               "psnr_gain_db": final["psnr_mean"] - baseline["psnr_mean"],
               "final_loss": history[-1]["loss"]}
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        model.save(os.path.join(args.out, "checkpoint"))
        write_history(os.path.join(args.out, "history.jsonl"), history)
        with open(os.path.join(args.out, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=1, sort_keys=True)
        summary["out"] = args.out
    _emit(summary)
    return 0


def cmd_reconstruct(args) -> int:
    k = _load_pair(args.input)
    if args.mask:
        cols = read_kten(args.mask)
        if cols.ndim != 1 or cols.shape[0] != k.shape[2]:
            raise ShapeError(f"mask has {cols.shape}, k-space width is {k.shape[2]}")
        # same zeroing semantics as the library mask op, so the no-model
        # path stays bit-identical to a zero-filled reconstruction
        k = np.where(cols.astype(bool), k, k.dtype.type(0.0))
    zf = ifft2c(Tensor(k)).data
    if args.checkpoint:
        model = ConsistentModel(UNet.load(args.checkpoint))
        recon = model(Tensor(zf[None].astype(model.dtype))).data[0]
    else:
        recon = zf
    os.makedirs(args.out, exist_ok=True)
    write_kten(os.path.join(args.out, "recon.kten"), recon)
    mag = complex_magnitude(recon)
    peak = float(mag.max())
    write_pgm(os.path.join(args.out, "recon.pgm"),
              mag / peak if peak > 0 else mag, maxval=255)
    result = {"out": args.out, "shape": list(recon.shape),
              "mode": "model" if args.checkpoint else "zero_filled"}
    if args.truth:
        truth_mag = complex_magnitude(_load_pair(args.truth))
        dr = float(truth_mag.max())
        result["metrics"] = {"psnr_db": psnr(mag, truth_mag, dr),
                             "ssim": ssim(mag, truth_mag, dr)}
        with open(os.path.join(args.out, "metrics.json"), "w") as fh:
            json.dump(result["metrics"], fh, indent=1, sort_keys=True)
    _emit(result)
    return 0


def cmd_metrics(args) -> int:
    recon = _magnitude_image(args.recon)
    truth = _magnitude_image(args.truth)
    dr = args.data_range if args.data_range is not None else float(truth.max())
    _emit({"psnr_db": psnr(recon, truth, dr), "ssim": ssim(recon, truth, dr),
           "data_range": dr})
    return 0


_UNET_KEYS = {"channel_multiples", "base_channels", "layer_kind", "n",
              "in_channels", "out_channels"}
_ATTN_KEYS = {"embed_dim", "heads", "window", "n", "blocks", "mlp_hidden"}


def _count_unet(config: dict, path: str):
    kw = {k: v for k, v in config.items()
          if k not in ("model", "layer_kind", "n")}
    kind = _normalize_kind(config.get("layer_kind", "kronecker"))
    n = config.get("n", 2 if kind == "kronecker" else 1)
    dense = build_unet(UNetConfig(**kw, layer_kind="dense", n=1), Rng(0))
    if kind == "dense":
        target = dense
    else:
        target = build_unet(UNetConfig(**kw, layer_kind="kronecker", n=n),
                            Rng(0))
    rows = []
    for (name, dl), (_, tl) in zip(dense._layers, target._layers):
        rows.append((name, dl.param_count(), tl.param_count()))
    return rows, dense.param_count(), target.param_count()


def _count_attention(config: dict, path: str):
    blocks = config.get("blocks", 1)
    hidden = config.get("mlp_hidden", 2 * config["embed_dim"])
    n = config.get("n", 2)

    def stack(nn):
        acfg = AttentionConfig(embed_dim=config["embed_dim"],
                               heads=config["heads"],
                               window=config["window"], n=nn)
        rng = Rng(0)
        parts = []
        for b in range(blocks):
            parts.append((f"block{b}.attn",
                          WindowAttention(acfg, rng.fork(2 * b))))
            parts.append((f"block{b}.mlp",
                          PhmMlp(config["embed_dim"], hidden, nn,
                                 rng.fork(2 * b + 1))))
        return parts

    dense, kron = stack(1), stack(n)
    rows = [(name, d.param_count(), k.param_count())
            for (name, d), (_, k) in zip(dense, kron)]
    return (rows, sum(r[1] for r in rows), sum(r[2] for r in rows))


def cmd_count_params(args) -> int:
    try:
        with open(args.config) as fh:
            config = json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{args.config}: not valid JSON ({err})")
    model = config.get("model", "unet")
    if model == "unet":
        allowed = _UNET_KEYS
        counter = _count_unet
    elif model == "attention":
        allowed = _ATTN_KEYS
        counter = _count_attention
    else:
        raise ConfigError(f"{args.config}: unknown model {model!r}")
    for key in config:
        if key != "model" and key not in allowed:
            raise ConfigError(f"{args.config}: unknown field {key!r}")
    try:
        rows, dense_total, kron_total = counter(config, args.config)
    except TypeError as err:
        raise ConfigError(f"{args.config}: {err}")
    except KeyError as err:
        raise ConfigError(f"{args.config}: missing field {err.args[0]!r}")
    width = max(len(name) for name, _, _ in rows + [("total", 0, 0)])
    print(f"{'layer':<{width}}  {'dense':>10}  {'kronecker':>10}  ratio")
    for name, d, k in rows:
        print(f"{name:<{width}}  {d:>10}  {k:>10}  {k / d:.4f}")
    print(f"{'total':<{width}}  {dense_total:>10}  {kron_total:>10}  "
          f"{kron_total / dense_total:.4f}")
    return 0


def cmd_verify_algebra(args) -> int:
    names = ["complex", "quaternion"] if args.algebra == "all" else [args.algebra]
    reports = []
    for name in names:
        report = verify_algebra(preset(name), trials=args.trials,
                                rng=Rng(args.seed), tol=args.tol)
        reports.append(report.as_dict())
    _emit({"reports": reports, "passed": all(r["passed"] for r in reports)})
    return 0


def _grad_targets(seed: int, h: float, tol: float):
    rng = Rng(seed)

    def linear():
        layer = KroneckerLinear(8, 8, 2, rng=rng.fork(0), dtype=np.float64)
        x = Tensor(rng.fork(1).uniform((3, 8), -1, 1))

        def f():
            y = layer(x)
            return T.mean_(T.mul(y, y))
        return f, layer.parameters(), tol

    def conv():
        layer = KroneckerConv2d(2, 4, 3, 2, padding=1, rng=rng.fork(2),
                                dtype=np.float64)
        x = Tensor(rng.fork(3).uniform((1, 2, 6, 6), -1, 1))

        def f():
            y = layer(x)
            return T.mean_(T.mul(y, y))
        return f, layer.parameters(), tol

    def mlp():
        block = PhmMlp(4, 8, 2, rng.fork(4), dtype=np.float64)
        x = Tensor(rng.fork(5).uniform((3, 4), -1, 1))

        def f():
            y = block(x)
            return T.mean_(T.mul(y, y))
        return f, block.parameters(), tol

    def attention():
        cfg = AttentionConfig(embed_dim=4, heads=2, window=2, n=2)
        block = WindowAttention(cfg, rng.fork(6), dtype=np.float64)
        x = Tensor(rng.fork(7).uniform((1, 4, 4), -1, 1))

        def f():
            y = block(x)
            return T.mean_(T.mul(y, y))
        return f, block.parameters(), tol

    def loss():
        xhat = Tensor(rng.fork(8).uniform((2, 6, 6), -1, 1), requires_grad=True)
        x = Tensor(rng.fork(9).uniform((2, 6, 6), -1, 1))

        def f():
            return loss_total(xhat, x, LossWeights())
        return f, [xhat], tol

    def unet():
        cfg = UNetConfig(channel_multiples=[1, 2], base_channels=4,
                         layer_kind="kronecker", n=2)
        model = build_unet(cfg, rng.fork(10), dtype=np.float64)
        head_rng = rng.fork(11)
        for name, p in model.named_parameters():
            if name.startswith("head.") and "kernels" in name:
                p.data[...] = head_rng.uniform(p.shape, -0.3, 0.3)
            if name.endswith("bias"):
                p.data[...] = head_rng.uniform(p.shape, -0.2, 0.2)
        x = Tensor(rng.fork(12).uniform((1, 2, 8, 8), -1, 1))

        def f():
            y = model(x)
            return T.scale(T.mean_(T.mul(y, y)), 0.03125)
        return f, model.parameters(), max(tol, 1e-3)

    return {"linear": linear, "conv": conv, "mlp": mlp,
            "attention": attention, "loss": loss, "unet": unet}


def cmd_grad_check(args) -> int:
    targets = _grad_targets(args.seed, args.h, args.tol)
    names = list(targets) if args.target == "all" else [args.target]
    results = []
    for name in names:
        f, params, tol = targets[name]()
        report = grad_check(f, params, h=args.h, tol=tol)
        results.append({"target": name, "max_rel_err": report.max_rel_err,
                        "tol": report.tol, "coords": report.coords,
                        "passed": report.passed})
    _emit({"reports": results, "passed": all(r["passed"] for r in results)})
    if not all(r["passed"] for r in results):
        raise NumericError("gradient check failed: " + ", ".join(
            r["target"] for r in results if not r["passed"]))
    return 0


def _bench_rows(args):
    rng = Rng(args.seed)
    ns = _parse_multiples(args.n_list)
    rows = []
    layers = []
    if args.layer in ("linear", "both"):
        x = Tensor(rng.uniform((args.batch, args.in_features), -1, 1,
                               dtype=np.float32))
        layers.append(("linear", x, lambda: DenseLinear(
            args.in_features, args.out_features, rng=rng.fork(0),
            dtype=np.float32)))
        for n in ns:
            layers.append((f"linear", x, lambda n=n: KroneckerLinear(
                args.in_features, args.out_features, n, rng=rng.fork(n),
                dtype=np.float32)))
    if args.layer in ("conv", "both"):
        xc = Tensor(rng.uniform((args.batch, args.in_features, args.spatial,
                                 args.spatial), -1, 1, dtype=np.float32))
        layers.append(("conv", xc, lambda: DenseConv2d(
            args.in_features, args.out_features, args.kernel,
            padding=args.kernel // 2, rng=rng.fork(100), dtype=np.float32)))
        for n in ns:
            layers.append((f"conv", xc, lambda n=n: KroneckerConv2d(
                args.in_features, args.out_features, args.kernel, n,
                padding=args.kernel // 2, rng=rng.fork(100 + n),
                dtype=np.float32)))
    for label, x, factory in layers:
        layer = factory()
        n = getattr(layer, "n", 1)
        kind = layer.kind
        reset_mac_count()
        layer(x)
        macs = mac_count()
        times = []
        for _ in range(args.reps):
            t0 = time.perf_counter()
            layer(x)
            times.append(time.perf_counter() - t0)
        rows.append({"layer": label, "kind": kind, "n": n,
                     "params": layer.param_count(), "macs": macs,
                     "median_ms": round(float(np.median(times)) * 1e3, 4)})
    return rows


def cmd_bench(args) -> int:
    if args.reps < 3:
        raise ConfigError(f"reps must be >= 3, got {args.reps}")
    rows = _bench_rows(args)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["layer", "kind", "n", "params",
                                             "macs", "median_ms"])
    writer.writeheader()
    writer.writerows(rows)
    text = buf.getvalue()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return 0


# ----------------------------------------------------------------- parser

def build_parser() -> _Parser:
    parser = _Parser(prog="kronmri", formatter_class=_fmt,
                     description="Kronecker-factorized layers and a small "
                                 "MRI reconstruction pipeline.")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("gen-data", formatter_class=_fmt,
                       help="generate a synthetic phantom dataset as KTEN files")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=8, help="number of samples")
    p.add_argument("--seed", type=int, default=0, help="dataset seed")
    p.add_argument("--af", type=int, default=8, choices=(8, 16),
                   help="acceleration factor")
    p.add_argument("--height", type=int, default=64, help="phantom height")
    p.add_argument("--width", type=int, default=64, help="phantom width")
    p.add_argument("--ellipses", type=int, default=6,
                   help="ellipses per phantom")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("gen-mask", formatter_class=_fmt,
                       help="generate a Cartesian column mask")
    p.add_argument("--out", required=True, help="output KTEN path")
    p.add_argument("--width", type=int, default=320, help="mask width")
    p.add_argument("--af", type=int, default=8, choices=(8, 16),
                   help="acceleration factor")
    p.add_argument("--center-fraction", type=float, default=None,
                   help="fully sampled center fraction (default per AF)")
    p.add_argument("--seed", type=int, default=0, help="mask seed")
    p.add_argument("--pgm", default=None, help="also write a 0/1 PGM strip")
    p.set_defaults(func=cmd_gen_mask)

    p = sub.add_parser("train", formatter_class=_fmt,
                       help="train a reconstruction model on synthetic phantoms")
    p.add_argument("--out", default=None,
                   help="output directory (checkpoint, history, summary)")
    p.add_argument("--seed", type=int, default=0, help="run seed")
    p.add_argument("--steps", type=int, default=200, help="gradient steps")
    p.add_argument("--batch", type=int, default=4, help="batch size")
    p.add_argument("--af", type=int, default=8, choices=(8, 16),
                   help="acceleration factor")
    p.add_argument("--lr", type=float, default=2e-5, help="learning rate")
    p.add_argument("--layer-kind", default="kron",
                   choices=("dense", "kron", "kronecker"), help="conv flavor")
    p.add_argument("--n", type=int, default=2, help="hypercomplex dimension")
    p.add_argument("--base", type=int, default=8, help="base channel count")
    p.add_argument("--multiples", default="4,8,8",
                   help="comma-separated channel multiples")
    p.add_argument("--size", type=int, default=64, help="phantom side length")
    p.add_argument("--ellipses", type=int, default=6,
                   help="ellipses per phantom")
    p.add_argument("--dataset-size", type=int, default=32,
                   help="training samples")
    p.add_argument("--eval-every", type=int, default=0,
                   help="eval cadence in steps (0 = only at the end)")
    p.add_argument("--eval-size", type=int, default=8, help="held-out samples")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", formatter_class=_fmt,
                       help="reconstruct an image from k-space")
    p.add_argument("--input", required=True, help="k-space KTEN ([2, H, W])")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mask", default=None,
                   help="column mask KTEN to apply before reconstruction")
    p.add_argument("--checkpoint", default=None,
                   help="model checkpoint directory (default: zero-filled)")
    p.add_argument("--truth", default=None,
                   help="ground-truth image KTEN for metrics")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("metrics", formatter_class=_fmt,
                       help="PSNR/SSIM between two images")
    p.add_argument("--recon", required=True, help="reconstruction KTEN")
    p.add_argument("--truth", required=True, help="ground-truth KTEN")
    p.add_argument("--data-range", type=float, default=None,
                   help="dynamic range (default: truth magnitude peak)")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("count-params", formatter_class=_fmt,
                       help="dense vs kronecker parameter table for a config")
    p.add_argument("--config", required=True, help="model config JSON path")
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("verify-algebra", formatter_class=_fmt,
                       help="check mixing-matrix presets against their "
                            "multiplication tables")
    p.add_argument("--algebra", default="all",
                   choices=("complex", "quaternion", "all"),
                   help="preset to verify")
    p.add_argument("--trials", type=int, default=1000, help="random trials")
    p.add_argument("--seed", type=int, default=0, help="trial seed")
    p.add_argument("--tol", type=float, default=1e-10,
                   help="max allowed deviation")
    p.set_defaults(func=cmd_verify_algebra)

    p = sub.add_parser("grad-check", formatter_class=_fmt,
                       help="finite-difference gradient checks")
    p.add_argument("--target", default="all",
                   choices=("linear", "conv", "mlp", "attention", "loss",
                            "unet", "all"),
                   help="which graph to check")
    p.add_argument("--seed", type=int, default=0, help="draw seed")
    p.add_argument("--h", type=float, default=1e-6, help="difference step")
    p.add_argument("--tol", type=float, default=1e-4,
                   help="relative error tolerance")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("bench", formatter_class=_fmt,
                       help="exact MAC counts and median wall time per layer")
    p.add_argument("--layer", default="both",
                   choices=("linear", "conv", "both"), help="layer family")
    p.add_argument("--in-features", type=int, default=64,
                   help="input width/channels")
    p.add_argument("--out-features", type=int, default=64,
                   help="output width/channels")
    p.add_argument("--kernel", type=int, default=3, help="conv kernel size")
    p.add_argument("--spatial", type=int, default=32, help="conv input side")
    p.add_argument("--batch", type=int, default=4, help="batch size")
    p.add_argument("--n-list", default="1,2,4",
                   help="comma-separated kronecker dimensions")
    p.add_argument("--reps", type=int, default=5, help="timing repetitions")
    p.add_argument("--seed", type=int, default=0, help="input seed")
    p.add_argument("--out", default=None, help="also write CSV here")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ShapeError) as err:
        print(json.dumps({"error": type(err).__name__, "message": str(err)}),
              file=sys.stderr)
        return 2
    except NumericError as err:
        print(json.dumps({"error": "NumericError", "message": str(err)}),
              file=sys.stderr)
        return 3
    except OSError as err:
        print(json.dumps({"error": "OSError", "message": str(err)}),
              file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
