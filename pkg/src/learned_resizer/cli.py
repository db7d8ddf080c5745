"""Command-line entry point: ``learned-resizer <command> [flags]``.

Configuration is resolved as defaults < ``--config`` JSON < flags. A
``.jsonl`` training log is accepted as ``--config`` as well; its header
record carries the resolved configuration of the run that wrote it.
"""
import argparse
import json
import logging
import os
import sys

import numpy as np

from . import checkpoint as ckpt_io
from . import data as D
from .baselines import MiniClassifier, MiniIqaHead
from .gradcheck import run_suite
from .optim import TrainConfig, TrainingDiverged, evaluate, finetune_resizer, train_joint
from .resizer import ResizerConfig, build, flops_estimate, format_gflops, format_thousands, param_count
from .tensor import Tensor, bilinear_resize, no_grad

log = logging.getLogger("learned_resizer")

DEFAULTS = {
    "task": "classify",
    "data": "synthetic_texture",
    "mode": "joint",
    "seed": 0,
    "r": 1,
    "n": 16,
    "in_size": None,
    "out_size": [16, 16],
    "batch_size": 32,
    "epochs": 4,
    "base_lr": None,
    "momentum": 0.9,
    "decay_rate": 0.94,
    "decay_every_epochs": 2,
    "nesterov": False,
    "probability_head": "softmax",
    "label_smoothing": 0.1,
    "pre_resize": "bilinear",
    "eval_every": 0,
    "baseline_width": 16,
    "num_classes": None,
    "n_per_class": 1000,
    "val_per_class": 250,
    "iqa_train": 1000,
    "iqa_val": 300,
    "image_size": 32,
    "cifar_subset": 10000,
    "val_fraction": 0.2,
}

GRAD_TOL = 1e-3


class UsageError(Exception):
    pass


def _size(value):
    if value is None:
        return None
    if isinstance(value, (list, tuple)):
        if len(value) != 2:
            raise UsageError(f"size must be N or [H, W], got {value!r}")
        return [int(value[0]), int(value[1])]
    text = str(value).lower()
    if "x" in text:
        h, w = text.split("x", 1)
        return [int(h), int(w)]
    return [int(text), int(text)]


def _read_config(path):
    if path is None:
        return {}
    try:
        with open(path) as f:
            if path.endswith(".jsonl"):
                header = json.loads(f.readline())
                return dict(header.get("cli_config") or {})
            return json.load(f)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc


def resolve_config(args):
    cfg = dict(DEFAULTS)
    file_cfg = _read_config(getattr(args, "config", None))
    unknown = set(file_cfg) - set(DEFAULTS)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    cfg.update(file_cfg)
    for key in ("seed", "mode", "r", "n", "in_size", "out_size", "batch_size", "epochs", "data"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    cfg["in_size"] = _size(cfg["in_size"])
    cfg["out_size"] = _size(cfg["out_size"])
    if cfg["in_size"] is not None and (cfg["in_size"][0] < cfg["out_size"][0] or cfg["in_size"][1] < cfg["out_size"][1]):
        raise UsageError(
            f"--in-size {cfg['in_size']} is smaller than --out-size {cfg['out_size']}; "
            "the resizer input must be at least its output resolution"
        )
    return cfg


# ------------------------------------------------------------------- data


def load_datasets(cfg):
    """``(train, val)`` for the configured data source."""
    src, seed = cfg["data"], cfg["seed"]
    size = cfg["image_size"]
    if src == "synthetic_texture":
        return (D.gen_texture_dataset(cfg["n_per_class"], size, seed=seed * 2 + 1),
                D.gen_texture_dataset(cfg["val_per_class"], size, seed=seed * 2 + 2, split="val"))
    if src == "synthetic_iqa":
        return (D.gen_iqa_dataset(cfg["iqa_train"], seed=seed * 2 + 1, size=size),
                D.gen_iqa_dataset(cfg["iqa_val"], seed=seed * 2 + 2, size=size, split="val"))
    path = src[len("cifar10:"):] if src.startswith("cifar10:") else src
    if not os.path.isdir(path):
        raise UsageError(f"--data {src!r}: expected synthetic_texture, synthetic_iqa, cifar10:<dir> or a directory")
    if src.startswith("cifar10:") or os.path.exists(os.path.join(path, "data_batch_1.bin")):
        train = D.load_cifar10(path, "train")
        val = D.load_cifar10(path, "test")
        if cfg["cifar_subset"]:
            train = train.subset(np.arange(min(cfg["cifar_subset"], len(train))))
        return train, val
    if os.path.isdir(os.path.join(path, "train")) and os.path.isdir(os.path.join(path, "val")):
        return D.load_png_dir(os.path.join(path, "train")), D.load_png_dir(os.path.join(path, "val"), "val")
    ds = D.load_png_dir(path)
    order = np.random.default_rng(seed).permutation(len(ds))
    n_val = max(1, int(round(cfg["val_fraction"] * len(ds))))
    return ds.subset(order[n_val:], "train"), ds.subset(order[:n_val], "val")


def _baseline_for(cfg, train, seed):
    if cfg["task"] == "iqa":
        return MiniIqaHead(width=cfg["baseline_width"], seed=seed)
    k = cfg["num_classes"] or train.num_classes
    return MiniClassifier(num_classes=k, width=cfg["baseline_width"], seed=seed)


def _train_config(cfg, finetune=False):
    base_lr = cfg["base_lr"] if cfg["base_lr"] is not None else (0.005 if finetune else 0.05)
    return TrainConfig(
        base_lr=base_lr, momentum=cfg["momentum"], decay_rate=cfg["decay_rate"],
        decay_every_epochs=cfg["decay_every_epochs"], batch_size=cfg["batch_size"], epochs=cfg["epochs"],
        seed=cfg["seed"], mode=cfg["mode"], nesterov=cfg["nesterov"], task=cfg["task"],
        probability_head=cfg["probability_head"], label_smoothing=cfg["label_smoothing"],
        pre_resize=cfg["pre_resize"], in_size=cfg["in_size"], out_size=cfg["out_size"],
        eval_every=cfg["eval_every"],
    )


def _setup_outdir(out):
    if not out:
        raise UsageError("--out DIR is required")
    os.makedirs(out, exist_ok=True)
    handler = logging.FileHandler(os.path.join(out, "train_log.txt"), mode="w")
    handler.setFormatter(logging.Formatter("%(message)s"))
    logging.getLogger("learned_resizer").addHandler(handler)
    return handler


def _save(out, resizer, baseline, cfg, history, seed):
    ckpt = ckpt_io.from_models(
        resizer, baseline,
        step=len(history.step_losses), lr=history.records[-1]["lr"] if history.records else None,
        seed=seed, probability_head=cfg["probability_head"], task=cfg["task"], mode=cfg["mode"],
    )
    path = os.path.join(out, "checkpoint.rsz")
    ckpt_io.save(path, ckpt)
    return path


# --------------------------------------------------------------- commands


def cmd_count_params(args):
    cfg = ResizerConfig(args.r if args.r is not None else 1, args.n if args.n is not None else 16)
    count = param_count(cfg)
    print(f"{count} ({format_thousands(count)})")
    return 0


def cmd_flops(args):
    out = _size(args.out_size or 224)
    inp = _size(args.in_size or out)
    if inp[0] < out[0] or inp[1] < out[1]:
        raise UsageError(f"--in-size {inp} is smaller than --out-size {out}; "
                         "the resizer input must be at least its output resolution")
    cfg = ResizerConfig(args.r if args.r is not None else 1, args.n if args.n is not None else 16, *out)
    flops = flops_estimate(cfg, *inp)
    print(f"{flops} ({format_gflops(flops)})")
    return 0


def cmd_train(args):
    cfg = resolve_config(args)
    handler = _setup_outdir(args.out)
    try:
        train, val = load_datasets(cfg)
        seed = cfg["seed"]
        baseline = _baseline_for(cfg, train, seed * 7 + 3)
        resizer = None
        if cfg["mode"] != "control_bilinear":
            resizer = build(ResizerConfig(cfg["r"], cfg["n"], *cfg["out_size"]), seed=seed * 7 + 5)
        tc = _train_config(cfg)
        history = train_joint(resizer, baseline, train, val, tc, log_path=os.path.join(args.out, "train_log.jsonl"),
                              extra_log={"cli_config": cfg})
        path = _save(args.out, resizer, baseline, cfg, history, seed)
        print(json.dumps({"checkpoint": path, "final_metrics": history.final_metrics}, sort_keys=True))
        return 0
    finally:
        logging.getLogger("learned_resizer").removeHandler(handler)


def cmd_finetune(args):
    if not args.ckpt:
        raise UsageError("finetune needs --ckpt with a trained resizer")
    cfg = resolve_config(args)
    if args.epochs is None and "epochs" not in _read_config(args.config):
        cfg["epochs"] = 4
    if cfg["mode"] != "joint":
        raise UsageError(f"finetune always trains jointly; --mode {cfg['mode']} is contradictory")
    src = ckpt_io.load(args.ckpt)
    expect = None
    if args.r is not None or args.n is not None:
        stored = src.metadata.get("resizer", {})
        expect = ResizerConfig(args.r or stored.get("r", 1), args.n or stored.get("n", 16), *cfg["out_size"])
    else:
        stored = src.metadata.get("resizer", {})
        expect = ResizerConfig(stored.get("r", 1), stored.get("n", 16), *cfg["out_size"])
    handler = _setup_outdir(args.out)
    try:
        train, val = load_datasets(cfg)
        if args.baseline_ckpt:
            baseline = ckpt_io.restore_baseline(ckpt_io.load(args.baseline_ckpt))
        else:
            baseline = _baseline_for(cfg, train, cfg["seed"] * 7 + 3)
        history = finetune_resizer(src, baseline, train, val, _train_config(cfg, finetune=True), expect=expect,
                                   log_path=os.path.join(args.out, "train_log.jsonl"))
        path = _save(args.out, history.models["resizer"], baseline, cfg, history, cfg["seed"])
        print(json.dumps({"checkpoint": path, "final_metrics": history.final_metrics}, sort_keys=True))
        return 0
    finally:
        logging.getLogger("learned_resizer").removeHandler(handler)


def cmd_eval(args):
    if not args.ckpt:
        raise UsageError("eval needs --ckpt")
    ck = ckpt_io.load(args.ckpt)
    cfg = resolve_config(args)
    cfg["task"] = ck.metadata.get("task", cfg["task"])
    cfg["probability_head"] = ck.metadata.get("probability_head", cfg["probability_head"])
    baseline = ckpt_io.restore_baseline(ck)
    resizer = None
    if "resizer" in ck.metadata:
        expect = None
        if args.out_size is not None:
            m = ck.metadata["resizer"]
            expect = ResizerConfig(m["r"], m["n"], *cfg["out_size"])
        resizer = ckpt_io.restore_resizer(ck, expect)
        cfg["out_size"] = [resizer.cfg.out_h, resizer.cfg.out_w]
    cfg["mode"] = "joint" if resizer is not None else "control_bilinear"
    _, val = load_datasets(cfg)
    tc = _train_config(cfg)
    in_size = tc.in_size or tuple(np.asarray(val.images[0]).shape[-2:])
    batcher = D.Batcher(val, D.PreResizeSpec(tc.pre_resize, *in_size), tc.batch_size)
    print(json.dumps(evaluate(resizer, baseline, batcher, tc, tuple(cfg["out_size"])), sort_keys=True))
    return 0


def _resize_inputs(path):
    if os.path.isfile(path):
        return [(os.path.basename(path), D.read_png(path))]
    if os.path.isdir(path):
        items = []
        for root, _, files in os.walk(path):
            for f in sorted(files):
                if f.lower().endswith(".png"):
                    full = os.path.join(root, f)
                    items.append((os.path.relpath(full, path), D.read_png(full)))
        if not items:
            raise UsageError(f"no PNG files under {path}")
        return sorted(items)
    raise UsageError(f"--data {path!r} is neither a PNG file nor a directory")


def cmd_resize(args):
    if not args.ckpt or not args.data or not args.out:
        raise UsageError("resize needs --ckpt, --data (PNG file or directory) and --out")
    ck = ckpt_io.load(args.ckpt)
    expect = None
    if args.out_size is not None:
        m = ck.metadata.get("resizer") or {}
        expect = ResizerConfig(m.get("r", 1), m.get("n", 16), *_size(args.out_size))
    resizer = ckpt_io.restore_resizer(ck, expect)
    training = not all(st.running_mean is not None for st in resizer.bn.values())
    written = 0
    with no_grad():
        for rel, img in _resize_inputs(args.data):
            out = resizer(Tensor(img[None]), training=training)
            target = os.path.join(args.out, rel)
            D.write_png(target, out.data[0])
            written += 1
    print(f"wrote {written} image(s) to {args.out}")
    return 0


def cmd_grad_check(args):
    results = run_suite(seed=args.seed or 0)
    worst = 0.0
    for name, err in results.items():
        status = "ok" if err < GRAD_TOL else "FAIL"
        print(f"{name:24s} max_rel_err={err:.3e} {status}")
        worst = max(worst, err)
    print(f"worst {worst:.3e} (tolerance {GRAD_TOL:g})")
    return 0 if worst < GRAD_TOL else 1


def cmd_gen_data(args):
    cfg = resolve_config(args)
    if not args.out:
        raise UsageError("gen-data needs --out DIR")
    if cfg["data"] not in ("synthetic_texture", "synthetic_iqa"):
        raise UsageError("gen-data supports --data synthetic_texture or synthetic_iqa")
    train, val = load_datasets(cfg)
    D.save_png_dir(train, os.path.join(args.out, "train"))
    D.save_png_dir(val, os.path.join(args.out, "val"))
    print(f"wrote {len(train)} train / {len(val)} val images to {args.out}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "resize": cmd_resize,
    "finetune": cmd_finetune,
    "count-params": cmd_count_params,
    "flops": cmd_flops,
    "grad-check": cmd_grad_check,
    "gen-data": cmd_gen_data,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="learned-resizer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--mode", choices=["joint", "resizer_frozen", "baseline_frozen", "control_bilinear"])
        p.add_argument("--r", type=int)
        p.add_argument("--n", type=int)
        p.add_argument("--in-size", dest="in_size")
        p.add_argument("--out-size", dest="out_size")
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--data")
        p.add_argument("--ckpt")
        p.add_argument("--out")
        if name == "finetune":
            p.add_argument("--baseline-ckpt", dest="baseline_ckpt")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    logging.getLogger("learned_resizer").setLevel(logging.INFO)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 3
    except (ckpt_io.CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
