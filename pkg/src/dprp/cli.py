"""``dprp`` command line: train, eval, analyze, ablate."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .checkpoint import load_checkpoint, read_manifest
from .config import DataConfig, load_config
from .data import LabeledImageSet, load_cifar10_raw, normalized
from .errors import DprpError, InputError, UsageError
from .metrics import model_account
from .runs import _csv_text, _num, build_datasets, run_ablation, run_training
from .tensor import precision
from .training import evaluate


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    res = run_training(cfg, out_dir=args.out)
    s = res["summary"]
    print(f"trained {s['epochs']} epochs ({s['mode']}): top1 {s['top1']:.4f}  params {s['trainable_params']}  "
          f"compression {100 * s['compression']:.2f}%  MACs {s['macs']}")
    print(f"reports in {res['out_dir']}")
    return 0


def _eval_data(manifest, spec: str, split: str) -> LabeledImageSet:
    if spec == "config":
        if "data" not in manifest:
            raise UsageError("checkpoint has no data section; pass a CIFAR-10 batch file to --data")
        train, test = build_datasets(DataConfig(**manifest["data"]))
        return train if split == "train" else test
    norm = manifest.get("normalization")
    raw = load_cifar10_raw([spec])
    if norm is None:
        return normalized(raw)
    return normalized(raw, np.asarray(norm["mean"]), np.asarray(norm["std"]))


def cmd_eval(args) -> int:
    with precision(read_manifest(args.ckpt).get("precision", 32)):
        state, manifest = load_checkpoint(args.ckpt)
        model = state.model
        ds = _eval_data(manifest, args.data, args.split)
        if ds.image_shape != tuple(model.input_shape):
            raise InputError(f"data shape {ds.image_shape} does not match model input {tuple(model.input_shape)}")
        out_dim = model.weight_layers()[-1].spec.shape
        if getattr(out_dim, "D2", ds.n_classes) != ds.n_classes:
            raise InputError(f"model has {out_dim.D2} outputs but the data has {ds.n_classes} classes")
        acc = evaluate(model, ds)
    acct = model_account(model)
    result = {
        "data": args.data,
        "split": args.split,
        "n": len(ds),
        "top1": acc["top1"],
        "top5": acc["top5"],
        "params": acct.trainable,
        "dense_params": acct.dense_total,
        "compression": acct.compression,
        "weight_compression": acct.weight_compression,
        "macs": acct.macs,
    }
    print(f"top-1        {result['top1']:.4f}")
    if result["top5"] is not None:
        print(f"top-5        {result['top5']:.4f}")
    print(f"params       {result['params']} (dense-equivalent {result['dense_params']})")
    print(f"compression  {100 * result['compression']:.4f}%")
    print(f"MACs         {result['macs']}")
    out = args.out or os.path.join(args.ckpt, f"eval-{args.split}.json")
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"json: {out}")
    return 0


ANALYZE_HEADER = ["layer", "kind", "h", "w", "theta", "r", "params", "dense_params", "compression", "macs", "mac_share", "sigma"]


def analysis_rows(state) -> list[list[str]]:
    acct = model_account(state.model)
    sig = {p.name: p.sigma.data for p in state.model.factorized()}
    total = acct.macs or 1
    rows = [ANALYZE_HEADER]
    for l in acct.layers:
        s = ";".join(repr(float(v)) for v in sig.get(l.name, []))
        rows.append([l.name, l.kind, str(l.h), str(l.w), str(l.theta), str(l.r), str(l.p_fact),
                     str(l.p_dense), _num(l.rate), str(l.macs), _num(l.macs / total), s])
    return rows


def cmd_analyze(args) -> int:
    state, _ = load_checkpoint(args.ckpt)
    rows = analysis_rows(state)
    out = args.out or os.path.join(args.ckpt, "analysis.csv")
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write(_csv_text(rows))
    print(f"{'layer':<8}{'theta':>6}{'r':>5}{'compr %':>10}{'MAC %':>8}  sigma")
    for r in rows[1:]:
        vals = [float(v) for v in r[11].split(";")] if r[11] else []
        shown = " ".join(f"{v:.3g}" for v in vals[:8]) + (" ..." if len(vals) > 8 else "")
        print(f"{r[0]:<8}{r[4]:>6}{r[5]:>5}{100 * float(r[8]):>10.2f}{100 * float(r[10]):>8.2f}  {shown}")
    print(f"csv: {out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    rows = run_ablation(cfg, args.out)
    print(f"{'mode':<10}{'top1':>8}{'compr %':>10}{'MACs':>12}")
    for r in rows:
        print(f"{r['mode']:<10}{r['top1']:>8.4f}{r['compression_pct']:>10.3f}{r['macs']:>12}")
    print(f"csv: {os.path.join(args.out or cfg.out_dir, 'ablation.csv')}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dprp", description="Rank-pruned SVD training of small CNNs.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", default="config", help="'config' (rebuild from the manifest) or a CIFAR-10 batch file")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--out", help="JSON output path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="per-layer rank and singular value report")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("ablate", help="train every regularization mode")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except DprpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
