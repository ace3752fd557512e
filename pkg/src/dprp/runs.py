"""Run orchestration: dataset assembly, training, report files."""

from __future__ import annotations

import csv
import io
import json
import logging
import os

import numpy as np

from .checkpoint import save_checkpoint
from .config import DataConfig, RunConfig
from .data import (
    LabeledImageSet,
    gen_synthetic_raw,
    holdout_split,
    load_cifar10_raw,
    normalized,
)
from .layers import Model
from .metrics import model_account
from .regularization import LossConfig
from .tensor import precision
from .training import EpochRecord, TrainState, fit

log = logging.getLogger(__name__)

REPORT_HEADER = ["epoch", "L_app", "L_orth", "L_sort", "L_comp", "L_reg", "L_total", "lr", "params", "macs", "top1"]


def build_datasets(cfg: DataConfig) -> tuple[LabeledImageSet, LabeledImageSet]:
    """(train, held-out), both standardized with the training statistics."""
    if cfg.source == "synthetic":
        raw = gen_synthetic_raw(cfg.n_classes, cfg.per_class, cfg.size, cfg.seed, cfg.channels)
        return holdout_split(raw, cfg.heldout_fraction)
    raw = load_cifar10_raw(cfg.train_paths, cfg.limit_per_class)
    if not cfg.test_paths:
        return holdout_split(raw, cfg.heldout_fraction)
    train = normalized(raw)
    test = normalized(load_cifar10_raw(cfg.test_paths, cfg.limit_per_class), train.mean, train.std)
    return train, test


def new_state(cfg: RunConfig, loss_cfg: LossConfig) -> TrainState:
    """Model drawn from the run seed; every ablation arm starts from the same weights."""
    model = Model.build(cfg.layer_items(), cfg.data.input_shape, np.random.default_rng(cfg.sgd.seed))
    return TrainState.fresh(model, loss_cfg, cfg.sgd, cfg.prune)


def _num(x) -> str:
    return "" if x is None else repr(float(x)) if isinstance(x, float) else str(x)


def _csv_text(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def report_rows(records: list[EpochRecord]) -> list[list[str]]:
    rows = [REPORT_HEADER]
    for r in records:
        rows.append([_num(v) for v in (r.epoch, r.app, r.orth, r.sort, r.comp, r.reg, r.total, r.lr, r.params, r.macs, r.top1)])
    return rows


def rank_rows(records: list[EpochRecord], names: list[str]) -> list[list[str]]:
    return [["epoch", *names]] + [[str(r.epoch), *(str(r.ranks[n]) for n in names)] for r in records]


def sigma_rows(init_sigma: dict, records: list[EpochRecord]) -> list[list[str]]:
    rows = [["epoch", "layer", "index", "value"]]
    for epoch, sig in [(0, init_sigma)] + [(r.epoch, r.sigma) for r in records]:
        for name, vals in sig.items():
            rows.extend([str(epoch), name, str(i), repr(float(v))] for i, v in enumerate(vals))
    return rows


def _write(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def write_reports(out_dir, state: TrainState, records: list[EpochRecord], init_sigma: dict, extra: dict) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    names = [p.name for p in state.model.factorized()]
    _write(os.path.join(out_dir, "report.csv"), _csv_text(report_rows(records)))
    _write(os.path.join(out_dir, "ranks.csv"), _csv_text(rank_rows(records, names)))
    _write(os.path.join(out_dir, "sigma_trace.csv"), _csv_text(sigma_rows(init_sigma, records)))
    lines = [json.dumps(e.to_json(), sort_keys=True) for r in records for e in r.events]
    _write(os.path.join(out_dir, "events.jsonl"), "".join(l + "\n" for l in lines))
    acct = model_account(state.model)
    last = records[-1] if records else None
    summary = {
        "mode": state.loss_cfg.mode,
        "epochs": state.epoch,
        "top1": last.top1 if last else None,
        "top5": last.top5 if last else None,
        "ranks": {p.name: p.r for p in state.model.factorized()},
        "theta": {p.name: p.theta for p in state.model.factorized()},
        "events": len(lines),
        **acct.totals(),
        **extra,
    }
    _write(os.path.join(out_dir, "summary.json"), json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return summary


def run_training(cfg: RunConfig, loss_cfg: LossConfig | None = None, out_dir=None, datasets=None) -> dict:
    """Train one configuration and write every report plus the final checkpoint."""
    loss_cfg = loss_cfg or cfg.loss
    out_dir = out_dir or cfg.out_dir
    with precision(cfg.precision):
        train, test = datasets or build_datasets(cfg.data)
        state = new_state(cfg, loss_cfg)
        init_sigma = dict(state.init_sigma)
        extra = {
            "data": cfg.data.to_json(),
            "precision": cfg.precision,
            "normalization": {"mean": train.mean.tolist(), "std": train.std.tolist()},
        }
        every = cfg.sgd.checkpoint_every

        def on_epoch(st, rec):
            if rec.epoch % cfg.report_every == 0:
                log.info("[%s] epoch %d  params %d  top1 %.4f", loss_cfg.mode, rec.epoch, rec.params, rec.top1)
            if every and rec.epoch % every == 0:
                save_checkpoint(os.path.join(out_dir, f"checkpoint-epoch{rec.epoch:04d}"), st, extra)

        records = fit(state, train, test, on_epoch)
        save_checkpoint(os.path.join(out_dir, "checkpoint"), state, extra)
        summary = write_reports(out_dir, state, records, init_sigma, {"precision": cfg.precision})
    return {"state": state, "records": records, "summary": summary, "out_dir": out_dir}


def run_ablation(cfg: RunConfig, out_dir=None) -> list[dict]:
    """One fit per mode, sequentially, on the same data and initial weights."""
    out_dir = out_dir or cfg.out_dir
    with precision(cfg.precision):
        datasets = build_datasets(cfg.data)
    rows = []
    for mode in cfg.modes:
        res = run_training(cfg, cfg.loss_for(mode), os.path.join(out_dir, mode), datasets)
        s = res["summary"]
        rows.append({"mode": mode, "top1": s["top1"], "compression_pct": 100.0 * s["compression"], "macs": s["macs"]})
    table = [["mode", "top1", "compression_pct", "macs"]]
    table += [[r["mode"], _num(r["top1"]), _num(r["compression_pct"]), str(r["macs"])] for r in rows]
    os.makedirs(out_dir, exist_ok=True)
    _write(os.path.join(out_dir, "ablation.csv"), _csv_text(table))
    return rows
