"""Experiment runner: dataset generation, training, evaluation, and sweeps.

Every command reads one INI config (see config.py), writes its outputs under
--out, and drops the fully resolved config next to them so the run can be
reproduced bit-for-bit. Logs go to stderr; data only ever goes to files.

Exit codes: 0 success, 1 runtime failure, 2 config error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import evaluation, synth_data, trainer
from .config import ExperimentConfig, dump_config, load_config
from .errors import InvalidConfig, RobustXidError
from .weighting import compute_weight_state, delta_for_noise_fraction
from .errors import DegenerateLabels, DegenerateScores

log = logging.getLogger("robust_xid")

METHODS = ("xid", "weighted", "oracle")


def _fmt(x) -> str:
    return f"{x:.6g}" if isinstance(x, float) else str(x)


def _write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    lines += [",".join(_fmt(c) for c in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def _prepare_out(cfg: ExperimentConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.ini")
    return out


def _dataset_from_config(data_cfg) -> synth_data.SynthDataset:
    ds = synth_data.generate(data_cfg)
    if data_cfg.faulty_fraction > 0:
        ds = synth_data.inject_faulty_positives(ds, data_cfg.faulty_fraction, data_cfg.seed)
    return ds


def cmd_generate(cfg: ExperimentConfig, out_dir) -> Path:
    """Generate (and optionally corrupt) a dataset; write it plus a CSV summary."""
    out = _prepare_out(cfg, out_dir)
    ds = _dataset_from_config(cfg.data)
    path = out / "dataset.rxid"
    synth_data.save(ds, path)
    _write_csv(out / "summary.csv", ("id", "class", "faulty"),
               zip(ds.ids.tolist(), ds.labels.tolist(), ds.faulty.astype(int).tolist()))
    log.info("generated dataset: N=%d C=%d injected=%d -> %s",
             ds.n, ds.config.num_classes, int(ds.faulty.sum()), path)
    return path


def _eval_split_for(ds: synth_data.SynthDataset, cfg: ExperimentConfig):
    return synth_data.generate_eval_split(ds.config, cfg.eval.eval_per_class)


def cmd_train(cfg: ExperimentConfig, data_path, out_dir) -> Path:
    """Two-stage training on a dataset file; writes metrics.csv and a checkpoint."""
    out = _prepare_out(cfg, out_dir)
    ds = synth_data.load(data_path)
    split = _eval_split_for(ds, cfg)
    log.info("training: N=%d, %d+%d epochs, strategy=%s, weighting=%s soft=%s",
             ds.n, cfg.train.warmup_epochs, cfg.train.robust_epochs, cfg.train.strategy,
             cfg.train.enable_weighting, cfg.train.enable_soft_targets)
    state = trainer.train(ds, cfg.train, eval_data=split)
    trainer.metrics_to_csv(state.metrics, out / "metrics.csv")
    ckpt = out / "checkpoint.rxck"
    trainer.checkpoint_save(state, ckpt)
    last = state.metrics[-1] if state.metrics else None
    if last is not None:
        log.info("final: loss=%.4f r@1=%.3f r@5=%.3f", last.loss, last.r_at_1, last.r_at_5)
    return ckpt


def cmd_eval(cfg: ExperimentConfig, checkpoint_path, data_path, out_dir) -> dict:
    """Retrieval report, score histograms, and per-instance weight dump."""
    out = _prepare_out(cfg, out_dir)
    ds = synth_data.load(data_path)
    state = trainer.checkpoint_load(checkpoint_path)
    split = _eval_split_for(ds, cfg)

    gallery, _ = state.enc_v.forward(ds.x_v.astype(np.float64))
    queries, _ = state.enc_v.forward(split.x_v.astype(np.float64))
    r_at_k = {k: evaluation.retrieval_r_at_k(queries, split.labels, gallery, ds.labels, k)
              for k in (1, 5, 20)}
    per_class = evaluation.per_class_r_at_1(queries, split.labels, gallery, ds.labels)

    scores = np.einsum("nd,nd->n", state.bank_v.entries, state.bank_a.entries)
    try:
        auc = evaluation.faulty_detection_auc(scores, ds.faulty)
    except DegenerateLabels:
        auc = float("nan")

    report = evaluation.EvalReport(r_at_k=r_at_k, faulty_auc=auc, per_class_r_at_1=per_class)
    (out / "report.json").write_text(json.dumps(report.to_json_dict(), indent=2) + "\n")

    lo, hi, bins = cfg.eval.hist_min, cfg.eval.hist_max, cfg.eval.num_bins
    edges = np.linspace(lo, hi, bins + 1)
    total = evaluation.score_histogram(scores, bins, (lo, hi))
    flagged = evaluation.score_histogram(scores[ds.faulty], bins, (lo, hi))
    clean = evaluation.score_histogram(scores[~ds.faulty], bins, (lo, hi))
    _write_csv(out / "histograms.csv",
               ("bin_left", "bin_right", "count", "count_faulty", "count_clean"),
               zip(edges[:-1].tolist(), edges[1:].tolist(),
                   total.tolist(), flagged.tolist(), clean.tolist()))

    if state.weight_state is not None:
        weights = state.weight_state.weights
    else:
        try:
            weights = compute_weight_state(state.bank_v, state.bank_a,
                                           state.config.weight_params()).weights
        except DegenerateScores:
            weights = np.ones(ds.n)
    _write_csv(out / "weights.csv", ("id", "score", "weight", "faulty"),
               zip(ds.ids.tolist(), scores.tolist(), weights.tolist(),
                   ds.faulty.astype(int).tolist()))
    log.info("eval: r@1=%.3f r@5=%.3f r@20=%.3f auc=%s",
             r_at_k[1], r_at_k[5], r_at_k[20], _fmt(auc))
    return report.to_json_dict()


def _final_retrieval(state: trainer.TrainState) -> tuple[float, float]:
    last = state.metrics[-1]
    return last.r_at_1, last.r_at_5


def _train_cell(data_cfg, train_cfg, eval_per_class: int):
    ds = _dataset_from_config(data_cfg)
    split = synth_data.generate_eval_split(data_cfg, eval_per_class)
    state = trainer.train(ds, train_cfg, eval_data=split)
    return _final_retrieval(state)


def cmd_noise_curve(cfg: ExperimentConfig, fractions, num_seeds: int, out_dir) -> list:
    """Corruption-level curve comparing plain, weighted, and oracle-weighted runs.

    For each (fraction, seed) cell one dataset is generated and all three
    methods train on it; the weighted run centers its weight midpoint on the
    known fraction.
    """
    for f in fractions:
        if not 0.0 <= f <= 0.9:
            raise InvalidConfig(f"noise fractions must lie in [0, 0.9], got {f}")
    out = _prepare_out(cfg, out_dir)
    rows = []
    for fraction in fractions:
        for s in range(num_seeds):
            data_cfg = dataclasses.replace(cfg.data, faulty_fraction=fraction,
                                           seed=cfg.data.seed + s)
            seed = cfg.train.seed + s
            for method in METHODS:
                overrides = {"seed": seed, "enable_soft_targets": False, "strategy": "onehot"}
                if method == "xid":
                    overrides.update(enable_weighting=False, oracle_weighting=False)
                elif method == "weighted":
                    overrides.update(
                        enable_weighting=True, oracle_weighting=False,
                        delta=delta_for_noise_fraction(fraction) if fraction > 0 else cfg.train.delta)
                else:
                    overrides.update(enable_weighting=True, oracle_weighting=True)
                train_cfg = dataclasses.replace(cfg.train, **overrides)
                r1, r5 = _train_cell(data_cfg, train_cfg, cfg.eval.eval_per_class)
                rows.append((fraction, method, seed, r1, r5))
                log.info("noise_curve: fraction=%.2f method=%s seed=%d r@1=%.3f r@5=%.3f",
                         fraction, method, seed, r1, r5)
    _write_csv(out / "noise_curve.csv",
               ("fraction", "method", "seed", "r_at_1", "r_at_5"), rows)
    return rows


SWEEP_PARAMS = ("delta", "lambda")


def cmd_sweep(cfg: ExperimentConfig, param: str, values, num_seeds: int, out_dir) -> list:
    """One training run per value of a weight/softening hyper-parameter.

    The configured mode is kept as-is; only the swept field changes, so a
    delta sweep should be configured as mode=weighted and a lambda sweep as
    mode=soft (or robust).
    """
    if param not in SWEEP_PARAMS:
        raise InvalidConfig(f"unknown sweep parameter {param!r}; pick from {SWEEP_PARAMS}")
    field_name = "lam" if param == "lambda" else param
    out = _prepare_out(cfg, out_dir)
    rows = []
    for value in values:
        for s in range(num_seeds):
            data_cfg = dataclasses.replace(cfg.data, seed=cfg.data.seed + s)
            seed = cfg.train.seed + s
            train_cfg = dataclasses.replace(cfg.train, seed=seed, **{field_name: value})
            r1, r5 = _train_cell(data_cfg, train_cfg, cfg.eval.eval_per_class)
            rows.append((param, value, seed, r1, r5))
            log.info("sweep: %s=%.3g seed=%d r@1=%.3f r@5=%.3f", param, value, seed, r1, r5)
    _write_csv(out / "sweep.csv", ("param", "value", "seed", "r_at_1", "r_at_5"), rows)
    return rows


def _float_list(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise InvalidConfig(f"cannot parse float list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robust-xid",
                                     description="Robust cross-modal instance discrimination experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False):
        p.add_argument("--config", type=Path, default=None, help="INI experiment config")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        if data:
            p.add_argument("--data", type=Path, required=True, help="dataset file")

    common(sub.add_parser("generate", help="generate a synthetic dataset file"))
    common(sub.add_parser("train", help="train on a dataset file"), data=True)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("checkpoint", type=Path)
    common(p_eval, data=True)

    p_curve = sub.add_parser("noise_curve", help="faulty-positive fraction curve")
    common(p_curve)
    p_curve.add_argument("--fractions", type=str, default="0,0.1,0.2,0.3,0.5")
    p_curve.add_argument("--num-seeds", type=int, default=3)

    p_sweep = sub.add_parser("sweep", help="hyper-parameter sweep")
    common(p_sweep)
    p_sweep.add_argument("--param", choices=SWEEP_PARAMS, required=True)
    p_sweep.add_argument("--values", type=str, required=True)
    p_sweep.add_argument("--num-seeds", type=int, default=3)
    return parser


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        if args.command == "generate":
            cfg.data = dataclasses.replace(cfg.data, seed=args.seed)
        else:
            cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
    return cfg


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        out_dir = args.out if args.out is not None else Path(cfg.output.dir)
        if args.command == "generate":
            cmd_generate(cfg, out_dir)
        elif args.command == "train":
            cmd_train(cfg, args.data, out_dir)
        elif args.command == "eval":
            cmd_eval(cfg, args.checkpoint, args.data, out_dir)
        elif args.command == "noise_curve":
            cmd_noise_curve(cfg, _float_list(args.fractions), args.num_seeds, out_dir)
        elif args.command == "sweep":
            cmd_sweep(cfg, args.param, _float_list(args.values), args.num_seeds, out_dir)
    except InvalidConfig as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (RobustXidError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
