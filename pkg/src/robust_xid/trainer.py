"""Two-stage training loop: plain contrastive warmup, then the robust stage.

The warmup stage optimizes the one-hot cross-modal loss with unit weights so
the memory banks accumulate meaningful correspondence scores. The robust
stage then, per epoch, refreshes sample weights from a bank snapshot (or the
ground-truth oracle when configured) and, per batch, mixes softened targets
into the loss before backprop, the Adam step, and the EMA bank update at the
batch indices.

Reference mode is single-threaded and bit-deterministic: one RNG stream
drives epoch shuffles and negative sampling, and its state travels inside
the checkpoint so a resumed run replays the exact remaining trajectory.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import evaluation, soft_targets
from .encoder import AdamState, MlpEncoder, cosine_lr
from .errors import (
    CorruptRecord,
    DegenerateScores,
    FormatError,
    InvalidConfig,
    VersionMismatch,
)
from .losses import batch_soft_xid
from .memory_bank import MemoryBank, ema_update_batch, init_bank, sample_negative_matrix
from .synth_data import SynthDataset
from .weighting import WeightParams, WeightState, compute_weight_state, oracle_weights

log = logging.getLogger(__name__)

STRATEGIES = ("onehot", "bootstrap", "swapped", "neighbor", "ccp", "oracle")
MODES = {
    "xid": (False, False),
    "weighted": (True, False),
    "soft": (False, True),
    "robust": (True, True),
}

CKPT_MAGIC = b"RXCK"
CKPT_VERSION = 1

METRICS_COLUMNS = ("epoch", "stage", "lr", "loss", "mean_weight_clean",
                   "mean_weight_faulty", "r_at_1", "r_at_5", "faulty_auc")


@dataclass
class TrainConfig:
    warmup_epochs: int = 100
    robust_epochs: int = 100
    batch_size: int = 128
    num_negatives: int = 256
    tau: float = 0.07
    tau_s: float = 0.02
    tau_t: float = 0.07
    lam: float = 0.5
    delta: float = -1.0
    kappa: float = 0.5
    w_min: float = 0.25
    strategy: str = "ccp"
    enable_weighting: bool = True
    enable_soft_targets: bool = True
    oracle_weighting: bool = False
    include_self_in_softening: bool = False
    lr_warmup: float = 1e-4
    lr_start: float = 1e-4
    lr_end: float = 1e-5
    seed: int = 0
    hidden_dim: int = 128
    embed_dim: int = 32
    bank_momentum: float = 0.5

    def weight_params(self) -> WeightParams:
        return WeightParams(delta=self.delta, kappa=self.kappa, w_min=self.w_min)

    def validate(self, n: int) -> None:
        if self.warmup_epochs < 0 or self.robust_epochs < 0:
            raise InvalidConfig("epoch counts must be non-negative")
        if not 0 < self.batch_size <= n:
            raise InvalidConfig(f"batch_size must lie in [1, {n}], got {self.batch_size}")
        if not 1 <= self.num_negatives <= n - 1:
            raise InvalidConfig(
                f"num_negatives must lie in [1, {n - 1}], got {self.num_negatives}")
        if self.strategy not in STRATEGIES:
            raise InvalidConfig(f"unknown strategy {self.strategy!r}")
        for name in ("tau", "tau_s", "tau_t"):
            if getattr(self, name) <= 0:
                raise InvalidConfig(f"{name} must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise InvalidConfig(f"lambda must lie in [0, 1], got {self.lam}")
        self.weight_params()  # validates kappa / w_min


@dataclass
class EpochMetrics:
    epoch: int
    stage: str
    lr: float
    loss: float
    mean_weight_clean: float
    mean_weight_faulty: float
    r_at_1: float
    r_at_5: float
    faulty_auc: float

    def row(self) -> list:
        return [getattr(self, c) for c in METRICS_COLUMNS]


@dataclass
class TrainState:
    config: TrainConfig
    enc_v: MlpEncoder
    enc_a: MlpEncoder
    opt_v: AdamState
    opt_a: AdamState
    bank_v: MemoryBank
    bank_a: MemoryBank
    rng: np.random.Generator
    epoch: int = 0
    weight_state: WeightState | None = None
    metrics: list[EpochMetrics] = field(default_factory=list)


def init_state(dataset: SynthDataset, config: TrainConfig) -> TrainState:
    config.validate(dataset.n)
    raw_dim = dataset.x_v.shape[1]
    kids = np.random.SeedSequence(config.seed).spawn(5)
    enc_v = MlpEncoder(raw_dim, config.hidden_dim, config.embed_dim, kids[0])
    enc_a = MlpEncoder(raw_dim, config.hidden_dim, config.embed_dim, kids[1])
    return TrainState(
        config=config,
        enc_v=enc_v,
        enc_a=enc_a,
        opt_v=AdamState.for_params(enc_v.params),
        opt_a=AdamState.for_params(enc_a.params),
        bank_v=init_bank(dataset.n, config.embed_dim, kids[2], config.bank_momentum, "video"),
        bank_a=init_bank(dataset.n, config.embed_dim, kids[3], config.bank_momentum, "audio"),
        rng=np.random.default_rng(kids[4]),
    )


def _current_weights(state: TrainState, n: int) -> np.ndarray:
    if state.weight_state is None:
        return np.ones(n)
    return state.weight_state.weights


def train_step(state: TrainState, dataset: SynthDataset, batch_indices,
               lr: float, stage: str = "robust") -> tuple[float, dict]:
    """One optimization step over a batch of instance indices.

    Warmup steps use unit weights and one-hot targets regardless of config;
    robust steps consult the mode flags. Returns the batch loss and a small
    metrics dict (mean weight, mean target entropy, batch size).
    """
    cfg = state.config
    idx = np.asarray(batch_indices, dtype=np.int64)
    x_v = dataset.x_v[idx].astype(np.float64)
    x_a = dataset.x_a[idx].astype(np.float64)
    v, cache_v = state.enc_v.forward(x_v)
    a, cache_a = state.enc_a.forward(x_a)

    negs = sample_negative_matrix(state.bank_v, idx, cfg.num_negatives, state.rng)
    cand = np.concatenate([idx[:, None], negs], axis=1)
    rows_v = state.bank_v.entries[cand]
    rows_a = state.bank_a.entries[cand]

    soften = (stage == "robust" and cfg.enable_soft_targets
              and cfg.strategy != "onehot" and cfg.lam > 0.0)
    if soften:
        s_v, s_a = soft_targets.softening_scores(
            cfg.strategy, rows_v, rows_a, cfg.tau_s, cfg.tau_t,
            base_labels=dataset.labels[idx],
            negative_labels=dataset.labels[negs],
            include_self=cfg.include_self_in_softening)
        t_v = soft_targets.mix_target_matrix(s_v, cfg.lam, cfg.include_self_in_softening)
        t_a = soft_targets.mix_target_matrix(s_a, cfg.lam, cfg.include_self_in_softening)
    else:
        t_v = np.zeros((idx.size, cfg.num_negatives + 1))
        t_v[:, 0] = 1.0
        t_a = t_v.copy()

    if stage == "robust":
        weights = _current_weights(state, dataset.n)[idx]
    else:
        weights = np.ones(idx.size)

    loss, dv, da, _ = batch_soft_xid(v, a, rows_v, rows_a, t_v, t_a, cfg.tau, weights)
    state.enc_v.apply_adam(state.enc_v.backward(cache_v, dv), state.opt_v, lr)
    state.enc_a.apply_adam(state.enc_a.backward(cache_a, da), state.opt_a, lr)
    ema_update_batch(state.bank_v, idx, v)
    ema_update_batch(state.bank_a, idx, a)

    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(t_v > 0, t_v * np.log(t_v), 0.0)
    entropy = float(-plogp.sum(axis=1).mean())
    return loss, {"mean_weight": float(weights.mean()),
                  "target_entropy": entropy,
                  "batch_size": int(idx.size)}


def _refresh_weights(state: TrainState, dataset: SynthDataset) -> None:
    cfg = state.config
    params = cfg.weight_params()
    if cfg.oracle_weighting:
        scores = np.einsum("nd,nd->n", state.bank_v.entries, state.bank_a.entries)
        state.weight_state = WeightState(
            weights=oracle_weights(dataset.faulty), scores=scores,
            score_mean=float("nan"), score_std=float("nan"), params=params)
        return
    if not cfg.enable_weighting:
        state.weight_state = None
        return
    try:
        state.weight_state = compute_weight_state(state.bank_v, state.bank_a, params)
    except DegenerateScores:
        log.warning("degenerate correspondence scores; using unit weights this epoch")
        scores = np.einsum("nd,nd->n", state.bank_v.entries, state.bank_a.entries)
        state.weight_state = WeightState(
            weights=np.ones(dataset.n), scores=scores,
            score_mean=float("nan"), score_std=float("nan"), params=params)


def _epoch_metrics(state: TrainState, dataset: SynthDataset, eval_data,
                   stage: str, lr: float, loss: float) -> EpochMetrics:
    weights = _current_weights(state, dataset.n)
    faulty = dataset.faulty
    clean_w = float(weights[~faulty].mean()) if (~faulty).any() else float("nan")
    faulty_w = float(weights[faulty].mean()) if faulty.any() else float("nan")

    r1 = r5 = float("nan")
    if eval_data is not None:
        q_x, q_labels = eval_data
        q_emb, _ = state.enc_v.forward(np.asarray(q_x, dtype=np.float64))
        g_emb, _ = state.enc_v.forward(dataset.x_v.astype(np.float64))
        r1 = evaluation.retrieval_r_at_k(q_emb, q_labels, g_emb, dataset.labels, 1)
        r5 = evaluation.retrieval_r_at_k(q_emb, q_labels, g_emb, dataset.labels, 5)

    auc = float("nan")
    if faulty.any() and (~faulty).any():
        scores = np.einsum("nd,nd->n", state.bank_v.entries, state.bank_a.entries)
        auc = evaluation.faulty_detection_auc(scores, faulty)

    return EpochMetrics(epoch=state.epoch + 1, stage=stage, lr=lr, loss=loss,
                        mean_weight_clean=clean_w, mean_weight_faulty=faulty_w,
                        r_at_1=r1, r_at_5=r5, faulty_auc=auc)


def _as_eval_pair(eval_data):
    if eval_data is None:
        return None
    if isinstance(eval_data, SynthDataset):
        return eval_data.x_v, eval_data.labels
    return eval_data


def _run_epoch(state: TrainState, dataset: SynthDataset, lr: float, stage: str,
               on_step: Callable | None) -> float:
    cfg = state.config
    perm = state.rng.permutation(dataset.n)
    total_loss = 0.0
    for start in range(0, dataset.n, cfg.batch_size):
        batch = perm[start:start + cfg.batch_size]
        loss, info = train_step(state, dataset, batch, lr, stage)
        total_loss += loss * info["batch_size"]
        if on_step is not None:
            on_step(state.epoch, start // cfg.batch_size, loss)
    return total_loss / dataset.n


def warmup(dataset: SynthDataset, config: TrainConfig, eval_data=None,
           on_step: Callable | None = None) -> TrainState:
    """Plain contrastive warmup from a fresh state; banks fill by EMA."""
    state = init_state(dataset, config)
    pair = _as_eval_pair(eval_data)
    while state.epoch < config.warmup_epochs:
        loss = _run_epoch(state, dataset, config.lr_warmup, "warmup", on_step)
        state.metrics.append(_epoch_metrics(state, dataset, pair, "warmup",
                                            config.lr_warmup, loss))
        state.epoch += 1
    return state


def robust_stage(state: TrainState, dataset: SynthDataset, config: TrainConfig,
                 eval_data=None, on_step: Callable | None = None) -> TrainState:
    """Weighted soft-target stage with a cosine learning-rate schedule.

    Continues from state.epoch, so a state restored mid-stage picks up the
    remaining epochs.
    """
    if state.epoch < config.warmup_epochs:
        raise InvalidConfig("robust stage requires a completed warmup")
    pair = _as_eval_pair(eval_data)
    total = config.warmup_epochs + config.robust_epochs
    denom = max(config.robust_epochs - 1, 1)
    while state.epoch < total:
        robust_epoch = state.epoch - config.warmup_epochs
        lr = cosine_lr(robust_epoch, denom, config.lr_start, config.lr_end)
        _refresh_weights(state, dataset)
        loss = _run_epoch(state, dataset, lr, "robust", on_step)
        state.metrics.append(_epoch_metrics(state, dataset, pair, "robust", lr, loss))
        state.epoch += 1
    return state


def train(dataset: SynthDataset, config: TrainConfig, eval_data=None,
          on_step: Callable | None = None) -> TrainState:
    """Full two-stage run."""
    state = warmup(dataset, config, eval_data, on_step)
    return robust_stage(state, dataset, config, eval_data, on_step)


def metrics_to_csv(rows: list[EpochMetrics], path) -> None:
    lines = [",".join(METRICS_COLUMNS)]
    for m in rows:
        cells = []
        for value in m.row():
            cells.append(f"{value:.6g}" if isinstance(value, float) else str(value))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


# --- checkpointing ---------------------------------------------------------

def _state_arrays(state: TrainState) -> dict[str, np.ndarray]:
    arrays = {}
    for tag, enc, opt in (("v", state.enc_v, state.opt_v), ("a", state.enc_a, state.opt_a)):
        for key, p in enc.params.items():
            arrays[f"enc_{tag}.{key}"] = p
            arrays[f"opt_{tag}.m.{key}"] = opt.m[key]
            arrays[f"opt_{tag}.v.{key}"] = opt.v[key]
    arrays["bank_v.entries"] = state.bank_v.entries
    arrays["bank_a.entries"] = state.bank_a.entries
    if state.weight_state is not None:
        arrays["weights.weights"] = state.weight_state.weights
        arrays["weights.scores"] = state.weight_state.scores
    return arrays


def checkpoint_save(state: TrainState, path) -> None:
    """Binary checkpoint: magic, version, JSON metadata, raw float64 arrays."""
    arrays = _state_arrays(state)
    manifest = [{"name": k, "shape": list(a.shape)} for k, a in arrays.items()]
    ws = state.weight_state
    meta = {
        "config": asdict(state.config),
        "epoch": state.epoch,
        "input_dim": state.enc_v.input_dim,
        "rng_state": state.rng.bit_generator.state,
        "opt_steps": [state.opt_v.step, state.opt_a.step],
        "bank_momentum": [state.bank_v.momentum, state.bank_a.momentum],
        "weight_state": None if ws is None else {
            "score_mean": ws.score_mean,
            "score_std": ws.score_std,
            "params": asdict(ws.params),
        },
        "metrics": [asdict(m) for m in state.metrics],
        "arrays": manifest,
    }
    blob = json.dumps(meta).encode()
    parts = [CKPT_MAGIC, struct.pack("<IQ", CKPT_VERSION, len(blob)), blob]
    parts += [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays.values()]
    Path(path).write_bytes(b"".join(parts))


def checkpoint_load(path) -> TrainState:
    blob = Path(path).read_bytes()
    head = len(CKPT_MAGIC) + struct.calcsize("<IQ")
    if len(blob) < head:
        raise FormatError("file too short for checkpoint header")
    if blob[:4] != CKPT_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}")
    version, meta_len = struct.unpack_from("<IQ", blob, 4)
    if version != CKPT_VERSION:
        raise VersionMismatch(f"unsupported checkpoint version {version}")
    try:
        meta = json.loads(blob[head:head + meta_len])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError("checkpoint metadata does not parse") from exc

    offset = head + meta_len
    arrays = {}
    for entry in meta["arrays"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * 8
        chunk = blob[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise CorruptRecord(f"array {entry['name']} truncated")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(blob):
        raise CorruptRecord("trailing bytes after final array")

    config = TrainConfig(**meta["config"])
    input_dim = meta["input_dim"]
    encs, opts = [], []
    for tag, step in zip(("v", "a"), meta["opt_steps"]):
        enc = MlpEncoder(input_dim, config.hidden_dim, config.embed_dim, seed=0)
        for key in enc.params:
            enc.params[key] = arrays[f"enc_{tag}.{key}"]
        opt = AdamState(m={k: arrays[f"opt_{tag}.m.{k}"] for k in enc.params},
                        v={k: arrays[f"opt_{tag}.v.{k}"] for k in enc.params},
                        step=step)
        encs.append(enc)
        opts.append(opt)

    ws = None
    if meta["weight_state"] is not None:
        w = meta["weight_state"]
        ws = WeightState(weights=arrays["weights.weights"], scores=arrays["weights.scores"],
                         score_mean=w["score_mean"], score_std=w["score_std"],
                         params=WeightParams(**w["params"]))

    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng_state"]
    return TrainState(
        config=config,
        enc_v=encs[0], enc_a=encs[1],
        opt_v=opts[0], opt_a=opts[1],
        bank_v=MemoryBank(arrays["bank_v.entries"], meta["bank_momentum"][0], "video"),
        bank_a=MemoryBank(arrays["bank_a.entries"], meta["bank_momentum"][1], "audio"),
        rng=rng,
        epoch=meta["epoch"],
        weight_state=ws,
        metrics=[EpochMetrics(**m) for m in meta["metrics"]],
    )
