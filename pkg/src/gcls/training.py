"""Contrastive training of the graph encoder.

Two augmented views of every kernel graph are encoded and projected,
and a symmetric InfoNCE objective pulls the two embeddings of the same
kernel together while pushing different kernels apart.  The loop is a
plain epoch/batch scheme with an 80/20 split, cosine-annealed AdamW,
global-norm gradient clipping, validation after every epoch, and
early stopping on the validation loss.

Every random decision (split, shuffles, views, dropout) draws from a
stream derived from the run seed, so a given config always reproduces
the same checkpoint bit for bit.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import OptimizerState, Tape, Tensor
from .encoder import EncoderConfig, RgcnParams, encode_batch, init_params, project
from .errors import ConfigError, NumericError, ShapeMismatch, TooFewKernels
from .features import make_views
from .graph import TraceGraph
from .seeds import rng_for


@dataclass(slots=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 100
    lr0: float = 7e-4
    temperature: float = 0.05
    split_ratio: float = 0.8
    seed: int = 0
    patience: int = 20
    grad_clip_norm: float = 1.0
    weight_decay: float = 0.01

    def validate(self) -> None:
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2")
        if self.temperature <= 0.0:
            raise ConfigError("temperature must be positive")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError("split_ratio must lie in (0, 1)")
        if self.epochs < 1 or self.patience < 1:
            raise ConfigError("epochs and patience must be positive")
        if self.lr0 <= 0.0:
            raise ConfigError("lr0 must be positive")


@dataclass(slots=True)
class DatasetSplit:
    train_ids: list[int]
    val_ids: list[int]


@dataclass(slots=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    wall_time: float


@dataclass(slots=True)
class TrainLog:
    entries: list[EpochStats] = field(default_factory=list)
    best_epoch: int = -1

    def save_jsonl(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(json.dumps(asdict(e)) + "\n")
            fh.write(json.dumps({"best_epoch": self.best_epoch}) + "\n")

    @classmethod
    def load_jsonl(cls, path: str) -> "TrainLog":
        log = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                if "best_epoch" in rec and "epoch" not in rec:
                    log.best_epoch = int(rec["best_epoch"])
                else:
                    log.entries.append(EpochStats(**rec))
        return log


@dataclass(slots=True)
class KernelSample:
    """One kernel ready for training: its graph and base features."""

    launch_id: int
    graph: TraceGraph
    features: np.ndarray


def split_dataset(launch_ids: Sequence[int], ratio: float, seed: int) -> DatasetSplit:
    """Uniform shuffle, first round(ratio*N) ids become the train set."""
    ids = list(launch_ids)
    n = len(ids)
    if n < 5:
        raise TooFewKernels(f"need at least 5 kernels to split, got {n}")
    order = rng_for(seed, "split").permutation(n)
    shuffled = [ids[i] for i in order]
    n_train = int(round(ratio * n))
    return DatasetSplit(train_ids=shuffled[:n_train], val_ids=shuffled[n_train:])


def infonce_loss(z1, z2, temperature: float) -> Tensor:
    """Symmetric InfoNCE over two batches of paired embeddings.

    Rows are L2-normalized, the scaled cosine similarity matrix is
    formed, and the mean cross-entropy of each row against its own
    diagonal entry is averaged over both matchmaking directions.
    Swapping the arguments yields a bitwise-identical value.
    """
    t1 = z1 if isinstance(z1, Tensor) else Tensor(z1)
    t2 = z2 if isinstance(z2, Tensor) else Tensor(z2)
    if t1.data.ndim != 2 or t1.data.shape != t2.data.shape or t1.data.shape[0] < 1:
        raise ShapeMismatch(f"embedding batches {t1.data.shape} vs {t2.data.shape}")
    if temperature <= 0.0:
        raise ConfigError("temperature must be positive")
    n1 = ad.l2_normalize_rows(t1)
    n2 = ad.l2_normalize_rows(t2)
    sim = ad.scale(ad.row_outer_dot(n1, n2), 1.0 / temperature)
    forward = ad.neg(ad.mean_all(ad.take_diag(ad.log_softmax_rows(sim))))
    reverse = ad.neg(ad.mean_all(ad.take_diag(ad.log_softmax_rows(ad.transpose(sim)))))
    return ad.scale(ad.add(forward, reverse), 0.5)


def _batches(ids: list[int], batch_size: int) -> list[list[int]]:
    """Consecutive batches; a size-1 remainder is dropped because a
    single kernel yields a vacuous contrastive loss."""
    out = [ids[i : i + batch_size] for i in range(0, len(ids), batch_size)]
    if out and len(out[-1]) < 2:
        out.pop()
    return out


def _batch_loss(
    samples: dict[int, KernelSample],
    batch_ids: list[int],
    params: RgcnParams,
    config: TrainConfig,
    train: bool,
    view_rng_for_id,
    dropout_rng: np.random.Generator | None,
) -> Tensor:
    views1, views2 = [], []
    for lid in batch_ids:
        s = samples[lid]
        v1, v2 = make_views(s.graph, s.features, view_rng_for_id(lid))
        views1.append(v1)
        views2.append(v2)
    z1 = project(encode_batch(views1, params, train, dropout_rng), params, train, dropout_rng)
    z2 = project(encode_batch(views2, params, train, dropout_rng), params, train, dropout_rng)
    return infonce_loss(z1, z2, config.temperature)


def validate(
    val_samples: Sequence[KernelSample], params: RgcnParams, config: TrainConfig
) -> float:
    """Mean contrastive loss over the validation set.

    Views come from a fixed per-kernel stream (identical every epoch)
    and dropout is disabled, so the value is comparable across epochs.
    """
    samples = {s.launch_id: s for s in val_samples}
    ordered = sorted(samples)
    batches = _batches(ordered, config.batch_size)
    if not batches:
        return 0.0
    losses = []
    for batch_ids in batches:
        loss = _batch_loss(
            samples,
            batch_ids,
            params,
            config,
            train=False,
            view_rng_for_id=lambda lid: rng_for(config.seed, "val-views", lid),
            dropout_rng=None,
        )
        losses.append(float(loss.data))
    return float(np.mean(losses))


def clone_params(params: RgcnParams) -> RgcnParams:
    out = RgcnParams(config=params.config)
    for name, t in params.tensors.items():
        out.tensors[name] = Tensor(t.data.copy(), requires_grad=t.requires_grad)
    return out


def train(
    corpus: Sequence[KernelSample],
    config: TrainConfig,
    encoder_config: EncoderConfig | None = None,
) -> tuple[RgcnParams, TrainLog]:
    """Full training run; returns the best-validation checkpoint."""
    config.validate()
    enc_cfg = encoder_config or EncoderConfig()
    samples = {s.launch_id: s for s in corpus}
    split = split_dataset(sorted(samples), config.split_ratio, config.seed)
    val_samples = [samples[lid] for lid in split.val_ids]

    params = init_params(enc_cfg, config.seed)
    state = OptimizerState(lr0=config.lr0, weight_decay=config.weight_decay)
    log = TrainLog()
    best_val = np.inf
    best_params = clone_params(params)
    since_best = 0

    for epoch in range(config.epochs):
        started = time.perf_counter()
        lr = ad.cosine_lr(epoch, config.epochs, config.lr0)
        order = rng_for(config.seed, "shuffle", epoch).permutation(len(split.train_ids))
        shuffled = [split.train_ids[i] for i in order]
        batch_losses = []
        for b, batch_ids in enumerate(_batches(shuffled, config.batch_size)):
            try:
                params.zero_grad()
                with Tape() as tape:
                    loss = _batch_loss(
                        samples,
                        batch_ids,
                        params,
                        config,
                        train=True,
                        view_rng_for_id=lambda lid: rng_for(config.seed, "views", lid, epoch),
                        dropout_rng=rng_for(config.seed, "dropout", epoch, b),
                    )
                    ad.backward(tape, loss)
            except NumericError as err:
                raise type(err)(f"epoch {epoch} batch {b}: {err}") from err
            grads = {
                name: t.grad for name, t in params.tensors.items() if t.grad is not None
            }
            ad.clip_gradients(grads, config.grad_clip_norm)
            ad.adamw_step(params.tensors, grads, state, lr)
            batch_losses.append(float(loss.data))
        train_loss = float(np.mean(batch_losses)) if batch_losses else 0.0
        val_loss = validate(val_samples, params, config)
        log.entries.append(
            EpochStats(
                epoch=epoch,
                train_loss=train_loss,
                val_loss=val_loss,
                lr=lr,
                wall_time=time.perf_counter() - started,
            )
        )
        if val_loss < best_val:
            best_val = val_loss
            best_params = clone_params(params)
            log.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    return best_params, log
