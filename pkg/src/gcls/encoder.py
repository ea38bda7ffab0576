"""Relational graph convolutional encoder with mean-pool readout.

Each layer updates a node by averaging, per relation, the transformed
features of its in-neighbors, adding a self-loop transform, then
applying layer normalization, ReLU, and (between hidden layers during
training) dropout.  Relation weights are realized through a shared
basis decomposition, so the per-layer parameters are a small stack of
basis matrices plus per-relation mixing coefficients.

Readout is an arithmetic mean over each warp's node rows; a kernel
embedding is the mean of its warp embeddings.  A two-layer projection
head is used during contrastive training only.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, EmptyGraph, NoWarps, ShapeMismatch
from .features import GraphView
from .seeds import rng_for


@dataclass(slots=True)
class EncoderConfig:
    in_dim: int = 64
    hidden_dim: int = 128
    out_dim: int = 256
    n_layers: int = 3
    n_relations: int = 4
    n_bases: int = 2
    dropout_p: float = 0.1
    proj_hidden: int = 128
    proj_out: int = 64

    def validate(self) -> None:
        if self.in_dim != 64 or self.out_dim != 256:
            raise ConfigError("encoder input/output dims are fixed at 64/256")
        if self.n_relations != 4:
            raise ConfigError("the graph schema defines exactly 4 relations")
        if self.n_layers < 1 or self.n_bases < 1:
            raise ConfigError("n_layers and n_bases must be positive")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("dropout_p must lie in [0, 1)")

    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.in_dim] + [self.hidden_dim] * (self.n_layers - 1) + [self.out_dim]
        return list(zip(dims[:-1], dims[1:]))


@dataclass(slots=True)
class RgcnParams:
    config: EncoderConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def n_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()


def unfactored_parameter_count(config: EncoderConfig) -> int:
    """Size of a model storing one full weight matrix per relation."""
    total = 0
    for d_in, d_out in config.layer_dims():
        total += config.n_relations * d_in * d_out  # per-relation weights
        total += d_in * d_out  # self loop
        total += 2 * d_out  # layer norm
    total += config.proj_hidden * (config.out_dim + 1)
    total += config.proj_out * (config.proj_hidden + 1)
    return total


def init_params(config: EncoderConfig, seed: int) -> RgcnParams:
    """Uniform init on (-1/sqrt(fan_in), 1/sqrt(fan_in)); layer norm
    starts as identity; biases start at zero."""
    config.validate()
    rng = rng_for(seed, "init")

    def uniform(shape: tuple[int, ...], fan_in: int) -> Tensor:
        bound = 1.0 / np.sqrt(fan_in)
        return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

    tensors: dict[str, Tensor] = {}
    for k, (d_in, d_out) in enumerate(config.layer_dims()):
        tensors[f"layer{k}.basis"] = uniform((config.n_bases, d_in, d_out), d_in)
        tensors[f"layer{k}.coeff"] = uniform((config.n_relations, config.n_bases), config.n_bases)
        tensors[f"layer{k}.self"] = uniform((d_in, d_out), d_in)
        tensors[f"layer{k}.ln_gain"] = Tensor(np.ones(d_out), requires_grad=True)
        tensors[f"layer{k}.ln_bias"] = Tensor(np.zeros(d_out), requires_grad=True)
    tensors["proj.w1"] = uniform((config.out_dim, config.proj_hidden), config.out_dim)
    tensors["proj.b1"] = Tensor(np.zeros(config.proj_hidden), requires_grad=True)
    tensors["proj.w2"] = uniform((config.proj_hidden, config.proj_out), config.proj_hidden)
    tensors["proj.b2"] = Tensor(np.zeros(config.proj_out), requires_grad=True)
    return RgcnParams(config=config, tensors=tensors)


@dataclass(slots=True)
class _RelationPrep:
    """Edge bookkeeping for one relation of one view: edges sorted by
    destination so aggregation reduces over contiguous runs."""

    src: np.ndarray
    gather_plan: ad.GatherPlan
    run_starts: np.ndarray
    run_lengths: np.ndarray
    dst_rows: np.ndarray
    inv_degree: np.ndarray  # per-edge 1/|N_r(dst)| column


def prepare_relations(view: GraphView, n_relations: int) -> list[_RelationPrep | None]:
    preps: list[_RelationPrep | None] = []
    edges = view.edges
    for r in range(n_relations):
        mask = edges[:, 2] == r
        if not np.any(mask):
            preps.append(None)
            continue
        e = edges[mask]
        order = np.argsort(e[:, 1], kind="stable")
        src = e[order, 0]
        dst = e[order, 1]
        is_start = np.empty(dst.size, dtype=bool)
        is_start[0] = True
        np.not_equal(dst[1:], dst[:-1], out=is_start[1:])
        run_starts = np.flatnonzero(is_start)
        run_lengths = np.diff(np.append(run_starts, dst.size))
        dst_rows = dst[run_starts]
        inv_degree = (1.0 / np.repeat(run_lengths, run_lengths))[:, None]
        preps.append(
            _RelationPrep(
                src=src,
                gather_plan=ad.build_gather_plan(src),
                run_starts=run_starts,
                run_lengths=run_lengths,
                dst_rows=dst_rows,
                inv_degree=inv_degree,
            )
        )
    return preps


def rgcn_layer(
    h: Tensor,
    view: GraphView,
    params: RgcnParams,
    layer: int,
    train: bool,
    rng: np.random.Generator | None = None,
    preps: list[_RelationPrep | None] | None = None,
) -> Tensor:
    """One message-passing layer over a view (any number of warps)."""
    cfg = params.config
    if h.data.shape[0] != view.n_nodes:
        raise ShapeMismatch(
            f"feature rows {h.data.shape[0]} != node count {view.n_nodes}"
        )
    if preps is None:
        preps = prepare_relations(view, cfg.n_relations)
    out = ad.matmul(h, params[f"layer{layer}.self"])
    combined = ad.basis_combine(params[f"layer{layer}.coeff"], params[f"layer{layer}.basis"])
    for r, prep in enumerate(preps):
        if prep is None:
            continue
        w_r = ad.index_select0(combined, r)
        msgs = ad.matmul(ad.gather_rows(h, prep.src, prep.gather_plan), w_r)
        msgs = ad.cmul(msgs, prep.inv_degree)
        agg = ad.segment_sum_to(
            msgs, prep.run_starts, prep.run_lengths, prep.dst_rows, view.n_nodes
        )
        out = ad.add(out, agg)
    out = ad.layer_norm(out, params[f"layer{layer}.ln_gain"], params[f"layer{layer}.ln_bias"])
    out = ad.relu(out)
    if train and layer < cfg.n_layers - 1 and cfg.dropout_p > 0.0:
        out = ad.dropout(out, cfg.dropout_p, rng, train=True)
    return out


def encode_nodes(
    view: GraphView,
    params: RgcnParams,
    train: bool,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """All layers applied; returns the final node feature matrix."""
    if view.n_nodes == 0:
        raise EmptyGraph("cannot encode a view with no nodes")
    preps = prepare_relations(view, params.config.n_relations)
    h = Tensor(view.features)
    for k in range(params.config.n_layers):
        h = rgcn_layer(h, view, params, k, train, rng, preps)
    return h


def _warp_run_lengths(node_warp: np.ndarray) -> np.ndarray:
    """Lengths of the contiguous warp blocks in node row order."""
    if node_warp.size == 0:
        return np.zeros(0, dtype=np.int64)
    change = np.flatnonzero(node_warp[1:] != node_warp[:-1]) + 1
    bounds = np.concatenate(([0], change, [node_warp.size]))
    return np.diff(bounds)


def encode_warp(
    view: GraphView,
    params: RgcnParams,
    train: bool,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Mean-pooled embedding of a single-warp view (a 256-vector)."""
    h = encode_nodes(view, params, train, rng)
    return ad.mean_rows(h)


def merge_views(views: Sequence[GraphView]) -> GraphView:
    """Block-diagonal union of views; warp indices are re-based so every
    (input view, warp) pair stays distinct."""
    feats = np.concatenate([v.features for v in views], axis=0)
    kinds = np.concatenate([v.kinds for v in views], axis=0)
    edge_parts = []
    warp_parts = []
    node_offset = 0
    warp_offset = 0
    for v in views:
        e = v.edges.copy()
        e[:, 0] += node_offset
        e[:, 1] += node_offset
        edge_parts.append(e)
        if v.n_nodes:
            # Compact warp labels to 0..w-1 before re-basing.
            _, local = np.unique(v.node_warp, return_inverse=True)
            warp_parts.append(local + warp_offset)
            warp_offset += int(local.max()) + 1
        node_offset += v.n_nodes
    edges = np.concatenate(edge_parts, axis=0) if edge_parts else np.zeros((0, 3), dtype=np.int64)
    node_warp = (
        np.concatenate(warp_parts) if warp_parts else np.zeros(0, dtype=np.int64)
    )
    return GraphView(features=feats, edges=edges, node_warp=node_warp, kinds=kinds)


def encode_kernel(
    views: GraphView | Sequence[GraphView],
    params: RgcnParams,
    train: bool,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Kernel embedding: mean over warp embeddings (a 256-vector).

    Accepts either a merged multi-warp view or a sequence of per-warp
    views; the two are equivalent because no edges cross warps.
    """
    if not isinstance(views, GraphView):
        if len(views) == 0:
            raise NoWarps("kernel embedding requested for zero warps")
        views = merge_views(list(views))
    if views.n_nodes == 0:
        raise EmptyGraph("cannot encode a view with no nodes")
    h = encode_nodes(views, params, train, rng)
    lengths = _warp_run_lengths(views.node_warp)
    warp_means = ad.segment_mean_rows(h, lengths)
    return ad.mean_rows(warp_means)


def encode_batch(
    views: Sequence[GraphView],
    params: RgcnParams,
    train: bool,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Embeddings for a batch of kernel views as one (B, 256) tensor.

    The batch is processed as a single block-diagonal graph, which is
    mathematically identical to encoding each kernel alone.
    """
    if len(views) == 0:
        raise NoWarps("empty batch")
    merged = merge_views(list(views))
    if merged.n_nodes == 0:
        raise EmptyGraph("cannot encode a batch with no nodes")
    h = encode_nodes(merged, params, train, rng)
    warp_lengths = _warp_run_lengths(merged.node_warp)
    warp_means = ad.segment_mean_rows(h, warp_lengths)
    warps_per_kernel = np.array(
        [len(np.unique(v.node_warp)) for v in views], dtype=np.int64
    )
    return ad.segment_mean_rows(warp_means, warps_per_kernel)


def project(
    z: Tensor,
    params: RgcnParams,
    train: bool,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Projection head used only for the training objective."""
    single = z.data.ndim == 1
    if single:
        z = ad.reshape(z, (1, z.data.shape[0]))
    if z.data.shape[1] != params.config.out_dim:
        raise ShapeMismatch(f"projection expects {params.config.out_dim} columns")
    hidden = ad.relu(ad.add(ad.matmul(z, params["proj.w1"]), params["proj.b1"]))
    if train and params.config.dropout_p > 0.0:
        hidden = ad.dropout(hidden, params.config.dropout_p, rng, train=True)
    out = ad.add(ad.matmul(hidden, params["proj.w2"]), params["proj.b2"])
    if single:
        out = ad.reshape(out, (out.data.shape[1],))
    return out


# ---------------------------------------------------------------------------
# persistence


def save_checkpoint(
    path: str, params: RgcnParams, seed: int, config_hash: str, extra: dict | None = None
) -> None:
    """JSON header next to a raw little-endian float64 payload."""
    names = params.names()
    header = {
        "names": names,
        "shapes": {n: list(params[n].shape) for n in names},
        "seed": seed,
        "config_hash": config_hash,
        "encoder": asdict(params.config),
        "payload": os.path.basename(path) + ".bin",
    }
    if extra:
        header.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    payload = np.concatenate([params[n].data.reshape(-1) for n in names])
    payload.astype("<f8").tofile(path + ".bin")


def load_checkpoint(path: str) -> tuple[RgcnParams, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        header = json.load(fh)
    config = EncoderConfig(**header["encoder"])
    payload_path = os.path.join(os.path.dirname(os.path.abspath(path)), header["payload"])
    flat = np.fromfile(payload_path, dtype="<f8").astype(np.float64)
    params = RgcnParams(config=config)
    offset = 0
    for name in header["names"]:
        shape = tuple(header["shapes"][name])
        size = int(np.prod(shape)) if shape else 1
        params.tensors[name] = Tensor(
            flat[offset : offset + size].reshape(shape), requires_grad=True
        )
        offset += size
    if offset != flat.size:
        raise ConfigError(f"checkpoint payload size {flat.size} != header total {offset}")
    return params, header


def write_embeddings(path: str, launch_ids: Sequence[int], z: np.ndarray) -> None:
    """One JSON record per kernel: {"launch_id": .., "z": [256 reals]}."""
    with open(path, "w", encoding="utf-8") as fh:
        for lid, row in zip(launch_ids, z):
            fh.write(json.dumps({"launch_id": int(lid), "z": [float(x) for x in row]}))
            fh.write("\n")


def read_embeddings(path: str) -> tuple[list[int], np.ndarray]:
    ids: list[int] = []
    rows: list[list[float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            ids.append(int(rec["launch_id"]))
            rows.append([float(x) for x in rec["z"]])
    return ids, np.asarray(rows, dtype=np.float64)
