"""Node feature initialization and contrastive view augmentation.

Every node gets a fixed 64-column feature row built from frozen,
seed-derived random embedding tables: instruction rows combine a
48-dim opcode embedding with a 16-dim sinusoidal encoding of the
normalized program counter; variable rows combine a 32-dim category
embedding with an 8-dim statistical summary of their recorded values;
pseudo rows carry a 16-dim embedding.  Shorter rows are zero-padded.

Views for contrastive training are produced by applying one or two of
three augmentations (node dropping, edge dropping, feature noise) to
the graph and its feature matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import RELATION_IDS, NodeKind, TraceGraph
from .seeds import rng_for
from .tokens import TokenRegistry

FEATURE_DIM = 64
INSTR_EMBED_DIM = 48
PC_ENCODING_DIM = 16
VAR_EMBED_DIM = 32
STATS_DIM = 8
PSEUDO_EMBED_DIM = 16

NODE_KIND_CODES = {NodeKind.INSTR: 0, NodeKind.PSEUDO: 1, NodeKind.VAR: 2}

DEFAULT_NODE_DROP_P = 0.15
DEFAULT_EDGE_DROP_P = 0.15
DEFAULT_NOISE_SIGMA = 0.01


def stats_summary(values) -> np.ndarray:
    """8-dim summary of a value multiset after a signed-log transform.

    Returns [mean, std, median, min, max, p25, p75, skewness] of
    sign(v) * ln(1 + |v|).  The std is the population std, skewness is
    the Fisher-Pearson moment coefficient (0 for constant input), and
    an empty multiset maps to the zero vector.
    """
    v = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=np.float64)
    if v.size == 0:
        return np.zeros(STATS_DIM)
    t = np.sign(v) * np.log1p(np.abs(v))
    mean = t.mean()
    centered = t - mean
    m2 = np.mean(centered**2)
    std = np.sqrt(m2)
    skew = 0.0 if m2 == 0.0 else float(np.mean(centered**3) / m2**1.5)
    return np.array(
        [
            mean,
            std,
            np.median(t),
            t.min(),
            t.max(),
            np.percentile(t, 25),
            np.percentile(t, 75),
            skew,
        ]
    )


def sinusoidal_encoding(x: float, dim: int = PC_ENCODING_DIM) -> np.ndarray:
    """Interleaved sin/cos at frequencies pi * 2^j, j = 0..dim/2-1."""
    out = np.empty(dim)
    for j in range(dim // 2):
        freq = np.pi * (2.0**j)
        out[2 * j] = np.sin(freq * x)
        out[2 * j + 1] = np.cos(freq * x)
    return out


def _embedding_table(seed: int, namespace: str, n_tokens: int, dim: int) -> np.ndarray:
    rng = rng_for(seed, "embed", namespace)
    return rng.standard_normal((n_tokens, dim))


def featurize_graph(graph: TraceGraph, registry: TokenRegistry, seed: int) -> np.ndarray:
    """Feature matrix with one 64-dim row per node, in node id order."""
    instr_table = _embedding_table(seed, "instr", registry.n_opcodes, INSTR_EMBED_DIM)
    var_table = _embedding_table(seed, "var", len(registry.var_categories), VAR_EMBED_DIM)
    pseudo_table = _embedding_table(seed, "pseudo", len(registry.pseudo_ops), PSEUDO_EMBED_DIM)

    pcs = [n.pc for n in graph.nodes if n.kind is NodeKind.INSTR]
    pc_min = min(pcs) if pcs else 0
    pc_max = max(pcs) if pcs else 0
    pc_span = float(pc_max - pc_min + 1)

    feats = np.zeros((graph.n_nodes, FEATURE_DIM))
    for n in graph.nodes:
        row = feats[n.node_id]
        if n.kind is NodeKind.INSTR:
            row[:INSTR_EMBED_DIM] = instr_table[n.opcode]
            pc_norm = (n.pc - pc_min) / pc_span
            row[INSTR_EMBED_DIM : INSTR_EMBED_DIM + PC_ENCODING_DIM] = sinusoidal_encoding(pc_norm)
        elif n.kind is NodeKind.VAR:
            row[:VAR_EMBED_DIM] = var_table[n.category]
            row[VAR_EMBED_DIM : VAR_EMBED_DIM + STATS_DIM] = stats_summary(n.values)
        else:
            row[:PSEUDO_EMBED_DIM] = pseudo_table[n.pseudo]
    return feats


@dataclass(slots=True)
class GraphView:
    """Augmented (graph structure, feature matrix) pair fed to the encoder.

    Structure is held as flat arrays: `edges` has one (src, dst,
    relation id) row per edge, `node_warp` maps each node row to its
    warp index.  Node order never changes relative order, so the rows
    of one warp stay contiguous.
    """

    features: np.ndarray
    edges: np.ndarray
    node_warp: np.ndarray
    kinds: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def copy(self) -> "GraphView":
        return GraphView(
            features=self.features.copy(),
            edges=self.edges.copy(),
            node_warp=self.node_warp.copy(),
            kinds=self.kinds.copy(),
        )


def base_view(graph: TraceGraph, features: np.ndarray) -> GraphView:
    """Unaugmented view over a graph and its feature matrix."""
    edges = np.zeros((graph.n_edges, 3), dtype=np.int64)
    for i, (s, d, r) in enumerate(graph.edges):
        edges[i, 0] = s
        edges[i, 1] = d
        edges[i, 2] = RELATION_IDS[r]
    node_warp = np.zeros(graph.n_nodes, dtype=np.int64)
    for w, (lo, hi) in enumerate(graph.warp_spans):
        node_warp[lo:hi] = w
    kinds = np.array([NODE_KIND_CODES[n.kind] for n in graph.nodes], dtype=np.int8)
    return GraphView(features=features.copy(), edges=edges, node_warp=node_warp, kinds=kinds)


def node_drop(view: GraphView, p: float, rng: np.random.Generator) -> GraphView:
    """Remove exactly floor(p*n) nodes (at least one survives) along
    with their incident edges; surviving rows are compacted in order."""
    n = view.n_nodes
    k = min(int(np.floor(p * n)), n - 1)
    if k <= 0:
        return view.copy()
    dropped = rng.choice(n, size=k, replace=False)
    keep_mask = np.ones(n, dtype=bool)
    keep_mask[dropped] = False
    new_id = np.cumsum(keep_mask) - 1
    edge_mask = keep_mask[view.edges[:, 0]] & keep_mask[view.edges[:, 1]]
    edges = view.edges[edge_mask].copy()
    edges[:, 0] = new_id[edges[:, 0]]
    edges[:, 1] = new_id[edges[:, 1]]
    return GraphView(
        features=view.features[keep_mask].copy(),
        edges=edges,
        node_warp=view.node_warp[keep_mask].copy(),
        kinds=view.kinds[keep_mask].copy(),
    )


def edge_drop(view: GraphView, p: float, rng: np.random.Generator) -> GraphView:
    """Remove exactly floor(p*m) edges; the node set is untouched."""
    m = view.n_edges
    k = int(np.floor(p * m))
    if k <= 0:
        return view.copy()
    dropped = rng.choice(m, size=k, replace=False)
    keep_mask = np.ones(m, dtype=bool)
    keep_mask[dropped] = False
    out = view.copy()
    out.edges = view.edges[keep_mask].copy()
    return out


def feature_noise(view: GraphView, sigma: float, rng: np.random.Generator) -> GraphView:
    """Add i.i.d. N(0, sigma^2) to every feature entry."""
    out = view.copy()
    if sigma > 0:
        out.features = out.features + rng.normal(0.0, sigma, size=out.features.shape)
    return out


_AUGMENTATIONS = (
    lambda v, rng: node_drop(v, DEFAULT_NODE_DROP_P, rng),
    lambda v, rng: edge_drop(v, DEFAULT_EDGE_DROP_P, rng),
    lambda v, rng: feature_noise(v, DEFAULT_NOISE_SIGMA, rng),
)


def make_views(
    graph: TraceGraph, features: np.ndarray, rng: np.random.Generator
) -> tuple[GraphView, GraphView]:
    """Two independently augmented views of one kernel graph.

    For each view, one or two distinct strategies are drawn uniformly
    from {node drop, edge drop, feature noise} and applied in draw
    order.
    """
    base = base_view(graph, features)
    views = []
    for _ in range(2):
        k = int(rng.integers(1, 3))
        picks = rng.choice(len(_AUGMENTATIONS), size=k, replace=False)
        v = base
        for idx in picks:
            v = _AUGMENTATIONS[idx](v, rng)
        views.append(v)
    return views[0], views[1]
