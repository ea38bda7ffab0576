"""Shared helpers for the test suite: random trace generation, a
small-graph isomorphism check, and the dense message-passing oracle."""

from __future__ import annotations

from itertools import permutations

import numpy as np

from gcls.features import GraphView
from gcls.graph import NodeKind, TraceGraph
from gcls.trace import InstructionRecord

ALU_OPS = ["FADD", "FMUL", "IADD", "IMAD", "MOV", "ISETP", "SHF", "LOP3"]
LOAD_OPS = ["LDG", "LDS", "LDL"]
STORE_OPS = ["STG", "STS", "STL"]


def random_warp_records(
    rng: np.random.Generator,
    n_records: int,
    tb=(0, 0, 0),
    warp_id: int = 0,
    n_regs: int = 10,
) -> list[InstructionRecord]:
    """A random but well-formed warp trace over a small register pool."""
    records = []
    for i in range(n_records):
        mask = int(rng.integers(1, 2**16))
        lanes = bin(mask).count("1")
        roll = rng.random()
        if roll < 0.15:
            opcode = str(rng.choice(LOAD_OPS))
            srcs = (f"R{int(rng.integers(0, n_regs))}",)
            dests = (f"R{int(rng.integers(0, n_regs))}",)
            mem_width = 4
        elif roll < 0.3:
            opcode = str(rng.choice(STORE_OPS))
            srcs = tuple(f"R{int(rng.integers(0, n_regs))}" for _ in range(2))
            dests = ()
            mem_width = 4
        else:
            opcode = str(rng.choice(ALU_OPS))
            srcs = tuple(
                f"R{int(rng.integers(0, n_regs))}" for _ in range(int(rng.integers(0, 3)))
            )
            dests = (f"R{int(rng.integers(0, n_regs))}",) if rng.random() < 0.85 else ()
            if opcode == "ISETP":
                dests = (f"P{int(rng.integers(0, 2))}",)
            mem_width = 0
        n_operands = len(srcs) + (1 if mem_width else 0)
        values = tuple(int(v) for v in rng.integers(0, 2**24, size=n_operands * lanes))
        records.append(
            InstructionRecord(
                tb=tb,
                warp_id=warp_id,
                pc=0x100 + 16 * i,
                mask=mask,
                dest_regs=dests,
                opcode=opcode,
                src_regs=srcs,
                mem_width=mem_width,
                dynamic_values=values,
            )
        )
    return records


def random_view(rng, n_nodes, n_edges, dim=64, n_warps=1) -> GraphView:
    """A random multi-relational view with warp-local edges."""
    edges = np.column_stack(
        [
            rng.integers(0, n_nodes, size=n_edges),
            rng.integers(0, n_nodes, size=n_edges),
            rng.integers(0, 4, size=n_edges),
        ]
    ).astype(np.int64)
    bounds = (
        np.sort(rng.choice(np.arange(1, n_nodes), size=n_warps - 1, replace=False))
        if n_warps > 1
        else np.array([], dtype=int)
    )
    node_warp = np.zeros(n_nodes, dtype=np.int64)
    for w, b in enumerate(bounds):
        node_warp[b:] = w + 1
    if n_warps > 1:
        keep = node_warp[edges[:, 0]] == node_warp[edges[:, 1]]
        edges = edges[keep]
    return GraphView(
        features=rng.standard_normal((n_nodes, dim)),
        edges=edges,
        node_warp=node_warp,
        kinds=np.zeros(n_nodes, dtype=np.int8),
    )


def dense_layer_oracle(h: np.ndarray, view: GraphView, params, layer: int) -> np.ndarray:
    """Brute-force mean-aggregation layer:
    y_v = relu(ln(sum_r mean_{u in N_r(v)} W_r h_u + W_0 h_v))."""
    cfg = params.config
    n = view.n_nodes
    coeff = params[f"layer{layer}.coeff"].data
    basis = params[f"layer{layer}.basis"].data
    w = np.einsum("rb,bio->rio", coeff, basis)
    w0 = params[f"layer{layer}.self"].data
    out = h @ w0
    for v in range(n):
        for r in range(cfg.n_relations):
            srcs = [int(s) for s, d, rel in view.edges if d == v and rel == r]
            if not srcs:
                continue
            msgs = np.stack([h[s] @ w[r] for s in srcs])
            out[v] += msgs.mean(axis=0)
    gain = params[f"layer{layer}.ln_gain"].data
    bias = params[f"layer{layer}.ln_bias"].data
    mu = out.mean(axis=1, keepdims=True)
    var = out.var(axis=1, keepdims=True)
    normed = (out - mu) / np.sqrt(var + 1e-5) * gain + bias
    return np.maximum(normed, 0.0)


def _node_signature(graph: TraceGraph, nid: int) -> tuple:
    n = graph.nodes[nid]
    if n.kind is NodeKind.INSTR:
        return ("I", n.opcode, n.pc, n.mem_width)
    if n.kind is NodeKind.PSEUDO:
        return ("P", n.pseudo)
    return ("V", n.category, tuple(sorted(n.values)), n.has_writer)


def is_isomorphic(a: TraceGraph, b: TraceGraph) -> bool:
    """Exhaustive isomorphism check for tiny oracle graphs (< ~12 nodes).

    Node payloads must match under the mapping and the edge multisets
    (with relations) must correspond.
    """
    if a.n_nodes != b.n_nodes or a.n_edges != b.n_edges:
        return False
    sig_a = [_node_signature(a, i) for i in range(a.n_nodes)]
    sig_b = [_node_signature(b, i) for i in range(b.n_nodes)]
    if sorted(sig_a) != sorted(sig_b):
        return False
    edges_b = {}
    for s, d, r in b.edges:
        key = (s, d, r)
        edges_b[key] = edges_b.get(key, 0) + 1
    for perm in permutations(range(a.n_nodes)):
        if any(sig_a[i] != sig_b[perm[i]] for i in range(a.n_nodes)):
            continue
        mapped = {}
        for s, d, r in a.edges:
            key = (perm[s], perm[d], r)
            mapped[key] = mapped.get(key, 0) + 1
        if mapped == edges_b:
            return True
    return False
