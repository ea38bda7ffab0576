"""Heterogeneous relational graphs lifted from warp traces.

Each warp becomes a directed graph with three node kinds (instructions,
pseudo ops, variables) and four edge relations (control flow plus the
read/write/address data-flow edges).  Variables are versioned: a write
always creates a fresh variable node, and reads attach to the most
recent version, so every variable node has at most one incoming Write
edge.  A kernel graph is the disjoint union of its per-warp graphs with
no cross-warp edges.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .errors import DataError
from .tokens import TokenRegistry
from .trace import KernelTrace, WarpTrace

MEMORY_LINE_BYTES = 128


class NodeKind(str, Enum):
    INSTR = "Instr"
    PSEUDO = "Pseudo"
    VAR = "Var"


class Relation(str, Enum):
    CTRL = "Ctrl"
    READ = "Read"
    WRITE = "Write"
    ADDR = "Addr"


RELATIONS: tuple[Relation, ...] = (
    Relation.CTRL,
    Relation.READ,
    Relation.WRITE,
    Relation.ADDR,
)
RELATION_IDS: dict[Relation, int] = {r: i for i, r in enumerate(RELATIONS)}
N_RELATIONS = len(RELATIONS)


@dataclass(slots=True)
class GraphNode:
    node_id: int
    kind: NodeKind
    # Instr payload
    opcode: int | None = None
    pc: int | None = None
    mem_width: int | None = None
    # Pseudo payload
    pseudo: int | None = None
    # Var payload
    category: int | None = None
    values: tuple[int, ...] = ()
    has_writer: bool = False


@dataclass(slots=True)
class TraceGraph:
    nodes: list[GraphNode] = field(default_factory=list)
    edges: list[tuple[int, int, Relation]] = field(default_factory=list)
    warp_spans: list[tuple[int, int]] = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def validate(self) -> list[str]:
        """Check structural invariants; returns a list of violations."""
        problems: list[str] = []
        for i, node in enumerate(self.nodes):
            if node.node_id != i:
                problems.append(f"node {i} carries id {node.node_id}")

        def span_of(nid: int) -> int:
            for s, (lo, hi) in enumerate(self.warp_spans):
                if lo <= nid < hi:
                    return s
            return -1

        write_in: dict[int, int] = {}
        addr_touch: dict[int, int] = {}
        for src, dst, rel in self.edges:
            if not (0 <= src < self.n_nodes and 0 <= dst < self.n_nodes):
                problems.append(f"edge ({src},{dst}) out of range")
                continue
            if span_of(src) != span_of(dst) or span_of(src) < 0:
                problems.append(f"edge ({src},{dst}) crosses warp spans")
            if rel is Relation.WRITE:
                write_in[dst] = write_in.get(dst, 0) + 1
            if rel is Relation.ADDR:
                addr_touch[dst] = addr_touch.get(dst, 0) + 1
        for nid, count in write_in.items():
            if self.nodes[nid].kind is not NodeKind.VAR:
                problems.append(f"Write edge into non-Var node {nid}")
            if count > 1:
                problems.append(f"Var node {nid} has {count} Write in-edges")
        for lo, hi in self.warp_spans:
            instrs = [n.node_id for n in self.nodes[lo:hi] if n.kind is NodeKind.INSTR]
            ctrl = sorted(
                (s, d)
                for s, d, r in self.edges
                if r is Relation.CTRL and lo <= s < hi
            )
            want = list(zip(instrs, instrs[1:]))
            if ctrl != want:
                problems.append(f"Ctrl edges in span ({lo},{hi}) do not form the trace-order path")
            for n in self.nodes[lo:hi]:
                if n.kind is NodeKind.INSTR and (n.mem_width or 0) > 0:
                    if addr_touch.get(n.node_id, 0) != 1:
                        problems.append(f"memory Instr node {n.node_id} lacks a unique Addr edge")
        return problems

    def to_json(self) -> dict:
        nodes = []
        for n in self.nodes:
            if n.kind is NodeKind.INSTR:
                payload: dict = {"opcode": n.opcode, "pc": n.pc, "mem_width": n.mem_width}
            elif n.kind is NodeKind.PSEUDO:
                payload = {"pseudo": n.pseudo}
            else:
                payload = {
                    "category": n.category,
                    "values": list(n.values),
                    "has_writer": n.has_writer,
                }
            nodes.append({"node_id": n.node_id, "kind": n.kind.value, "payload": payload})
        return {
            "nodes": nodes,
            "edges": [[s, d, r.value] for s, d, r in self.edges],
            "warp_spans": [[lo, hi] for lo, hi in self.warp_spans],
        }

    @classmethod
    def from_json(cls, raw: dict) -> "TraceGraph":
        nodes: list[GraphNode] = []
        for item in raw["nodes"]:
            kind = NodeKind(item["kind"])
            p = item["payload"]
            if kind is NodeKind.INSTR:
                node = GraphNode(
                    node_id=int(item["node_id"]),
                    kind=kind,
                    opcode=int(p["opcode"]),
                    pc=int(p["pc"]),
                    mem_width=int(p["mem_width"]),
                )
            elif kind is NodeKind.PSEUDO:
                node = GraphNode(node_id=int(item["node_id"]), kind=kind, pseudo=int(p["pseudo"]))
            else:
                node = GraphNode(
                    node_id=int(item["node_id"]),
                    kind=kind,
                    category=int(p["category"]),
                    values=tuple(int(v) for v in p["values"]),
                    has_writer=bool(p["has_writer"]),
                )
            nodes.append(node)
        edges = [(int(s), int(d), Relation(r)) for s, d, r in raw["edges"]]
        spans = [(int(lo), int(hi)) for lo, hi in raw["warp_spans"]]
        return cls(nodes=nodes, edges=edges, warp_spans=spans)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "TraceGraph":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


@dataclass(slots=True)
class VersionTable:
    """Maps live variable keys (register name or memory line) to the
    node id of their most recently written version."""

    current: dict = field(default_factory=dict)

    def get(self, key) -> int | None:
        return self.current.get(key)

    def bind(self, key, node_id: int) -> None:
        self.current[key] = node_id


def _var_category(reg: str) -> str:
    # Predicate registers (P0..P6, PT) get their own category.
    return "PRED" if reg.startswith("P") else "REG"


def build_warp_graph(warp: WarpTrace, registry: TokenRegistry) -> TraceGraph:
    """Lift one warp trace into its relational graph.

    Node ids follow creation order: for each record, the instruction
    node first, then any source variables it introduces, then the
    memory pseudo node, then freshly written destination variables.
    """
    if not warp.records:
        raise DataError("cannot build a graph from an empty warp")
    g = TraceGraph()
    table = VersionTable()

    def add_node(node: GraphNode) -> int:
        node.node_id = len(g.nodes)
        g.nodes.append(node)
        return node.node_id

    prev_instr: int | None = None
    for rec in warp.records:
        instr = add_node(
            GraphNode(
                node_id=0,
                kind=NodeKind.INSTR,
                opcode=registry.opcode_id(rec.opcode),
                pc=rec.pc,
                mem_width=rec.mem_width,
            )
        )
        if prev_instr is not None:
            g.edges.append((prev_instr, instr, Relation.CTRL))
        src_vars: list[int] = []
        for i, reg in enumerate(rec.src_regs):
            vid = table.get(reg)
            if vid is None:
                # First sight of this register: an unwritten variable
                # initialized from the values the trace recorded for it.
                vid = add_node(
                    GraphNode(
                        node_id=0,
                        kind=NodeKind.VAR,
                        category=registry.var_category_id(_var_category(reg)),
                        values=rec.src_values(i),
                        has_writer=False,
                    )
                )
                table.bind(reg, vid)
            src_vars.append(vid)
            g.edges.append((vid, instr, Relation.READ))
        if rec.is_memory:
            pseudo = add_node(
                GraphNode(node_id=0, kind=NodeKind.PSEUDO, pseudo=registry.pseudo_id("MEM_REF"))
            )
            if src_vars:
                # The first source operand carries the effective address.
                g.edges.append((src_vars[0], pseudo, Relation.READ))
            g.edges.append((pseudo, instr, Relation.ADDR))
            addrs = rec.mem_addresses()
            line_key = ("MEM", addrs[0] // MEMORY_LINE_BYTES)
            if rec.dest_regs:
                # Load: the memory line is a data source.
                vid = table.get(line_key)
                if vid is None:
                    vid = add_node(
                        GraphNode(
                            node_id=0,
                            kind=NodeKind.VAR,
                            category=registry.var_category_id("MEM"),
                            values=addrs,
                            has_writer=False,
                        )
                    )
                    table.bind(line_key, vid)
                g.edges.append((vid, instr, Relation.READ))
            else:
                # Store: a new version of the memory line is written.
                vid = add_node(
                    GraphNode(
                        node_id=0,
                        kind=NodeKind.VAR,
                        category=registry.var_category_id("MEM"),
                        values=(),
                        has_writer=True,
                    )
                )
                g.edges.append((instr, vid, Relation.WRITE))
                table.bind(line_key, vid)
        for reg in rec.dest_regs:
            vid = add_node(
                GraphNode(
                    node_id=0,
                    kind=NodeKind.VAR,
                    category=registry.var_category_id(_var_category(reg)),
                    values=(),
                    has_writer=True,
                )
            )
            g.edges.append((instr, vid, Relation.WRITE))
            table.bind(reg, vid)
        prev_instr = instr
    g.warp_spans = [(0, g.n_nodes)]
    return g


def merge_kernel_graph(warp_graphs: Sequence[TraceGraph]) -> TraceGraph:
    """Disjoint union of per-warp graphs with node ids re-based."""
    merged = TraceGraph()
    offset = 0
    for wg in warp_graphs:
        for node in wg.nodes:
            shifted = GraphNode(
                node_id=node.node_id + offset,
                kind=node.kind,
                opcode=node.opcode,
                pc=node.pc,
                mem_width=node.mem_width,
                pseudo=node.pseudo,
                category=node.category,
                values=node.values,
                has_writer=node.has_writer,
            )
            merged.nodes.append(shifted)
        merged.edges.extend((s + offset, d + offset, r) for s, d, r in wg.edges)
        merged.warp_spans.extend((lo + offset, hi + offset) for lo, hi in wg.warp_spans)
        offset += wg.n_nodes
    return merged


def split_by_spans(graph: TraceGraph) -> list[TraceGraph]:
    """Inverse of merge_kernel_graph up to node id re-basing."""
    parts: list[TraceGraph] = []
    for lo, hi in graph.warp_spans:
        part = TraceGraph()
        for node in graph.nodes[lo:hi]:
            part.nodes.append(
                GraphNode(
                    node_id=node.node_id - lo,
                    kind=node.kind,
                    opcode=node.opcode,
                    pc=node.pc,
                    mem_width=node.mem_width,
                    pseudo=node.pseudo,
                    category=node.category,
                    values=node.values,
                    has_writer=node.has_writer,
                )
            )
        part.edges = [
            (s - lo, d - lo, r) for s, d, r in graph.edges if lo <= s < hi
        ]
        part.warp_spans = [(0, hi - lo)]
        parts.append(part)
    return parts


def build_kernel_graph(kernel: KernelTrace, registry: TokenRegistry) -> TraceGraph:
    """Per-warp graphs merged in (cta, warp_id) order."""
    ordered = sorted(kernel.warps, key=lambda w: (w.tb, w.warp_id))
    return merge_kernel_graph([build_warp_graph(w, registry) for w in ordered])


def iter_graph_stats(graphs: Iterable[TraceGraph]):
    for g in graphs:
        yield {"nodes": g.n_nodes, "edges": g.n_edges, "warps": len(g.warp_spans)}
