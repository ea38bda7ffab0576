"""Instruction trace model and parsing.

A trace file holds one dynamic instruction per line, in execution
order, interleaved across thread blocks and warps.  The line grammar
is a flat whitespace-separated record:

    tb_x tb_y tb_z warp_id pc mask n_dests dest*  opcode n_srcs src*  mem_width n_vals val*

where pc and mask are hexadecimal, everything else is decimal, and
registers are opaque strings such as R4 or P1.  The trailing values
block carries, for each source register and then (for memory ops) the
effective address, one 64-bit value per active lane of the mask.
Lines starting with '#' and blank lines are skipped.

A corpus is a directory of per-kernel trace files plus a manifest that
assigns each file a launch id and kernel name and points at the metric
table used for evaluation.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .errors import DuplicateLaunchId, EmptyTrace, MalformedLine, MissingFile


@dataclass(frozen=True, slots=True)
class InstructionRecord:
    """One dynamic instruction executed by one warp."""

    tb: tuple[int, int, int]
    warp_id: int
    pc: int
    mask: int
    dest_regs: tuple[str, ...]
    opcode: str
    src_regs: tuple[str, ...]
    mem_width: int
    dynamic_values: tuple[int, ...]

    @property
    def active_lanes(self) -> int:
        return bin(self.mask).count("1")

    @property
    def is_memory(self) -> bool:
        return self.mem_width > 0

    def src_values(self, i: int) -> tuple[int, ...]:
        """Per-active-lane values recorded for source register i."""
        p = self.active_lanes
        return self.dynamic_values[i * p : (i + 1) * p]

    def mem_addresses(self) -> tuple[int, ...]:
        """Per-active-lane effective addresses; empty for non-memory ops."""
        if not self.is_memory:
            return ()
        p = self.active_lanes
        n = len(self.src_regs)
        return self.dynamic_values[n * p : (n + 1) * p]


@dataclass(slots=True)
class WarpTrace:
    """All records of one (thread block, warp id) pair, in order."""

    tb: tuple[int, int, int]
    warp_id: int
    records: list[InstructionRecord] = field(default_factory=list)


@dataclass(slots=True)
class KernelTrace:
    """One kernel launch: its warps in first-appearance order."""

    kernel_name: str
    launch_id: int
    warps: list[WarpTrace]

    @property
    def n_records(self) -> int:
        return sum(len(w.records) for w in self.warps)

    def iter_records(self) -> Iterator[InstructionRecord]:
        for warp in self.warps:
            yield from warp.records


@dataclass(slots=True)
class ManifestEntry:
    launch_id: int
    name: str
    path: str


@dataclass(slots=True)
class CorpusManifest:
    kernels: list[ManifestEntry]
    labels: str
    root: str = "."

    def labels_path(self) -> str:
        return os.path.join(self.root, self.labels)


def parse_trace_line(line: str, line_no: int) -> InstructionRecord | None:
    """Parse one line; returns None for comments and blank lines."""
    stripped = line.strip()
    if not stripped or stripped.startswith("#"):
        return None
    tok = stripped.split()

    def fail(reason: str) -> MalformedLine:
        return MalformedLine(line_no, reason)

    def take_int(i: int, what: str, base: int = 10) -> int:
        if i >= len(tok):
            raise fail(f"truncated record, missing {what}")
        try:
            return int(tok[i], base)
        except ValueError:
            raise fail(f"bad {what} field {tok[i]!r}") from None

    tb = (take_int(0, "tb_x"), take_int(1, "tb_y"), take_int(2, "tb_z"))
    warp_id = take_int(3, "warp_id")
    pc = take_int(4, "pc", base=16)
    mask = take_int(5, "mask", base=16)
    if mask <= 0:
        raise fail("active mask must have at least one set bit")
    if mask >= 1 << 32:
        raise fail("active mask wider than 32 bits")
    n_dests = take_int(6, "n_dests")
    if n_dests < 0:
        raise fail("negative destination count")
    pos = 7
    if pos + n_dests > len(tok):
        raise fail("truncated record, missing destination registers")
    dest_regs = tuple(tok[pos : pos + n_dests])
    pos += n_dests
    if pos >= len(tok):
        raise fail("truncated record, missing opcode")
    opcode = tok[pos]
    pos += 1
    n_srcs = take_int(pos, "n_srcs")
    if n_srcs < 0:
        raise fail("negative source count")
    pos += 1
    if pos + n_srcs > len(tok):
        raise fail("truncated record, missing source registers")
    src_regs = tuple(tok[pos : pos + n_srcs])
    pos += n_srcs
    mem_width = take_int(pos, "mem_width")
    if mem_width < 0:
        raise fail("negative memory width")
    pos += 1
    n_vals = take_int(pos, "n_vals")
    pos += 1
    if pos + n_vals != len(tok):
        raise fail(f"value count {n_vals} does not match trailing fields")
    try:
        values = tuple(int(v) for v in tok[pos:])
    except ValueError:
        raise fail("non-integer dynamic value") from None

    lanes = bin(mask).count("1")
    operands = n_srcs + (1 if mem_width > 0 else 0)
    if n_vals != operands * lanes:
        raise fail(
            f"expected {operands * lanes} dynamic values "
            f"({operands} operands x {lanes} lanes), got {n_vals}"
        )
    return InstructionRecord(
        tb=tb,
        warp_id=warp_id,
        pc=pc,
        mask=mask,
        dest_regs=dest_regs,
        opcode=opcode,
        src_regs=src_regs,
        mem_width=mem_width,
        dynamic_values=values,
    )


def iter_trace_records(lines: Iterable[str]) -> Iterator[InstructionRecord]:
    """Stream records out of a line source without materializing the file."""
    for line_no, line in enumerate(lines, start=1):
        rec = parse_trace_line(line, line_no)
        if rec is not None:
            yield rec


def group_by_warp(records: Iterable[InstructionRecord]) -> list[WarpTrace]:
    """Split a record stream into per-warp sequences.

    Warps are keyed by (thread block, warp id) and listed in order of
    first appearance; record order within a warp is preserved.
    """
    warps: dict[tuple[tuple[int, int, int], int], WarpTrace] = {}
    for rec in records:
        key = (rec.tb, rec.warp_id)
        warp = warps.get(key)
        if warp is None:
            warp = WarpTrace(tb=rec.tb, warp_id=rec.warp_id)
            warps[key] = warp
        warp.records.append(rec)
    return list(warps.values())


def parse_trace(lines: Iterable[str], kernel_name: str, launch_id: int) -> KernelTrace:
    warps = group_by_warp(iter_trace_records(lines))
    if not warps:
        raise EmptyTrace(f"trace for kernel {kernel_name!r} has no records")
    return KernelTrace(kernel_name=kernel_name, launch_id=launch_id, warps=warps)


def read_trace_file(path: str, kernel_name: str, launch_id: int) -> KernelTrace:
    if not os.path.isfile(path):
        raise MissingFile(f"trace file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return parse_trace(fh, kernel_name, launch_id)


def format_record(rec: InstructionRecord) -> str:
    """Render a record back into the line grammar (inverse of parsing)."""
    parts: list[str] = [
        str(rec.tb[0]),
        str(rec.tb[1]),
        str(rec.tb[2]),
        str(rec.warp_id),
        format(rec.pc, "x"),
        format(rec.mask, "08x"),
        str(len(rec.dest_regs)),
        *rec.dest_regs,
        rec.opcode,
        str(len(rec.src_regs)),
        *rec.src_regs,
        str(rec.mem_width),
        str(len(rec.dynamic_values)),
        *(str(v) for v in rec.dynamic_values),
    ]
    return " ".join(parts)


def write_trace(path: str, kernel: KernelTrace, header: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        for rec in kernel.iter_records():
            fh.write(format_record(rec) + "\n")


def load_manifest(path: str) -> CorpusManifest:
    if not os.path.isfile(path):
        raise MissingFile(f"manifest not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    entries = [
        ManifestEntry(launch_id=int(k["launch_id"]), name=str(k["name"]), path=str(k["path"]))
        for k in raw["kernels"]
    ]
    seen: set[int] = set()
    for e in entries:
        if e.launch_id in seen:
            raise DuplicateLaunchId(f"launch id {e.launch_id} listed twice in manifest")
        seen.add(e.launch_id)
    return CorpusManifest(
        kernels=sorted(entries, key=lambda e: e.launch_id),
        labels=str(raw.get("labels", "")),
        root=os.path.dirname(os.path.abspath(path)),
    )


def save_manifest(path: str, manifest: CorpusManifest) -> None:
    raw = {
        "kernels": [
            {"launch_id": e.launch_id, "name": e.name, "path": e.path}
            for e in manifest.kernels
        ],
        "labels": manifest.labels,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(raw, fh, indent=2)
        fh.write("\n")


def load_corpus(manifest: CorpusManifest) -> list[KernelTrace]:
    """Load every kernel in the manifest, ordered by launch id."""
    kernels = []
    for entry in manifest.kernels:
        path = os.path.join(manifest.root, entry.path)
        kernels.append(read_trace_file(path, entry.name, entry.launch_id))
    return kernels
