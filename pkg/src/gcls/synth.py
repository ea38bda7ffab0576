"""Synthetic trace corpus with planted kernel classes.

Each class spec fixes an opcode mixture, a memory-op fraction, a loop
body length, an address stride, and a warp count.  Kernels of one
class share these structural knobs but draw their own opcode sequence,
register names, operand values, and masks, so a class is a cluster of
similar-but-not-identical kernels.  Every class is engineered to be
distinguishable (different body lengths, strides, opcode pools, and
operand magnitudes), giving clustering a recoverable planted target.

Ground-truth metrics come from a parametric cost model over the trace:
cycles = alpha * instructions + beta * memory ops + gamma * distinct
128-byte lines + Gaussian noise, and execution time assumes a 1 GHz
clock.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpec
from .evaluation import KernelMetrics, MetricTable
from .seeds import rng_for
from .tokens import DEFAULT_MEMORY_OPCODES
from .trace import (
    CorpusManifest,
    InstructionRecord,
    KernelTrace,
    ManifestEntry,
    WarpTrace,
    save_manifest,
    write_trace,
)

SYNTH_CLOCK_HZ = 1.0e9
LOOP_ITERATIONS = 2
FULL_MASK = 0xFFFFFFFF
HALF_MASK = 0x0000FFFF
ELEMENT_BYTES = 4
LINE_BYTES = 128

# Opcodes that read one operand and write one destination.
_ONE_SRC_OPS = {"MOV", "MUFU", "S2R", "F2I", "I2F"}
# Opcodes with three register sources.
_THREE_SRC_OPS = {"FFMA", "IMAD", "IADD3", "LOP3", "XMAD", "SEL", "LEA", "PRMT"}
# Opcodes that write a predicate register.
_PREDICATE_OPS = {"ISETP", "FSETP"}
# Opcodes with no operands at all.
_NO_OPERAND_OPS = {"BAR", "NOP", "EXIT"}
_SHARED_MEM_OPS = {"LDS", "STS", "LDL", "STL"}


@dataclass(slots=True)
class CostCoeffs:
    alpha: float = 1.0
    beta: float = 2.0
    gamma: float = 4.0
    eta: float = 0.01

    def validate(self) -> None:
        if min(self.alpha, self.beta, self.gamma, self.eta) < 0:
            raise InvalidSpec("cost coefficients must be nonnegative")


@dataclass(slots=True)
class SynthClassSpec:
    class_id: int
    opcode_mix: dict[str, float]
    mem_fraction: float
    loop_len: tuple[int, int]
    stride: int
    n_warps: tuple[int, int]
    value_scale: int = 1 << 16
    l1_hit: float = 0.8
    l2_hit: float = 0.6

    def validate(self) -> None:
        total = sum(self.opcode_mix.values())
        if abs(total - 1.0) > 1e-9:
            raise InvalidSpec(f"class {self.class_id}: opcode mix sums to {total}")
        if any(p < 0 for p in self.opcode_mix.values()):
            raise InvalidSpec(f"class {self.class_id}: negative mix probability")
        mem_mass = sum(
            p for op, p in self.opcode_mix.items() if op in DEFAULT_MEMORY_OPCODES
        )
        if abs(mem_mass - self.mem_fraction) > 1e-6:
            raise InvalidSpec(
                f"class {self.class_id}: memory opcode mass {mem_mass} "
                f"!= mem_fraction {self.mem_fraction}"
            )
        if not 0.0 <= self.mem_fraction <= 1.0:
            raise InvalidSpec(f"class {self.class_id}: mem_fraction outside [0,1]")
        for lo, hi in (self.loop_len, self.n_warps):
            if lo < 1 or hi < lo:
                raise InvalidSpec(f"class {self.class_id}: empty integer range ({lo},{hi})")
        if self.stride < 1:
            raise InvalidSpec(f"class {self.class_id}: stride must be positive")


def default_class_specs() -> list[SynthClassSpec]:
    """Four planted classes: float ALU, integer ALU, global streaming,
    and shared-memory mixed compute."""
    return [
        SynthClassSpec(
            class_id=0,
            opcode_mix={
                "FFMA": 0.25, "FADD": 0.20, "FMUL": 0.20, "MUFU": 0.10,
                "FSETP": 0.10, "LDG": 0.10, "STG": 0.05,
            },
            mem_fraction=0.15,
            loop_len=(7, 7),
            stride=128,
            n_warps=(2, 2),
            value_scale=300,
            l1_hit=0.85,
            l2_hit=0.60,
        ),
        SynthClassSpec(
            class_id=1,
            opcode_mix={
                "IADD": 0.20, "IMAD": 0.18, "LOP3": 0.14, "SHF": 0.12,
                "ISETP": 0.08, "SEL": 0.06, "S2R": 0.02, "LDG": 0.14, "STL": 0.06,
            },
            mem_fraction=0.20,
            loop_len=(9, 9),
            stride=32,
            n_warps=(2, 2),
            value_scale=70000,
            l1_hit=0.75,
            l2_hit=0.55,
        ),
        SynthClassSpec(
            class_id=2,
            opcode_mix={
                "LDG": 0.30, "STG": 0.20, "IADD": 0.14, "LEA": 0.14,
                "MOV": 0.12, "ISETP": 0.10,
            },
            mem_fraction=0.50,
            loop_len=(11, 11),
            stride=4096,
            n_warps=(3, 3),
            value_scale=1 << 26,
            l1_hit=0.35,
            l2_hit=0.45,
        ),
        SynthClassSpec(
            class_id=3,
            opcode_mix={
                "LDS": 0.20, "STS": 0.10, "FFMA": 0.24, "XMAD": 0.16,
                "PRMT": 0.10, "BAR": 0.06, "MOV": 0.14,
            },
            mem_fraction=0.30,
            loop_len=(13, 13),
            stride=64,
            n_warps=(3, 3),
            value_scale=9,
            l1_hit=0.90,
            l2_hit=0.70,
        ),
    ]


@dataclass(slots=True)
class _Slot:
    opcode: str
    dest_regs: tuple[str, ...]
    src_regs: tuple[str, ...]
    mem_width: int
    is_memory: bool


def _plan_body(spec: SynthClassSpec, rng: np.random.Generator) -> list[_Slot]:
    """Fixed per-kernel loop body: opcode and register roles per slot."""
    body_len = int(rng.integers(spec.loop_len[0], spec.loop_len[1] + 1))
    mem_ops = sorted((op, p) for op, p in spec.opcode_mix.items() if op in DEFAULT_MEMORY_OPCODES)
    alu_ops = sorted((op, p) for op, p in spec.opcode_mix.items() if op not in DEFAULT_MEMORY_OPCODES)
    n_mem = int(round(body_len * spec.mem_fraction)) if mem_ops else 0
    n_mem = min(n_mem, body_len)
    mem_slots = set(
        int(i) for i in rng.choice(body_len, size=n_mem, replace=False)
    ) if n_mem else set()

    def draw(pool: list[tuple[str, float]]) -> str:
        names = [op for op, _ in pool]
        probs = np.array([p for _, p in pool])
        return str(names[int(rng.choice(len(names), p=probs / probs.sum()))])

    slots: list[_Slot] = []
    available = ["R0", "R1"]
    next_dest = 2
    for slot_idx in range(body_len):
        if slot_idx in mem_slots:
            opcode = draw(mem_ops)
            addr_reg = f"R{20 + slot_idx % 2}"
            if opcode.startswith("ST"):
                data_reg = str(rng.choice(available))
                slots.append(_Slot(opcode, (), (addr_reg, data_reg), ELEMENT_BYTES, True))
            else:
                dest = f"R{2 + next_dest % 12}"
                next_dest += 1
                slots.append(_Slot(opcode, (dest,), (addr_reg,), ELEMENT_BYTES, True))
                available.append(dest)
        else:
            opcode = draw(alu_ops)
            if opcode in _NO_OPERAND_OPS:
                slots.append(_Slot(opcode, (), (), 0, False))
                continue
            if opcode == "S2R":
                srcs: tuple[str, ...] = ("SR_TID",)
            elif opcode in _ONE_SRC_OPS:
                srcs = (str(rng.choice(available)),)
            elif opcode in _THREE_SRC_OPS:
                srcs = tuple(str(rng.choice(available)) for _ in range(3))
            else:
                srcs = tuple(str(rng.choice(available)) for _ in range(2))
            if opcode in _PREDICATE_OPS:
                dests: tuple[str, ...] = (f"P{slot_idx % 2}",)
            else:
                dest = f"R{2 + next_dest % 12}"
                next_dest += 1
                dests = (dest,)
                available.append(dest)
            slots.append(_Slot(opcode, dests, srcs, 0, False))
        if len(available) > 8:
            available = available[-8:]
    return slots


def _generate_kernel(spec: SynthClassSpec, launch_id: int, name: str, seed: int) -> KernelTrace:
    plan_rng = rng_for(seed, "kernel", launch_id)
    body = _plan_body(spec, plan_rng)
    n_warps = int(plan_rng.integers(spec.n_warps[0], spec.n_warps[1] + 1))
    warps: list[WarpTrace] = []
    for w in range(n_warps):
        warp_rng = rng_for(seed, "kernel", launch_id, "warp", w)
        tb = (w // 4, 0, 0)
        warp = WarpTrace(tb=tb, warp_id=w % 4)
        global_base = 0x10000000 + w * 0x100000
        shared_base = 0x2000 + w * 0x800
        access_counter = 0
        for _ in range(LOOP_ITERATIONS):
            for slot_idx, slot in enumerate(body):
                pc = 0x100 + slot_idx * 16
                if slot.is_memory:
                    # Memory ops keep the full mask so the touched line
                    # set depends only on the class parameters.
                    mask = FULL_MASK
                else:
                    mask = HALF_MASK if warp_rng.random() < 0.1 else FULL_MASK
                lanes = bin(mask).count("1")
                addresses: list[int] = []
                if slot.is_memory:
                    base = shared_base if slot.opcode in _SHARED_MEM_OPS else global_base
                    addr0 = base + access_counter * spec.stride
                    access_counter += 1
                    addresses = [addr0 + lane * ELEMENT_BYTES for lane in range(lanes)]
                values: list[int] = []
                for src_idx, src in enumerate(slot.src_regs):
                    if slot.is_memory and src_idx == 0:
                        values.extend(addresses)
                    else:
                        values.extend(
                            int(v)
                            for v in warp_rng.integers(
                                -spec.value_scale, spec.value_scale + 1, size=lanes
                            )
                        )
                if slot.is_memory:
                    values.extend(addresses)
                warp.records.append(
                    InstructionRecord(
                        tb=tb,
                        warp_id=w % 4,
                        pc=pc,
                        mask=mask,
                        dest_regs=slot.dest_regs,
                        opcode=slot.opcode,
                        src_regs=slot.src_regs,
                        mem_width=slot.mem_width,
                        dynamic_values=tuple(values),
                    )
                )
        warps.append(warp)
    return KernelTrace(kernel_name=name, launch_id=launch_id, warps=warps)


def synth_cost_model(trace: KernelTrace, coeffs: CostCoeffs, seed: int) -> float:
    """cycles = alpha*I + beta*M + gamma*L + N(0, eta*deterministic part),
    clamped above 1; L counts distinct 128-byte lines touched."""
    coeffs.validate()
    instructions = 0
    memory_ops = 0
    lines: set[int] = set()
    for rec in trace.iter_records():
        instructions += 1
        if rec.is_memory:
            memory_ops += 1
            for addr in rec.mem_addresses():
                lines.add(addr // LINE_BYTES)
    det = (
        coeffs.alpha * instructions
        + coeffs.beta * memory_ops
        + coeffs.gamma * len(lines)
    )
    noise = 0.0
    if coeffs.eta > 0:
        noise = float(rng_for(seed, "cost", trace.launch_id).normal(0.0, coeffs.eta * det))
    return max(det + noise, 1.0)


def generate_corpus(
    specs: list[SynthClassSpec],
    kernels_per_class: int,
    seed: int,
    out_dir: str,
    coeffs: CostCoeffs | None = None,
) -> tuple[CorpusManifest, MetricTable]:
    """Write trace files, a manifest, and a ground-truth metric table.

    Classes are assigned round-robin over launch order; every random
    draw is keyed by (seed, launch_id), so regenerating with the same
    seed reproduces the corpus byte for byte.
    """
    if not specs or kernels_per_class < 1:
        raise InvalidSpec("need at least one class spec and one kernel per class")
    for spec in specs:
        spec.validate()
    coeffs = coeffs or CostCoeffs()
    coeffs.validate()
    os.makedirs(out_dir, exist_ok=True)
    entries: list[ManifestEntry] = []
    table = MetricTable()
    n_kernels = len(specs) * kernels_per_class
    for launch_id in range(n_kernels):
        spec = specs[launch_id % len(specs)]
        name = f"synthetic_c{spec.class_id}_{launch_id:04d}"
        kernel = _generate_kernel(spec, launch_id, name, seed)
        rel_path = f"kernel_{launch_id}.trace"
        write_trace(os.path.join(out_dir, rel_path), kernel)
        entries.append(ManifestEntry(launch_id=launch_id, name=name, path=rel_path))

        cycles = synth_cost_model(kernel, coeffs, seed)
        n_records = kernel.n_records
        metric_rng = rng_for(seed, "metrics", launch_id)
        l1 = float(np.clip(spec.l1_hit + metric_rng.normal(0.0, 0.01), 0.0, 1.0))
        l2 = float(np.clip(spec.l2_hit + metric_rng.normal(0.0, 0.01), 0.0, 1.0))
        table.add(
            KernelMetrics(
                launch_id=launch_id,
                kernel_name=name,
                cycles=cycles,
                exec_time=cycles / SYNTH_CLOCK_HZ,
                instruction_count=n_records,
                l1_hit=l1,
                l2_hit=l2,
                occupancy=len(kernel.warps) / 8.0,
                ipc=n_records / cycles,
                class_id=spec.class_id,
            )
        )
    manifest = CorpusManifest(kernels=entries, labels="metrics.json", root=os.path.abspath(out_dir))
    save_manifest(os.path.join(out_dir, "manifest.json"), manifest)
    table.save(os.path.join(out_dir, "metrics.json"))
    return manifest, table
