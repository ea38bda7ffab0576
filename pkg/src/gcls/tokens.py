"""Token registry: stable integer ids for opcodes and node categories.

Feature embeddings are looked up by token id, so ids must be dense,
start at zero, and never change once a registry has been persisted
next to a trained model.  Opcodes outside the vocabulary map onto a
reserved unknown id instead of failing; lookups of unknown tokens are
tallied so data drift is visible without breaking a run.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

from .trace import KernelTrace

UNK_TOKEN = "<UNK>"

# Common SASS opcodes, enough to cover the synthetic generator and the
# usual compute/memory/control mix of real traces.
DEFAULT_OPCODES: tuple[str, ...] = (
    "BAR", "BRA", "EXIT", "F2I", "FADD", "FFMA", "FMUL", "FSETP",
    "I2F", "IADD", "IADD3", "IMAD", "ISETP", "LDG", "LDL", "LDS",
    "LEA", "LOP3", "MOV", "MUFU", "NOP", "PRMT", "S2R", "SEL",
    "SHF", "SHFL", "STG", "STL", "STS", "XMAD",
)

# Opcodes that access memory; traces must agree (mem_width > 0 exactly
# for these).
DEFAULT_MEMORY_OPCODES: frozenset[str] = frozenset(
    {"LDG", "LDL", "LDS", "STG", "STL", "STS"}
)

PSEUDO_OPS: tuple[str, ...] = ("MEM_REF",)

VAR_CATEGORIES: tuple[str, ...] = ("REG", "PRED", "MEM")


def _index(tokens: Iterable[str]) -> dict[str, int]:
    return {tok: i for i, tok in enumerate(tokens)}


@dataclass(slots=True)
class TokenRegistry:
    """Maps token strings to dense ids, one namespace per node kind."""

    opcodes: dict[str, int]
    pseudo_ops: dict[str, int]
    var_categories: dict[str, int]
    memory_opcodes: frozenset[str]
    unknown_seen: Counter = field(default_factory=Counter)

    @classmethod
    def default(cls) -> "TokenRegistry":
        return cls(
            opcodes=_index((*DEFAULT_OPCODES, UNK_TOKEN)),
            pseudo_ops=_index(PSEUDO_OPS),
            var_categories=_index(VAR_CATEGORIES),
            memory_opcodes=DEFAULT_MEMORY_OPCODES,
        )

    @classmethod
    def from_corpus(cls, kernels: Iterable[KernelTrace]) -> "TokenRegistry":
        """Default vocabulary extended with every opcode seen in the corpus.

        Opcodes observed with a positive memory width are added to the
        memory set, so downstream memory/compute distinctions follow the
        traces themselves.
        """
        extra: list[str] = []
        seen: set[str] = set(DEFAULT_OPCODES)
        mem = set(DEFAULT_MEMORY_OPCODES)
        for kernel in kernels:
            for rec in kernel.iter_records():
                if rec.opcode not in seen:
                    seen.add(rec.opcode)
                    extra.append(rec.opcode)
                if rec.mem_width > 0:
                    mem.add(rec.opcode)
        vocab = (*DEFAULT_OPCODES, *sorted(extra), UNK_TOKEN)
        return cls(
            opcodes=_index(vocab),
            pseudo_ops=_index(PSEUDO_OPS),
            var_categories=_index(VAR_CATEGORIES),
            memory_opcodes=frozenset(mem),
        )

    @property
    def n_opcodes(self) -> int:
        return len(self.opcodes)

    @property
    def unk_id(self) -> int:
        return self.opcodes[UNK_TOKEN]

    def opcode_id(self, opcode: str) -> int:
        oid = self.opcodes.get(opcode)
        if oid is None:
            self.unknown_seen[opcode] += 1
            return self.unk_id
        return oid

    def pseudo_id(self, name: str) -> int:
        return self.pseudo_ops[name]

    def var_category_id(self, category: str) -> int:
        return self.var_categories[category]

    def is_memory(self, opcode: str) -> bool:
        return opcode in self.memory_opcodes

    def save(self, path: str) -> None:
        raw = {
            "opcodes": self.opcodes,
            "pseudo_ops": self.pseudo_ops,
            "var_categories": self.var_categories,
            "memory_opcodes": sorted(self.memory_opcodes),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(raw, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "TokenRegistry":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls(
            opcodes={str(k): int(v) for k, v in raw["opcodes"].items()},
            pseudo_ops={str(k): int(v) for k, v in raw["pseudo_ops"].items()},
            var_categories={str(k): int(v) for k, v in raw["var_categories"].items()},
            memory_opcodes=frozenset(raw["memory_opcodes"]),
        )
