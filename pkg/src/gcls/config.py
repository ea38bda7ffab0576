"""Pipeline configuration: one nested document covering every stage.

The config hash covers only semantic fields (seed, generator, model,
training, clustering, evaluation settings), not output paths, so two
runs into different directories still count as "the same experiment".
Every stage stamps its artifacts with this hash; downstream stages
refuse inputs produced under a different hash unless forced.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field

from .encoder import EncoderConfig
from .errors import ConfigError
from .synth import CostCoeffs, SynthClassSpec, default_class_specs
from .training import TrainConfig

STAGE_VERSION = 1


@dataclass(slots=True)
class SynthSettings:
    kernels_per_class: int = 50
    coeffs: CostCoeffs = field(default_factory=CostCoeffs)
    classes: list[SynthClassSpec] | None = None

    def class_specs(self) -> list[SynthClassSpec]:
        return self.classes if self.classes is not None else default_class_specs()


@dataclass(slots=True)
class ClusterSettings:
    k_min: int = 2
    k_max: int | None = None
    tie_band: float = 0.01
    identity_eps: float = 1e-9
    normalize: bool = False


@dataclass(slots=True)
class EvalSettings:
    cov_threshold: float = 0.25
    ratio_weighting: str = "count"
    figures: bool = True


@dataclass(slots=True)
class PipelineConfig:
    seed: int = 0
    out_dir: str = "out"
    corpus_dir: str | None = None
    synth: SynthSettings = field(default_factory=SynthSettings)
    train: TrainConfig = field(default_factory=TrainConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    cluster: ClusterSettings = field(default_factory=ClusterSettings)
    evaluate: EvalSettings = field(default_factory=EvalSettings)

    def __post_init__(self) -> None:
        # One global seed drives every stage; the train section's seed
        # field always mirrors it.
        self.train.seed = self.seed

    def validate(self) -> None:
        self.train.validate()
        self.encoder.validate()
        if self.synth.kernels_per_class < 1:
            raise ConfigError("kernels_per_class must be positive")
        if self.evaluate.ratio_weighting not in ("count", "cycles"):
            raise ConfigError("ratio_weighting must be 'count' or 'cycles'")
        if self.cluster.k_min < 1:
            raise ConfigError("k_min must be positive")

    def semantic_dict(self) -> dict:
        d = asdict(self)
        d.pop("out_dir")
        d.pop("corpus_dir")
        return d

    def config_hash(self) -> str:
        canonical = json.dumps(self.semantic_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]

    def to_json(self) -> dict:
        return asdict(self)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _from_dict(cls, raw: dict, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return cls(**raw)


def config_from_dict(raw: dict) -> PipelineConfig:
    raw = dict(raw)
    sections = {}
    if "synth" in raw:
        s = dict(raw.pop("synth"))
        if "coeffs" in s:
            s["coeffs"] = _from_dict(CostCoeffs, s["coeffs"], "synth.coeffs")
        if s.get("classes") is not None:
            specs = []
            for i, c in enumerate(s["classes"]):
                c = dict(c)
                for rng_field in ("loop_len", "n_warps"):
                    if rng_field in c:
                        c[rng_field] = tuple(c[rng_field])
                specs.append(_from_dict(SynthClassSpec, c, f"synth.classes[{i}]"))
            s["classes"] = specs
        sections["synth"] = _from_dict(SynthSettings, s, "synth")
    if "train" in raw:
        sections["train"] = _from_dict(TrainConfig, raw.pop("train"), "train")
    if "encoder" in raw:
        sections["encoder"] = _from_dict(EncoderConfig, raw.pop("encoder"), "encoder")
    if "cluster" in raw:
        sections["cluster"] = _from_dict(ClusterSettings, raw.pop("cluster"), "cluster")
    if "evaluate" in raw:
        sections["evaluate"] = _from_dict(EvalSettings, raw.pop("evaluate"), "evaluate")
    known_scalars = {"seed", "out_dir", "corpus_dir"}
    unknown = set(raw) - known_scalars
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    config = PipelineConfig(**{k: raw[k] for k in raw}, **sections)
    config.validate()
    return config


def load_config(path: str) -> PipelineConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file {path} is not valid JSON: {err}") from None
    return config_from_dict(raw)
