"""JSON experiment configuration with strict sections and named sub-seeds."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


def sub_seed(seed: int, name: str) -> int:
    """Stable 32-bit seed derived from a top-level seed and a purpose name."""
    digest = hashlib.sha256(f"{int(seed)}:{name}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def _float(x):
    """JSON has no infinity literal; accept "inf" strings."""
    return math.inf if isinstance(x, str) and x.lower() in ("inf", "infinity") else float(x)


@dataclass
class VocabSection:
    alphabet: str = "abdegiklmnoprstu"


@dataclass
class ModelsSection:
    feature_dim: int = 16
    sigma: float = 1.0
    am_enc_size: int = 64
    am_dec_size: int = 64
    am_epochs: int = 2
    am_learning_rate: float = 0.005
    lm_embed_size: int = 32
    lm_hidden_size: int = 64
    lm_proj_size: int = 32
    lm_epochs: int = 2
    lm_batch_size: int = 16
    lm_learning_rate: float = 0.01


@dataclass
class FusionSection:
    alpha: float = 0.1
    beta: float = 0.06
    tau: float = 0.5
    beam_size: int = 4
    max_eos_logprob_delta: float = math.inf
    max_steps: int | None = None
    n_best: int | None = None


@dataclass
class MwerSection:
    mode: str = "fused"
    alpha: float = 0.3
    beta: float = 0.0
    beam_size: int = 4
    max_eos_logprob_delta: float = 10.0
    learning_rate: float = 0.05
    steps: int = 200
    relative: bool = True


@dataclass
class PruneSection:
    log_base: str = "ln"
    rare_filter: bool = False
    rare_threshold: int = 5
    target: int | None = None
    sample_after_rare_filter: bool = False


@dataclass
class EvalSection:
    selector: str = "random"
    n: int = 10000
    am_max: int = 5
    lm_min: int = 150
    grid: list = field(default_factory=lambda: [[2, 0.05], [2, 0.5], [2, 10.0], [4, 0.05], [4, 0.5],
                                                 [4, 10.0], [8, 0.05], [8, 0.5], [8, 10.0]])


@dataclass
class SeedsSection:
    seed: int = 0
    # names of the derived seeds, recorded for reproducibility
    names: list = field(default_factory=lambda: ["corpus", "init", "sampling", "noise"])


@dataclass
class PathsSection:
    work_dir: str = "work"


@dataclass
class ExperimentsSection:
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    truncation: dict = field(default_factory=dict)
    rare: dict = field(default_factory=dict)


SECTIONS = {"vocab": VocabSection, "models": ModelsSection, "fusion": FusionSection, "mwer": MwerSection,
            "prune": PruneSection, "eval": EvalSection, "seeds": SeedsSection, "paths": PathsSection,
            "experiments": ExperimentsSection}

_FLOAT_FIELDS = {"max_eos_logprob_delta"}


@dataclass
class ExperimentConfig:
    vocab: VocabSection = field(default_factory=VocabSection)
    models: ModelsSection = field(default_factory=ModelsSection)
    fusion: FusionSection = field(default_factory=FusionSection)
    mwer: MwerSection = field(default_factory=MwerSection)
    prune: PruneSection = field(default_factory=PruneSection)
    eval: EvalSection = field(default_factory=EvalSection)
    seeds: SeedsSection = field(default_factory=SeedsSection)
    paths: PathsSection = field(default_factory=PathsSection)
    experiments: ExperimentsSection = field(default_factory=ExperimentsSection)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
        built = {}
        for name, section_cls in SECTIONS.items():
            body = doc.get(name, {})
            if not isinstance(body, dict):
                raise ConfigError(f"section {name!r} must be an object")
            allowed = {f.name for f in fields(section_cls)}
            bad = set(body) - allowed
            if bad:
                raise ConfigError(f"unknown key(s) in section {name!r}: {sorted(bad)}")
            body = {k: (_float(v) if k in _FLOAT_FIELDS else v) for k, v in body.items()}
            built[name] = section_cls(**body)
        return cls(**built)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        p = Path(path)
        try:
            doc = json.loads(p.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {p}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON: {exc}") from None
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        d = asdict(self)
        for section in d.values():
            for k, v in section.items():
                if isinstance(v, float) and math.isinf(v):
                    section[k] = "inf"
        return d

    def seed_for(self, name: str) -> int:
        return sub_seed(self.seeds.seed, name)

    def resolved_seeds(self) -> dict[str, int]:
        return {name: self.seed_for(name) for name in self.seeds.names}
