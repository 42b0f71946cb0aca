"""Experiment configuration: one JSON document, strict keys, paper-value defaults."""

import os
from dataclasses import asdict, dataclass, field, fields

from .pseudolabel import SinkhornConfig
from .synth import SynthSpec
from .trainer import BootstrapConfig, DiscoveryConfig, HeadConfig, MemoryConfig, PriorConfig

SEED_ENV_VAR = "NCDL_SEED"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    conf_cutoff: float = 1e-4
    nms_iou: float = 0.5
    max_per_image: int = 300
    head_index: int = 0


@dataclass(frozen=True)
class PathsConfig:
    dataset: str | None = None
    ground_truth: str | None = None
    true_labels: str | None = None
    checkpoint: str | None = None
    mapping: str | None = None
    log: str | None = None
    reports: tuple = ()


# JSON key -> dataclass field, where they differ
_KEY_ALIASES = {"lambda": "lam"}
_FIELD_ALIASES = {v: k for k, v in _KEY_ALIASES.items()}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)
    bootstrap: BootstrapConfig = field(default_factory=BootstrapConfig)
    discovery: DiscoveryConfig = field(default_factory=DiscoveryConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def require_path(self, name: str) -> str:
        value = getattr(self.paths, name)
        if not value:
            raise ConfigError(f"config is missing paths.{name}")
        return value


_SECTION_TYPES = {
    "paths": PathsConfig,
    "synth": SynthSpec,
    "bootstrap": BootstrapConfig,
    "eval": EvalConfig,
    "prior": PriorConfig,
    "sinkhorn": SinkhornConfig,
    "memory": MemoryConfig,
    "heads": HeadConfig,
}

_TUPLE_FIELDS = {"projector_widths", "multi_head_sizes", "reports"}

# config documents keep the seed at the top level only
_SEEDLESS = {"seed"}


def _build_section(cls, doc: dict, section: str):
    allowed = {f.name for f in fields(cls)} - _SEEDLESS
    values = {}
    for key, value in doc.items():
        name = _KEY_ALIASES.get(key, key)
        if name not in allowed:
            raise ConfigError(f"unknown config key {section}.{key}")
        if name in _TUPLE_FIELDS and value is not None:
            value = tuple(value)
        values[name] = value
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section} config: {exc}") from exc


def from_dict(doc: dict) -> ExperimentConfig:
    """Validate and materialize a config document; unknown keys are rejected."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    known_sections = {"seed", "paths", "synth", "bootstrap", "discovery", "eval"}
    for key in doc:
        if key not in known_sections:
            raise ConfigError(f"unknown config key {key}")

    seed = doc.get("seed", 0)
    if SEED_ENV_VAR in os.environ:
        seed = int(os.environ[SEED_ENV_VAR])
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")

    sections = {}
    for name in ("paths", "synth", "bootstrap", "eval"):
        sections[name] = _build_section(_SECTION_TYPES[name], doc.get(name, {}), name)

    disc_doc = dict(doc.get("discovery", {}))
    sub = {}
    for name in ("prior", "sinkhorn", "memory", "heads"):
        sub[name] = _build_section(_SECTION_TYPES[name], disc_doc.pop(name, {}), f"discovery.{name}")
    allowed = {f.name for f in fields(DiscoveryConfig)} - {"prior", "sinkhorn", "memory", "heads"} - _SEEDLESS
    disc_values = {}
    for key, value in disc_doc.items():
        if key not in allowed:
            raise ConfigError(f"unknown config key discovery.{key}")
        if key in _TUPLE_FIELDS and value is not None:
            value = tuple(value)
        disc_values[key] = value
    try:
        discovery = DiscoveryConfig(seed=seed, **disc_values, **sub)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid discovery config: {exc}") from exc

    synth = sections["synth"]
    synth = SynthSpec(**{**_section_dict(synth), "seed": seed})
    return ExperimentConfig(
        seed=seed,
        paths=sections["paths"],
        synth=synth,
        bootstrap=sections["bootstrap"],
        discovery=discovery,
        eval=sections["eval"],
    )


def _section_dict(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def to_dict(config: ExperimentConfig) -> dict:
    """JSON-ready echo of the effective configuration."""
    doc = asdict(config)
    disc = doc["discovery"]
    for section in ("prior", "sinkhorn", "memory", "heads"):
        disc[section] = {_FIELD_ALIASES.get(k, k): v for k, v in disc[section].items()}
    disc.pop("seed", None)
    doc["synth"].pop("seed", None)
    return _listify(doc)


def _listify(value):
    if isinstance(value, dict):
        return {k: _listify(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_listify(v) for v in value]
    return value
