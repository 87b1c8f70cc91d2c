"""Pipeline configuration (YAML or JSON file -> typed sections)."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .augmentor import Strategy
from .backends import (
    Backends, HttpEmotion, HttpLLM, HttpNLI, RetryPolicy, StubEmotion, StubEncoder, StubLLM, StubNLI,
    TransformerEncoder,
)
from .features import HeuristicConfig
from .fusion import FusionConfig
from .quality import HYPOTHESIS_TEMPLATE, KAPPA_THRESHOLD, MIN_BATCH


class ConfigError(ValueError):
    pass


def _build(cls, data: Optional[dict], where: str):
    data = dict(data or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"[{where}] unknown keys: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] {exc}") from None


@dataclass
class PathsConfig:
    corpus: str = "corpus.jsonl"
    dev_corpus: Optional[str] = None
    catalog: Optional[str] = None  # None -> bundled miniature catalog
    supplementary: Optional[str] = None
    output_root: str = "runs/default"


@dataclass
class EndpointConfig:
    endpoint: str = ""
    model: str = ""


@dataclass
class BackendsConfig:
    kind: str = "stub"  # stub | http
    seed: int = 0
    llm: dict = field(default_factory=dict)
    nli: dict = field(default_factory=dict)
    emotion: dict = field(default_factory=dict)
    encoder: dict = field(default_factory=lambda: {"kind": "stub", "n_buckets": 2048})
    retry_attempts: int = 3
    retry_base_delay: float = 1.0
    max_in_flight: int = 4
    timeout_s: float = 60.0
    stub_garbage_rate: float = 0.0

    def __post_init__(self):
        if self.kind not in ("stub", "http"):
            raise ValueError(f"backends.kind must be 'stub' or 'http', got {self.kind!r}")
        if self.retry_attempts < 1:
            raise ValueError("retry_attempts must be >= 1")

    def build(self) -> Backends:
        return Backends(llm=self.build_llm(), nli=self.build_nli(), emotion=self.build_emotion(),
                        encoder=self.build_encoder())

    def _http(self, cls, section: dict, name: str, **kw):
        ep = _build(EndpointConfig, section, f"backends.{name}")
        if not ep.endpoint:
            raise ConfigError(f"[backends.{name}] endpoint is required for kind 'http'")
        return cls(ep.endpoint, ep.model, timeout=self.timeout_s, max_in_flight=self.max_in_flight,
                   retry=RetryPolicy(self.retry_attempts, self.retry_base_delay), **kw)

    def build_llm(self):
        if self.kind == "stub":
            return StubLLM(self.stub_garbage_rate)
        return self._http(HttpLLM, self.llm, "llm")

    def build_nli(self):
        return StubNLI() if self.kind == "stub" else self._http(HttpNLI, self.nli, "nli")

    def build_emotion(self):
        return StubEmotion() if self.kind == "stub" else self._http(HttpEmotion, self.emotion, "emotion")

    def build_encoder(self):
        enc = dict(self.encoder)
        kind = enc.pop("kind", "stub")
        if kind == "stub":
            return StubEncoder(n_buckets=int(enc.get("n_buckets", 2048)), seed=self.seed)
        if kind == "transformer":
            return TransformerEncoder.from_pretrained(enc.get("name", "mental/mental-roberta-base"),
                                                      max_length=int(enc.get("max_length", 256)))
        raise ConfigError(f"[backends.encoder] unknown kind {kind!r}")


@dataclass
class SplitConfig:
    train: float = 0.8
    dev: float = 0.2
    seed: int = 0


@dataclass
class AugmentationConfig:
    strategy: str = "x2"
    cap_basis: str = "total"
    budget_factor: float = 1.5
    round_size: int = 50
    max_tokens: int = 128
    temperature: float = 0.7
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        self.parsed()

    def parsed(self) -> Strategy:
        return Strategy.parse(self.strategy, self.cap_basis)


@dataclass
class QcConfig:
    kappa_threshold: float = KAPPA_THRESHOLD
    min_batch: int = MIN_BATCH
    annotator: str = "tfidf"  # tfidf | dmrs
    on_rejection: str = "continue"  # continue | halt
    hypothesis_template: str = HYPOTHESIS_TEMPLATE

    def __post_init__(self):
        if not -1.0 <= self.kappa_threshold <= 1.0:
            raise ValueError(f"kappa_threshold must lie in [-1, 1], got {self.kappa_threshold}")
        if self.annotator not in ("tfidf", "dmrs"):
            raise ValueError(f"annotator must be 'tfidf' or 'dmrs', got {self.annotator!r}")
        if self.on_rejection not in ("continue", "halt"):
            raise ValueError(f"on_rejection must be 'continue' or 'halt', got {self.on_rejection!r}")


@dataclass
class AnalysisConfig:
    cdi_threshold_z: float = 0.5
    sink_label: int = 7


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    backends: BackendsConfig = field(default_factory=BackendsConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    qc: QcConfig = field(default_factory=QcConfig)
    features: HeuristicConfig = field(default_factory=HeuristicConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    base_dir: Path = field(default=Path("."), repr=False)

    SECTIONS = {
        "paths": PathsConfig, "backends": BackendsConfig, "split": SplitConfig,
        "augmentation": AugmentationConfig, "qc": QcConfig, "features": HeuristicConfig,
        "fusion": FusionConfig, "analysis": AnalysisConfig,
    }

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path = Path(".")) -> "PipelineConfig":
        doc = dict(doc or {})
        unknown = set(doc) - set(cls.SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        feats = dict(doc.get("features") or {})
        for key in ("insight_lexicon",):
            if key in feats:
                feats[key] = tuple(feats[key])
        if "filler_lexicon" in feats:
            feats["filler_lexicon"] = frozenset(feats["filler_lexicon"])
        doc["features"] = feats
        sections = {name: _build(klass, doc.get(name), name) for name, klass in cls.SECTIONS.items()}
        return cls(**sections, base_dir=Path(base_dir))

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        text = path.read_text(encoding="utf-8")
        doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
        return cls.from_dict(doc or {}, base_dir=path.parent)

    def resolve(self, p: Optional[str]) -> Optional[Path]:
        if p is None:
            return None
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path

    @property
    def output_root(self) -> Path:
        return self.resolve(self.paths.output_root)

    def check_paths(self) -> None:
        for name in ("corpus", "dev_corpus", "catalog", "supplementary"):
            p = self.resolve(getattr(self.paths, name))
            if p is not None and not p.is_file():
                raise ConfigError(f"[paths] {name} does not exist: {p}")

    def section(self, name: str) -> dict:
        obj = getattr(self, name)
        d = dataclasses.asdict(obj)
        return json.loads(json.dumps(d, default=lambda o: sorted(o) if isinstance(o, (set, frozenset)) else str(o)))
