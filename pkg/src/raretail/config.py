"""Experiment configuration: schema, defaults, validation, hashing.

Every protocol constant lives here as a config default — completion length
100, two 10%-burn-in annealed arms, GR threshold 1.1, 100 bootstrap
replicas at 96% coverage — so nothing is hard-coded in the algorithms.
The serialized config travels verbatim into every output for provenance.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .observables import DEFAULT_ARI_CAP, OBSERVABLE_IDS
from .util import validate_edges

DEFAULT_PROMPT = "Once upon a time, in a big forest, there lived a rhinoc"
DEFAULT_COMPLETION_LENGTH = 100
DEFAULT_STEPS_PER_BIAS = 40_000
DEFAULT_DIRECT_SAMPLES = 200_000
DEFAULT_BURN_IN = 0.10
DEFAULT_GR_THRESHOLD = 1.1
DEFAULT_REPLICAS = 100
DEFAULT_COVERAGE = 0.96
DEFAULT_CHAINS_PER_ARM = 4
DEFAULT_DIRECT_CHAINS = 4


@dataclass
class BinsConfig:
    """Either explicit edges, or a lo/hi range with a width or a count."""

    edges: list[float] | None = None
    lo: float | None = None
    hi: float | None = None
    width: float | None = None
    count: int | None = None

    def resolve(self) -> np.ndarray:
        if self.edges is not None:
            return validate_edges(self.edges)
        if self.lo is None or self.hi is None:
            raise ValidationError("bins need explicit edges or a lo/hi range")
        if self.width is not None:
            n = round((self.hi - self.lo) / self.width)
            if n < 1 or not np.isclose(self.lo + n * self.width, self.hi, atol=1e-9):
                raise ValidationError("bin width must evenly divide the range")
            return validate_edges(self.lo + self.width * np.arange(n + 1))
        if self.count is not None:
            return validate_edges(np.linspace(self.lo, self.hi, self.count + 1))
        raise ValidationError("bins need a width or a count")

    @classmethod
    def parse(cls, raw) -> "BinsConfig":
        if isinstance(raw, list):
            return cls(edges=[float(x) for x in raw])
        if isinstance(raw, dict):
            return cls(
                edges=raw.get("edges"),
                lo=raw.get("lo"),
                hi=raw.get("hi"),
                width=raw.get("width"),
                count=raw.get("count"),
            )
        raise ValidationError("bins must be an edges array or a lo/hi spec")

    @classmethod
    def parse_inline(cls, text: str) -> "BinsConfig":
        """Parse "LO:HI:WIDTH" (as used by the command line)."""
        parts = text.split(":")
        if len(parts) != 3:
            raise ValidationError("inline bin spec must be LO:HI:WIDTH")
        lo, hi, width = (float(p) for p in parts)
        return cls(lo=lo, hi=hi, width=width)


def default_bins(observable: str, values: np.ndarray) -> np.ndarray:
    """Fallback bin edges when the config names none.

    ARI uses width-0.5 bins over [-22, 15.5]; integer-valued repeats get
    unit bins around the observed range; anything else gets 200 equal bins
    over the observed range.
    """
    key = observable.lower()
    if key == "ari":
        return BinsConfig(lo=-22.0, hi=15.5, width=0.5).resolve()
    if key == "repeats":
        lo = float(np.floor(values.min())) - 0.5
        hi = float(np.floor(values.max())) + 0.5
        return validate_edges(np.arange(lo, hi + 1.0))
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    return validate_edges(np.linspace(lo, hi, 201))


@dataclass
class ScheduleConfig:
    """Positive/negative annealing arms and the per-bias step count."""

    positive: list[float] = field(default_factory=list)
    negative: list[float] = field(default_factory=list)
    steps_per_bias: int = DEFAULT_STEPS_PER_BIAS

    def validate(self):
        if self.steps_per_bias < 1:
            raise ValidationError("steps_per_bias must be >= 1")
        for name, arm in (("positive", self.positive), ("negative", self.negative)):
            mags = [abs(b) for b in arm]
            if any(b < a for a, b in zip(mags, mags[1:])):
                raise ValidationError(f"{name} arm must have nondecreasing |bias|")
            if name == "positive" and any(b < 0 for b in arm):
                raise ValidationError("positive arm must not contain negative biases")
            if name == "negative" and any(b > 0 for b in arm):
                raise ValidationError("negative arm must not contain positive biases")


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one run from a seed."""

    model: dict | str = "model.json"
    prompt_text: str | None = DEFAULT_PROMPT
    prompt_tokens: list[int] | None = None
    completion_length: int = DEFAULT_COMPLETION_LENGTH
    observable: str = "ari"
    ari_cap: float = DEFAULT_ARI_CAP
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    chains_per_arm: int = DEFAULT_CHAINS_PER_ARM
    direct_samples: int = DEFAULT_DIRECT_SAMPLES
    direct_chains: int = DEFAULT_DIRECT_CHAINS
    burn_in: float = DEFAULT_BURN_IN
    gr_threshold: float = DEFAULT_GR_THRESHOLD
    bins: BinsConfig | None = None
    bootstrap_replicas: int = DEFAULT_REPLICAS
    coverage: float = DEFAULT_COVERAGE
    seed: int = 0
    replica_exchange: bool = False
    mbar_tol: float = 1e-8
    mbar_max_iter: int = 10_000

    def validate(self):
        if self.completion_length < 1:
            raise ValidationError("completion_length must be >= 1")
        if self.observable.lower() not in OBSERVABLE_IDS:
            raise ValidationError(f"unknown observable {self.observable!r}")
        if not 0.0 <= self.burn_in < 1.0:
            raise ValidationError("burn_in must be in [0, 1)")
        if not 0.0 < self.coverage < 1.0:
            raise ValidationError("coverage must be in (0, 1)")
        if self.gr_threshold <= 1.0:
            raise ValidationError("gr_threshold must exceed 1")
        if self.direct_samples < 0 or self.direct_chains < 1:
            raise ValidationError("need direct_samples >= 0 and direct_chains >= 1")
        if self.chains_per_arm < 1:
            raise ValidationError("chains_per_arm must be >= 1")
        if self.bootstrap_replicas < 0:
            raise ValidationError("bootstrap_replicas must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must fit in 64 bits")
        self.schedule.validate()
        if self.direct_samples == 0 and not (self.schedule.positive or self.schedule.negative):
            raise ValidationError("config generates no samples at all")
        if self.prompt_text is None and not self.prompt_tokens:
            raise ValidationError("a prompt (text or tokens) is required")
        if self.bins is not None:
            self.bins.resolve()

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        out = asdict(self)
        if self.bins is None:
            out.pop("bins")
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        unknown = set(raw) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValidationError(f"unknown config fields: {sorted(unknown)}")
        if "schedule" in raw and isinstance(raw["schedule"], dict):
            raw["schedule"] = ScheduleConfig(**raw["schedule"])
        if "bins" in raw and raw["bins"] is not None and not isinstance(raw["bins"], BinsConfig):
            raw["bins"] = BinsConfig.parse(raw["bins"])
        if "prompt_tokens" in raw and raw["prompt_tokens"]:
            raw.setdefault("prompt_text", None)
        config = cls(**raw)
        config.validate()
        return config

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise ValidationError("config file must hold a JSON object")
        return cls.from_dict(raw)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_config_file(path: str | Path) -> list[ExperimentConfig]:
    """Load one config or a multi-prompt list of configs from a JSON file."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(raw, list):
        return [ExperimentConfig.from_dict(entry) for entry in raw]
    return [ExperimentConfig.from_dict(raw)]
