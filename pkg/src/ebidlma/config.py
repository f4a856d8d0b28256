"""Single-file run configuration shared by the CLI subcommands."""
import json
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError
from .separator import SeparationConfig
from .sourcemodel import DEFAULT_ANCHORS, DEFAULT_DELTA, AnchorSet

STFT_KEYS = ("window_ms", "hop_ms", "window_kind")
KINDS = ("gauss", "eb")
NU_MODES = ("anchors", "clipped")


def _from_section(cls, data, section):
    if not isinstance(data, dict):
        raise ConfigError(f"config section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in section {section!r}: {', '.join(unknown)}")
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    return cls(**values)


@dataclass
class TrainConfig:
    learning_rate: float = 3e-3
    epochs: int = 200
    batch_size: int = 128
    weight_decay: float = 1e-5
    grad_clip_norm: float = 10.0
    dropout_rate: float = 0.3
    context_frames: int = 3
    hidden: int = 64
    anchors: tuple = DEFAULT_ANCHORS
    delta: float = DEFAULT_DELTA
    loss: str = "eb"
    nu_mode: str = "anchors"
    target_gain: tuple = (0.05, 1.0)
    interferer_beta: tuple = (0.1, 1.0)
    rng_seed: int = 0

    def validate(self):
        if self.loss not in KINDS:
            raise ConfigError(f"loss must be one of {KINDS}")
        for name in ("learning_rate", "epochs", "batch_size", "grad_clip_norm", "delta", "hidden"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.weight_decay < 0 or self.context_frames < 0:
            raise ConfigError("weight_decay and context_frames must be non-negative")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        AnchorSet(tuple(self.anchors))
        return self


@dataclass
class StftSettings:
    window_ms: float = 512.0
    hop_ms: float = 256.0
    window_kind: str = "hamming"


@dataclass
class RunConfig:
    stft: StftSettings = field(default_factory=StftSettings)
    separation: SeparationConfig = field(default_factory=SeparationConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    SECTIONS = {"stft": StftSettings, "separation": SeparationConfig, "train": TrainConfig}

    def to_dict(self):
        return {name: asdict(getattr(self, name)) for name in self.SECTIONS}

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(data) - set(cls.SECTIONS))
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
        cfg = cls(**{name: _from_section(kind, data.get(name, {}), name) for name, kind in cls.SECTIONS.items()})
        return cfg.validate()

    def validate(self):
        self.separation.validate()
        self.train.validate()
        if not (self.stft.window_ms > 0 and self.stft.hop_ms > 0):
            raise ConfigError("window_ms and hop_ms must be positive")
        return self

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def loads(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.loads(fh.read())

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps() + "\n")
