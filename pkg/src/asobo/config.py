"""Pipeline configuration: nested dataclasses loaded from YAML with dotted overrides."""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import yaml


@dataclass
class ArraySection:
    mic_count: int = 8
    radius: float = 0.1
    sound_speed: float = 343.0


@dataclass
class BeamSection:
    filter_count: int = 8
    loading: float = 1e-3
    noise_model: str = "diffuse"


@dataclass
class ModelSection:
    hidden: int = 256
    n_mels: int = 64
    hidden_channels: int = 64
    kernel_size: int = 3
    blocks: int = 3
    layers_per_block: int = 5


@dataclass
class TrainSection:
    lr: float = 1e-3
    batch_size: int = 64
    segment_seconds: float = 2.0
    epochs: int = 1
    steps: int = 0  # 0: derive from epochs


@dataclass
class InferSection:
    window_seconds: float = 2.0
    hop_seconds: float = 0.5
    vad_threshold: float = 0.5
    osd_threshold: float = 0.5
    smoothing: int = 0  # median filter length in frames, 0 disables
    tau: float = 0.0  # 0: use 2 / filter_count


@dataclass
class RoomSection:
    dims: list = field(default_factory=lambda: [6.0, 5.0, 3.0])
    t60: float = 0.6
    array_center: list = field(default_factory=lambda: [3.0, 2.5, 1.2])
    max_order: int = 60


@dataclass
class ScenarioSection:
    num_sources: int = 2
    mode: str = "easy"
    distance_range: list = field(default_factory=lambda: [1.0, 2.0])
    duration: float = 4.0
    snr_db: float = 20.0


@dataclass
class PathsSection:
    filterbank: str = "filterbank.zip"


@dataclass
class PipelineConfig:
    seed: int = 0
    array: ArraySection = field(default_factory=ArraySection)
    beam: BeamSection = field(default_factory=BeamSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    infer: InferSection = field(default_factory=InferSection)
    room: RoomSection = field(default_factory=RoomSection)
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def to_dict(self):
        return dataclasses.asdict(self)

    def config_hash(self):
        """Short digest of every setting except file paths."""
        d = self.to_dict()
        d.pop("paths")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def tau(self):
        return self.infer.tau or 2.0 / self.beam.filter_count


def _build(cls, data, prefix=""):
    kwargs = {}
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in (data or {}).items():
        if key not in fields:
            raise KeyError(f"unknown config key {prefix}{key}")
        sub = fields[key].type
        if dataclasses.is_dataclass(sub):
            kwargs[key] = _build(sub, value, f"{prefix}{key}.")
        else:
            kwargs[key] = value
    return cls(**kwargs)


def _set_dotted(d, dotted, value):
    keys = dotted.split(".")
    for k in keys[:-1]:
        d = d.setdefault(k, {})
    d[keys[-1]] = value


def load_config(path=None, overrides=()):
    """Defaults < YAML file < ``key.sub=value`` overrides (values parsed as YAML scalars)."""
    data = {}
    if path:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ValueError(f"override {item!r} is not of the form key=value")
        _set_dotted(data, key.strip(), yaml.safe_load(raw))
    return _build(PipelineConfig, data)


def dump_config(cfg, path):
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)
