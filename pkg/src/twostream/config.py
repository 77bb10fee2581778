"""Run configuration: schema, file parsing, seed derivation.

Config files are line-oriented `section.key = value` text; `#` starts a
comment. Every knob has a default, so an absent file means the stock desk
run. The canonical text of the effective config (all keys, sorted) feeds the
config hash that cache stamps and run manifests record.
"""

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .dataset import DEFAULT_CLASS_COUNTS, DEFAULT_TRAIN_FRACTION, NUM_CLASSES
from .errors import ConfigError, DataError, FormatError
from .flow import FlowParams
from .fusion import SvmHyper
from .nn import SgdConfig
from .streams import DESK_BLOCKS, DESK_FC, StreamConfig, TrainHyper

STRATEGIES = ("spatial_only", "temporal_only", "early", "mid", "late")

# Classic flow weights assume broad image structure; at 64 px the lighter
# setting recovers the same displacements in about a third of the time.
PIPELINE_FLOW_DEFAULTS = FlowParams(alpha=10.0, gamma=5.0, pyramid_scale=0.7,
                                    outer_iterations=3, inner_iterations=2,
                                    sor_sweeps=15)


def _parse_int(text: str) -> int:
    return int(text, 10)


def _parse_counts(text: str) -> tuple:
    parts = [int(p) for p in text.split(",")]
    if len(parts) != NUM_CLASSES:
        raise ValueError(f"need {NUM_CLASSES} comma-separated counts")
    return tuple(parts)


def _parse_strategy(text: str) -> str:
    if text not in STRATEGIES:
        raise ValueError(f"strategy must be one of {', '.join(STRATEGIES)}")
    return text


def _parse_levels(text: str):
    if text == "auto":
        return None
    return int(text, 10)


def _format_levels(value) -> str:
    return "auto" if value is None else str(value)


def _format_plain(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


# section.key -> (RunConfig field, parser, formatter)
SCHEMA = {
    "run.seed": ("seed", _parse_int, _format_plain),
    "run.strategy": ("strategy", _parse_strategy, _format_plain),
    "run.jobs": ("jobs", _parse_int, _format_plain),
    "dataset.counts": ("counts", _parse_counts, _format_plain),
    "dataset.train_fraction": ("train_fraction", float, _format_plain),
    "dataset.num_frames": ("num_frames", _parse_int, _format_plain),
    "dataset.frame_height": ("frame_height", _parse_int, _format_plain),
    "dataset.frame_width": ("frame_width", _parse_int, _format_plain),
    "dataset.noise_level": ("noise_level", float, _format_plain),
    "flow.alpha": ("flow_alpha", float, _format_plain),
    "flow.gamma": ("flow_gamma", float, _format_plain),
    "flow.pyramid_scale": ("flow_pyramid_scale", float, _format_plain),
    "flow.levels": ("flow_levels", _parse_levels, _format_levels),
    "flow.outer_iterations": ("flow_outer_iterations", _parse_int, _format_plain),
    "flow.inner_iterations": ("flow_inner_iterations", _parse_int, _format_plain),
    "flow.sor_omega": ("flow_sor_omega", float, _format_plain),
    "flow.sor_sweeps": ("flow_sor_sweeps", _parse_int, _format_plain),
    "stream.stack_length": ("stack_length", _parse_int, _format_plain),
    "stream.clip_mag": ("clip_mag", float, _format_plain),
    "train.learning_rate": ("learning_rate", float, _format_plain),
    "train.momentum": ("momentum", float, _format_plain),
    "train.weight_decay": ("weight_decay", float, _format_plain),
    "train.batch_size": ("batch_size", _parse_int, _format_plain),
    "train.epochs": ("epochs", _parse_int, _format_plain),
    "train.frames_per_clip": ("frames_per_clip", _parse_int, _format_plain),
    "svm.c": ("svm_c", float, _format_plain),
    "svm.epochs": ("svm_epochs", _parse_int, _format_plain),
    "eval.sample_count": ("sample_count", _parse_int, _format_plain),
}

# Keys that change where or how fast the run executes, not what it computes.
_NON_SEMANTIC_KEYS = ("run.jobs", "run.strategy")


@dataclass(frozen=True)
class RunConfig:
    """Everything one run needs; the desk-scale experiment by default."""

    out_dir: Path
    seed: int = 0
    strategy: str = "mid"
    jobs: int = 1
    counts: tuple = DEFAULT_CLASS_COUNTS
    train_fraction: float = DEFAULT_TRAIN_FRACTION
    num_frames: int = 30
    frame_height: int = 64
    frame_width: int = 64
    noise_level: float = 0.02
    flow_alpha: float = PIPELINE_FLOW_DEFAULTS.alpha
    flow_gamma: float = PIPELINE_FLOW_DEFAULTS.gamma
    flow_pyramid_scale: float = PIPELINE_FLOW_DEFAULTS.pyramid_scale
    flow_levels: int = None
    flow_outer_iterations: int = PIPELINE_FLOW_DEFAULTS.outer_iterations
    flow_inner_iterations: int = PIPELINE_FLOW_DEFAULTS.inner_iterations
    flow_sor_omega: float = PIPELINE_FLOW_DEFAULTS.sor_omega
    flow_sor_sweeps: int = PIPELINE_FLOW_DEFAULTS.sor_sweeps
    stack_length: int = 5
    clip_mag: float = 8.0
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 16
    epochs: int = 30
    frames_per_clip: int = 2
    svm_c: float = 1.0
    svm_epochs: int = 50
    sample_count: int = 5

    def __post_init__(self):
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, "
                              f"got {self.strategy!r}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        if self.stack_length < 1:
            raise ConfigError(f"stack_length must be >= 1, got {self.stack_length}")
        if self.sample_count < 1:
            raise ConfigError(f"sample_count must be >= 1, got {self.sample_count}")
        if self.num_frames - 1 - self.stack_length < 0:
            raise ConfigError(
                f"num_frames={self.num_frames} leaves no room for a "
                f"length-{self.stack_length} flow window")
        # Constructing the derived objects validates their own ranges early.
        self.flow_params()
        self.train_hyper("spatial")
        self.svm_hyper()

    def flow_params(self) -> FlowParams:
        return FlowParams(alpha=self.flow_alpha, gamma=self.flow_gamma,
                          pyramid_scale=self.flow_pyramid_scale,
                          levels=self.flow_levels,
                          outer_iterations=self.flow_outer_iterations,
                          inner_iterations=self.flow_inner_iterations,
                          sor_omega=self.flow_sor_omega,
                          sor_sweeps=self.flow_sor_sweeps)

    def stream_config(self, kind: str) -> StreamConfig:
        channels = {"spatial": 3,
                    "temporal": 2 * self.stack_length,
                    "early": 3 + 2 * self.stack_length}[kind]
        return StreamConfig(kind=kind,
                            input_dims=(self.frame_height, self.frame_width,
                                        channels),
                            blocks=DESK_BLOCKS, fc_dims=DESK_FC)

    def weight_seed(self, kind: str) -> int:
        tag = {"spatial": 1, "temporal": 2, "early": 3}[kind]
        return int(np.random.SeedSequence([self.seed, tag]).generate_state(1)[0])

    def sgd_seed(self, kind: str) -> int:
        tag = {"spatial": 4, "temporal": 5, "early": 6}[kind]
        return int(np.random.SeedSequence([self.seed, tag]).generate_state(1)[0])

    def train_hyper(self, kind: str) -> TrainHyper:
        sgd = SgdConfig(learning_rate=self.learning_rate,
                        momentum=self.momentum,
                        weight_decay=self.weight_decay,
                        seed=self.sgd_seed(kind))
        return TrainHyper(sgd=sgd, batch_size=self.batch_size,
                          epochs=self.epochs,
                          frames_per_clip_per_epoch=self.frames_per_clip)

    def svm_hyper(self) -> SvmHyper:
        return SvmHyper(c=self.svm_c, epochs=self.svm_epochs, seed=self.seed)

    def canonical_text(self) -> str:
        """All schema keys with effective values, sorted; hashed for caching."""
        by_field = {f.name: getattr(self, f.name) for f in fields(self)}
        lines = []
        for key in sorted(SCHEMA):
            name, _, formatter = SCHEMA[key]
            lines.append(f"{key} = {formatter(by_field[name])}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        """Hash of the semantic config: jobs and strategy do not change any
        artifact's content, so they stay out of the hash."""
        lines = [line for line in self.canonical_text().splitlines()
                 if line.split(" = ")[0] not in _NON_SEMANTIC_KEYS]
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]


def parse_config_text(text: str, source: str = "config") -> dict:
    """Parse `section.key = value` lines into {schema key: raw value}."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"{source}:{lineno}: expected 'section.key = "
                              f"value', got {raw.strip()!r}")
        key = key.strip()
        value = value.strip()
        if "." not in key:
            raise FormatError(f"{source}:{lineno}: key {key!r} has no section")
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        if not value:
            raise FormatError(f"{source}:{lineno}: empty value for {key!r}")
        values[key] = value
    return values


def load_run_config(out_dir, config_path=None, **overrides) -> RunConfig:
    """Build a RunConfig from defaults, an optional file, and CLI overrides.

    `overrides` uses RunConfig field names (seed, strategy, jobs) and wins
    over the file; None values are ignored.
    """
    kwargs = {}
    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise DataError(f"config file {path} not found")
        raw = parse_config_text(path.read_text(), source=str(path))
        for key, value in raw.items():
            name, parser, _ = SCHEMA[key]
            try:
                kwargs[name] = parser(value)
            except ValueError as exc:
                raise ConfigError(f"{path}: bad value for {key}: {exc}") from None
    for name, value in overrides.items():
        if value is not None:
            kwargs[name] = value
    return RunConfig(out_dir=out_dir, **kwargs)


def with_strategy(config: RunConfig, strategy: str) -> RunConfig:
    return replace(config, strategy=strategy)
