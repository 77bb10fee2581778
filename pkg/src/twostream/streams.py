"""Spatial and temporal stream CNNs: configuration, training, inference.

The spatial stream reads a single RGB frame; the temporal stream reads a
stacked flow window of 2L channels. An "early" stream reads both at once
(3 + 2L channels) and backs the early fusion strategy. All three share the
conv/pool/dense topology, so one config type and one builder cover them.

Stream checkpoints are a text key=value header describing the config followed
by a %BINARY line and the raw layer blob.
"""

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import DatasetManifest, VideoClip, load_clip
from .errors import (ConfigError, ConvergenceError, DataError, FormatError,
                     NumericError, ShapeError)
from .flow.fields import (FlowStack, load_flow_stack, normalize_flow_for_net,
                          slice_stack)
from .nn import (Conv3x3, Dense, Flatten, MaxPool2x2, ReLU,
                 batch_cross_entropy, cross_entropy_backward,
                 deserialize_layers, serialize_layers, softmax)
from .nn.optim import SgdConfig, SgdOptimizer

STREAM_KINDS = ("spatial", "temporal", "early")

CHECKPOINT_VERSION = 1
_BINARY_MARKER = b"%BINARY\n"

# Conv blocks as (conv_count, out_channels); every block ends in a 2x2 pool.
DESK_BLOCKS = ((1, 8), (1, 16), (2, 32))
DESK_FC = (128, 6)
DESK_INPUT_SIZE = 64
DESK_STACK_LENGTH = 5

FULL_BLOCKS = ((2, 64), (2, 128), (3, 256), (3, 512), (3, 512))
FULL_FC = (4096, 4096, 6)
FULL_INPUT_SIZE = 224
FULL_STACK_LENGTH = 10


def _kind_channels(kind: str, stack_length: int) -> int:
    if kind == "spatial":
        return 3
    if kind == "temporal":
        return 2 * stack_length
    return 3 + 2 * stack_length


@dataclass(frozen=True)
class StreamConfig:
    """Topology of one stream network.

    `blocks` lists (conv_count, out_channels) per conv block; a 2x2 max-pool
    follows each block. `fc_dims` lists the dense widths, ending in the
    feature width and then n_classes.
    """

    kind: str
    input_dims: tuple  # (height, width, channels)
    blocks: tuple
    fc_dims: tuple
    n_classes: int = 6

    def __post_init__(self):
        if self.kind not in STREAM_KINDS:
            raise ConfigError(f"kind must be one of {STREAM_KINDS}, got {self.kind!r}")
        dims = tuple(int(d) for d in self.input_dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ConfigError(f"input_dims must be 3 positive integers, got {self.input_dims}")
        object.__setattr__(self, "input_dims", dims)
        h, w, c = dims
        if self.kind == "spatial" and c != 3:
            raise ConfigError(f"spatial stream input must have 3 channels, got {c}")
        if self.kind == "temporal" and (c < 2 or c % 2):
            raise ConfigError(f"temporal stream input channels must be even (2L), got {c}")
        if self.kind == "early" and (c < 5 or (c - 3) % 2):
            raise ConfigError(f"early stream input channels must be 3 + 2L, got {c}")
        blocks = tuple((int(n), int(ch)) for n, ch in self.blocks)
        if not blocks or any(n < 1 or ch < 1 for n, ch in blocks):
            raise ConfigError(f"blocks must be non-empty (count, channels) pairs, got {self.blocks}")
        object.__setattr__(self, "blocks", blocks)
        for i in range(len(blocks)):
            if h < 2 or w < 2:
                raise ConfigError(
                    f"block {i}: pooling a {h}x{w} map would drop below 1x1")
            h, w = h // 2, w // 2
        fc = tuple(int(d) for d in self.fc_dims)
        if len(fc) < 2 or min(fc) < 1:
            raise ConfigError(
                f"fc_dims needs at least (feature_dim, n_classes), got {self.fc_dims}")
        object.__setattr__(self, "fc_dims", fc)
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        if fc[-1] != self.n_classes:
            raise ConfigError(
                f"fc_dims must end in n_classes={self.n_classes}, got {fc[-1]}")

    @property
    def feature_dim(self) -> int:
        return self.fc_dims[-2]

    @property
    def stack_length(self) -> int:
        """Flow window length L this stream consumes (0 for spatial)."""
        c = self.input_dims[2]
        if self.kind == "temporal":
            return c // 2
        if self.kind == "early":
            return (c - 3) // 2
        return 0

    def pooled_dims(self) -> tuple:
        h, w, _ = self.input_dims
        for _ in self.blocks:
            h, w = h // 2, w // 2
        return h, w

    def flat_dim(self) -> int:
        h, w = self.pooled_dims()
        return h * w * self.blocks[-1][1]


def desk_config(kind: str = "spatial", stack_length: int = DESK_STACK_LENGTH,
                n_classes: int = 6) -> StreamConfig:
    """Small preset that trains in minutes on one core."""
    return StreamConfig(
        kind=kind,
        input_dims=(DESK_INPUT_SIZE, DESK_INPUT_SIZE, _kind_channels(kind, stack_length)),
        blocks=DESK_BLOCKS,
        fc_dims=DESK_FC[:-1] + (n_classes,),
        n_classes=n_classes,
    )


def full_config(kind: str = "spatial", stack_length: int = FULL_STACK_LENGTH,
                n_classes: int = 6) -> StreamConfig:
    """VGG16-shaped preset: 13 conv layers, 5 pools, 3 dense layers."""
    return StreamConfig(
        kind=kind,
        input_dims=(FULL_INPUT_SIZE, FULL_INPUT_SIZE, _kind_channels(kind, stack_length)),
        blocks=FULL_BLOCKS,
        fc_dims=FULL_FC[:-1] + (n_classes,),
        n_classes=n_classes,
    )


def _check_chain(config: StreamConfig, layers) -> None:
    """Walk the layer list symbolically; reject the first shape break."""
    h, w, c = config.input_dims
    flat = None  # vector length once flattened, None while still a map
    for i, layer in enumerate(layers):
        where = f"layer {i} ({layer.kind})"
        if layer.kind == "conv3x3":
            if flat is not None:
                raise ConfigError(f"{where}: convolution after flatten")
            if layer.in_channels != c:
                raise ConfigError(
                    f"{where}: expects {layer.in_channels} input channels, gets {c}")
            c = layer.out_channels
        elif layer.kind == "maxpool2x2":
            if flat is not None:
                raise ConfigError(f"{where}: pooling after flatten")
            if h < 2 or w < 2:
                raise ConfigError(f"{where}: cannot pool a {h}x{w} map")
            h, w = h // 2, w // 2
        elif layer.kind == "flatten":
            if flat is not None:
                raise ConfigError(f"{where}: repeated flatten")
            flat = h * w * c
        elif layer.kind == "dense":
            if flat is None:
                raise ConfigError(f"{where}: dense layer before flatten")
            if layer.in_dim != flat:
                raise ConfigError(
                    f"{where}: expects input length {layer.in_dim}, gets {flat}")
            flat = layer.out_dim
        elif layer.kind != "relu":
            raise ConfigError(f"{where}: unsupported layer kind")
    if not layers or flat is None:
        raise ConfigError("model never flattens to a logit vector")
    if flat != config.n_classes:
        raise ConfigError(
            f"model ends with a length-{flat} vector, expected n_classes={config.n_classes}")
    last = layers[-1]
    if last.kind != "dense" or last.in_dim != config.feature_dim:
        raise ConfigError(
            "final layer must be a dense map from the "
            f"{config.feature_dim}-wide feature, got {last.kind}")


@dataclass
class StreamModel:
    """A built stream: config, ordered layers, and the input mean offset.

    `input_offset` is subtracted per channel before the first layer; training
    sets it to the training-set channel means for RGB channels and leaves flow
    channels at zero (those are already centred by normalize_flow_for_net).
    """

    config: StreamConfig
    layers: list
    input_offset: np.ndarray = None

    def __post_init__(self):
        c = self.config.input_dims[2]
        if self.input_offset is None:
            self.input_offset = np.zeros(c, dtype=np.float32)
        else:
            self.input_offset = np.asarray(self.input_offset, dtype=np.float32)
            if self.input_offset.shape != (c,):
                raise ShapeError(
                    f"input_offset must have shape ({c},), got {self.input_offset.shape}")
            if not np.all(np.isfinite(self.input_offset)):
                raise NumericError("input_offset contains non-finite values")
        _check_chain(self.config, self.layers)

    @property
    def parameters(self) -> list:
        return [l.params for l in self.layers if l.params is not None]

    def _prepare(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float32)
        dims = self.config.input_dims
        if x.ndim == 3 and x.shape == dims:
            pass
        elif x.ndim == 4 and x.shape[1:] == dims:
            pass
        else:
            raise ShapeError(
                f"{self.config.kind} stream expects input dims {dims}, got {x.shape}")
        return x - self.input_offset

    def logits(self, x: np.ndarray) -> np.ndarray:
        x = self._prepare(x)
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def feature_values(self, x: np.ndarray) -> np.ndarray:
        """Activations feeding the final dense layer (post-ReLU)."""
        x = self._prepare(x)
        for layer in self.layers[:-1]:
            x = layer.forward(x)
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad


def build_stream(config: StreamConfig, seed: int = 0) -> StreamModel:
    """He-initialized model for `config`; same seed gives identical weights."""
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    layers = []
    channels = config.input_dims[2]
    for conv_count, out_channels in config.blocks:
        for _ in range(conv_count):
            layers.append(Conv3x3(channels, out_channels, rng=rng))
            layers.append(ReLU())
            channels = out_channels
        layers.append(MaxPool2x2())
    layers.append(Flatten())
    width = config.flat_dim()
    for hidden in config.fc_dims[:-1]:
        layers.append(Dense(width, hidden, rng=rng))
        layers.append(ReLU())
        width = hidden
    layers.append(Dense(width, config.fc_dims[-1], rng=rng))
    return StreamModel(config=config, layers=layers)


@dataclass(frozen=True)
class StreamFeature:
    """Penultimate-layer activations of one stream for one sample."""

    values: np.ndarray
    source: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 1:
            raise ShapeError(f"feature must be a vector, got rank {values.ndim}")
        if not np.all(np.isfinite(values)):
            raise NumericError("feature contains non-finite values")
        object.__setattr__(self, "values", values)
        if self.source not in STREAM_KINDS:
            raise ConfigError(f"source must be one of {STREAM_KINDS}, got {self.source!r}")

    def __len__(self) -> int:
        return self.values.shape[0]


def predict_frame(model: StreamModel, x: np.ndarray) -> np.ndarray:
    """Class probabilities for one input sample."""
    if np.asarray(x).ndim != 3:
        raise ShapeError("predict_frame takes a single (H, W, C) input")
    return softmax(model.logits(x))


def extract_feature(model: StreamModel, x: np.ndarray) -> StreamFeature:
    if np.asarray(x).ndim != 3:
        raise ShapeError("extract_feature takes a single (H, W, C) input")
    return StreamFeature(values=model.feature_values(x), source=model.config.kind)


def sample_anchors(num_frames: int, stack_length: int,
                   sampling: str = "uniform", count: int = 5,
                   step: int = None) -> np.ndarray:
    """Frame indices tau at which a clip is sampled for video-level scoring.

    A temporal sample at tau consumes flow fields tau .. tau+L-1, so the last
    valid anchor is num_frames - 1 - L (L = 0 for the spatial stream).
    "uniform" spreads `count` anchors evenly (duplicates collapse on short
    clips); "every" takes every `step`-th frame.
    """
    tau_max = num_frames - 1 - stack_length
    if tau_max < 0:
        raise DataError(
            f"clip with {num_frames} frames is too short for a length-{stack_length} "
            "flow window")
    if sampling == "uniform":
        if count < 1:
            raise ConfigError(f"sample count must be >= 1, got {count}")
        return np.unique(np.round(np.linspace(0.0, tau_max, count)).astype(np.int64))
    if sampling == "every":
        if step is None or step < 1:
            raise ConfigError(f"'every' sampling needs a step >= 1, got {step}")
        return np.arange(0, tau_max + 1, step, dtype=np.int64)
    raise ConfigError(f"sampling must be 'uniform' or 'every', got {sampling!r}")


def _sample_input(model: StreamModel, clip: VideoClip, stack: FlowStack,
                  tau: int, clip_mag: float) -> np.ndarray:
    kind = model.config.kind
    if kind == "spatial":
        return clip.frames[tau]
    window = slice_stack(stack, tau, model.config.stack_length)
    flow = normalize_flow_for_net(window, clip_mag=clip_mag)
    if kind == "temporal":
        return flow
    return np.concatenate([clip.frames[tau], flow], axis=2)


def predict_video(model: StreamModel, clip: VideoClip, stack: FlowStack = None,
                  sampling: str = "uniform", count: int = 5, step: int = None,
                  clip_mag: float = 8.0, anchors=None) -> np.ndarray:
    """Mean of per-sample class probabilities over the sampled anchors.

    Pass explicit `anchors` to score several streams at identical tau values
    (fusion needs aligned samples); otherwise anchors come from the model's
    own window constraint.
    """
    if model.config.kind != "spatial" and stack is None:
        raise DataError(f"{model.config.kind} stream scoring needs a flow stack")
    if anchors is None:
        anchors = sample_anchors(clip.num_frames, model.config.stack_length,
                                 sampling=sampling, count=count, step=step)
    anchors = np.asarray(anchors, dtype=np.int64)
    if anchors.size == 0:
        raise DataError("no sample anchors")
    batch = np.stack([
        _sample_input(model, clip, stack, int(tau), clip_mag) for tau in anchors
    ])
    probs = softmax(model.logits(batch))
    return probs.mean(axis=0)


@dataclass(frozen=True)
class TrainHyper:
    """Training-loop settings; sgd carries the optimizer settings and seed."""

    sgd: SgdConfig = field(default_factory=SgdConfig)
    batch_size: int = 16
    epochs: int = 30
    frames_per_clip_per_epoch: int = 2

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.frames_per_clip_per_epoch < 1:
            raise ConfigError("frames_per_clip_per_epoch must be >= 1, "
                              f"got {self.frames_per_clip_per_epoch}")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: float
    train_accuracy: float


def write_history(history, path) -> None:
    lines = ["epoch,loss,train_accuracy"]
    lines += [f"{e.epoch},{e.loss:.6f},{e.train_accuracy:.4f}" for e in history]
    Path(path).write_text("\n".join(lines) + "\n")


def flow_stack_path(flow_dir, clip_path) -> Path:
    """Where the precomputed flow stack for a clip lives: <stem>.flow."""
    return Path(flow_dir) / (Path(clip_path).stem + ".flow")


class _FlowCache:
    """Lazy per-clip flow stacks so a missing file fails at the sampled tau."""

    def __init__(self, flow_dir, manifest, entries):
        self._dir = flow_dir
        self._root = manifest.root
        self._entries = entries
        self._stacks = {}

    def get(self, index: int, tau: int) -> FlowStack:
        stack = self._stacks.get(index)
        if stack is None:
            entry = self._entries[index]
            path = flow_stack_path(self._dir, entry.path)
            if not path.is_file():
                raise DataError(
                    f"flow stack {path} for clip {entry.path} not found "
                    f"(needed at tau={tau})")
            stack = load_flow_stack(path)
            self._stacks[index] = stack
        return stack


def _training_offset(config: StreamConfig, clips) -> np.ndarray:
    """Per-channel input mean: RGB channels from the data, flow channels zero."""
    offset = np.zeros(config.input_dims[2], dtype=np.float32)
    if config.kind == "temporal":
        return offset
    total = np.zeros(3, dtype=np.float64)
    count = 0
    for clip in clips:
        total += clip.frames.mean(axis=(0, 1, 2), dtype=np.float64) * clip.num_frames
        count += clip.num_frames
    offset[:3] = (total / count).astype(np.float32)
    return offset


def train_stream(model: StreamModel, manifest: DatasetManifest,
                 hyper: TrainHyper, flow_dir=None, clip_mag: float = 8.0,
                 history_path=None) -> list:
    """SGD training on the manifest's train split; returns per-epoch stats.

    Each epoch draws frames_per_clip_per_epoch random anchors per clip,
    shuffles them, and runs minibatches of batch_size. The model is updated
    in place; seeds fix the anchor draws, the shuffle, and hence the result.
    """
    kind = model.config.kind
    length = model.config.stack_length
    if kind != "spatial" and flow_dir is None:
        raise ConfigError(f"{kind} stream training needs flow_dir")
    entries = manifest.split_entries("train")
    if not entries:
        raise DataError("manifest has no training entries")
    clips = []
    for entry in entries:
        clip = load_clip(manifest.resolve(entry))
        if clip.label != entry.label:
            raise DataError(f"{entry.path}: clip label {clip.label} does not "
                            f"match manifest label {entry.label}")
        if clip.num_frames - 1 - length < 0:
            raise DataError(f"{entry.path}: {clip.num_frames} frames is too "
                            f"short for a length-{length} flow window")
        clips.append(clip)
    flows = _FlowCache(flow_dir, manifest, entries) if kind != "spatial" else None

    model.input_offset = _training_offset(model.config, clips)
    labels_all = np.array([e.label for e in entries], dtype=np.int64)
    optimizer = SgdOptimizer(hyper.sgd, model.parameters)
    rng = np.random.default_rng(np.random.SeedSequence([hyper.sgd.seed, 7]))
    history = []
    batch_index = 0
    for epoch in range(1, hyper.epochs + 1):
        draws = []
        for ci, clip in enumerate(clips):
            taus = rng.integers(0, clip.num_frames - length,
                                size=hyper.frames_per_clip_per_epoch)
            draws.extend((ci, int(tau)) for tau in taus)
        order = rng.permutation(len(draws))
        loss_sum = 0.0
        correct = 0
        for start in range(0, len(order), hyper.batch_size):
            picked = [draws[i] for i in order[start:start + hyper.batch_size]]
            batch = np.stack([
                _sample_input(model, clips[ci],
                              flows.get(ci, tau) if flows else None,
                              tau, clip_mag)
                for ci, tau in picked
            ])
            labels = labels_all[[ci for ci, _ in picked]]
            logits = model.logits(batch)
            if not np.all(np.isfinite(logits)):
                raise ConvergenceError(
                    f"non-finite logits in batch {batch_index}",
                    batch_index=batch_index)
            probs = softmax(logits)
            loss = batch_cross_entropy(probs, labels)
            if not np.isfinite(loss):
                raise ConvergenceError(
                    f"non-finite loss in batch {batch_index}",
                    batch_index=batch_index)
            loss_sum += loss * len(picked)
            correct += int((probs.argmax(axis=1) == labels).sum())
            grad = cross_entropy_backward(probs, labels) / len(picked)
            model.backward(grad.astype(np.float32))
            optimizer.step()
            batch_index += 1
        history.append(EpochStats(
            epoch=epoch,
            loss=loss_sum / len(order),
            train_accuracy=correct / len(order),
        ))
    if history_path is not None:
        write_history(history, history_path)
    return history


def _format_offset(offset: np.ndarray) -> str:
    return ",".join(float(v).hex() for v in offset)


def _parse_offset(text: str, source: str) -> np.ndarray:
    try:
        values = [float.fromhex(part) for part in text.split(",")]
    except ValueError:
        raise FormatError(f"{source}: bad input_offset {text!r}") from None
    return np.array(values, dtype=np.float32)


def serialize_stream(model: StreamModel) -> bytes:
    cfg = model.config
    header = "".join([
        f"version={CHECKPOINT_VERSION}\n",
        f"kind={cfg.kind}\n",
        f"height={cfg.input_dims[0]}\n",
        f"width={cfg.input_dims[1]}\n",
        f"channels={cfg.input_dims[2]}\n",
        "blocks=" + ",".join(f"{n}x{ch}" for n, ch in cfg.blocks) + "\n",
        "fc=" + ",".join(str(d) for d in cfg.fc_dims) + "\n",
        f"n_classes={cfg.n_classes}\n",
        f"input_offset={_format_offset(model.input_offset)}\n",
    ])
    return header.encode() + _BINARY_MARKER + serialize_layers(model.layers)


def deserialize_stream(data: bytes, source: str = "stream checkpoint") -> StreamModel:
    marker = data.find(_BINARY_MARKER)
    if marker < 0:
        raise FormatError(f"{source}: missing {_BINARY_MARKER.strip().decode()} marker")
    try:
        text = data[:marker].decode()
    except UnicodeDecodeError as exc:
        raise FormatError(f"{source}: header is not text: {exc}") from None
    fields = {}
    for line in io.StringIO(text):
        line = line.strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"{source}: header line {line!r} is not key=value")
        fields[key.strip()] = value.strip()
    expected = {"version", "kind", "height", "width", "channels", "blocks",
                "fc", "n_classes", "input_offset"}
    missing = expected - fields.keys()
    if missing:
        raise FormatError(f"{source}: header misses {sorted(missing)}")
    unknown = fields.keys() - expected
    if unknown:
        raise FormatError(f"{source}: unknown header keys {sorted(unknown)}")
    try:
        version = int(fields["version"])
        dims = (int(fields["height"]), int(fields["width"]), int(fields["channels"]))
        blocks = tuple(
            tuple(int(p) for p in part.split("x"))
            for part in fields["blocks"].split(","))
        fc_dims = tuple(int(d) for d in fields["fc"].split(","))
        n_classes = int(fields["n_classes"])
    except ValueError as exc:
        raise FormatError(f"{source}: bad header value: {exc}") from None
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{source}: unsupported version {version}, "
                          f"expected {CHECKPOINT_VERSION}")
    if any(len(b) != 2 for b in blocks):
        raise FormatError(f"{source}: bad blocks field {fields['blocks']!r}")
    offset = _parse_offset(fields["input_offset"], source)
    layers = deserialize_layers(data[marker + len(_BINARY_MARKER):], source=source)
    try:
        config = StreamConfig(kind=fields["kind"], input_dims=dims,
                              blocks=blocks, fc_dims=fc_dims, n_classes=n_classes)
        return StreamModel(config=config, layers=layers, input_offset=offset)
    except (ConfigError, ShapeError, NumericError) as exc:
        raise FormatError(f"{source}: {exc}") from None


def save_stream(model: StreamModel, path) -> None:
    Path(path).write_bytes(serialize_stream(model))


def load_stream(path) -> StreamModel:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"stream checkpoint {p} not found")
    return deserialize_stream(p.read_bytes(), source=str(p))
