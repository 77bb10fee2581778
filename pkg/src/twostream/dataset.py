"""Synthetic 6-class video benchmark: three shapes, two motion modes.

Classes are the product of shape {disk, square, triangle} and motion
{stationary, horizontal oscillation}. Appearance and motion cues are separable
by construction: a stationary clip parks its shape at a position drawn from
the same distribution an oscillating clip sweeps through, so no single frame
reveals the motion class, while oscillating clips move several pixels per
frame, well above the flow estimator's recovery threshold.
"""

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .binio import ByteReader, check_version, pack_f32_array, pack_i32
from .errors import ConfigError, DataError, FormatError, NumericError, ShapeError

SHAPE_NAMES = ("disk", "square", "triangle")
MOTION_NAMES = ("stationary", "oscillating")
CLASS_NAMES = tuple(f"{s}-{m}" for s in SHAPE_NAMES for m in MOTION_NAMES)
NUM_CLASSES = 6

# Pastel fills with near-equal luma (~0.8): color separates the shapes for
# the spatial stream while the flow data term sees the same contrast for all.
SHAPE_COLORS = np.array([
    [0.95, 0.80, 0.55],
    [0.55, 0.95, 0.55],
    [0.75, 0.80, 0.98],
])

DISK_RADIUS = 7.5
SQUARE_HALF_SIDE = 6.5
TRIANGLE_CIRCUMRADIUS = 10.0
SHAPE_EXTENT = 10.0  # max distance from centroid to silhouette edge

OSCILLATION_AMPLITUDE = (8.0, 12.0)   # px, per-clip uniform draw
OSCILLATION_PERIOD = (10.0, 20.0)     # frames, per-clip uniform draw

# Frames must fit the widest swing: extent + max amplitude + 2 px of slack on
# both sides horizontally, extent + 3 px vertically.
MIN_FRAME_HEIGHT = 32
MIN_FRAME_WIDTH = 50

BACKGROUND_RANGE = (0.30, 0.58)
BACKGROUND_SMOOTHING = 2.0
BACKGROUND_TEXTURE_SEED = 1905

SUPERSAMPLE = 4

CLIP_MAGIC = b"TSVC"
CLIP_VERSION = 1

# Class counts follow the reference corpus proportions at one-tenth scale.
DEFAULT_CLASS_COUNTS = (19, 17, 25, 26, 18, 20)
DEFAULT_TRAIN_FRACTION = 715 / 1237


def class_name(class_id: int) -> str:
    return CLASS_NAMES[class_id]


def class_shape(class_id: int) -> int:
    return class_id // 2


def class_is_oscillating(class_id: int) -> bool:
    return class_id % 2 == 1


@dataclass(frozen=True)
class ClipSpec:
    class_id: int
    seed: int
    num_frames: int = 30
    frame_size: tuple = (64, 64)
    noise_level: float = 0.02

    def __post_init__(self):
        if not 0 <= self.class_id < NUM_CLASSES:
            raise ConfigError(f"class_id must lie in [0, {NUM_CLASSES}), "
                              f"got {self.class_id}")
        if self.num_frames < 2:
            raise ConfigError(f"num_frames must be >= 2, got {self.num_frames}")
        h, w = self.frame_size
        if h < MIN_FRAME_HEIGHT or w < MIN_FRAME_WIDTH:
            raise ConfigError(f"frame_size must be at least "
                              f"{MIN_FRAME_HEIGHT}x{MIN_FRAME_WIDTH}, got {h}x{w}")
        if self.noise_level < 0:
            raise ConfigError(f"noise_level must be >= 0, got {self.noise_level}")


@dataclass
class VideoClip:
    frames: np.ndarray  # (T, H, W, 3) float32 in [0, 1]
    label: int
    spec: ClipSpec | None = None

    def __post_init__(self):
        f = self.frames
        if f.ndim != 4 or f.shape[3] != 3 or f.shape[0] < 1:
            raise ShapeError(f"frames must be (T, H, W, 3), got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise NumericError("clip contains non-finite pixel values")
        if f.min() < 0.0 or f.max() > 1.0:
            raise NumericError(f"pixel values must lie in [0, 1], got range "
                               f"[{f.min():.4g}, {f.max():.4g}]")
        if not 0 <= self.label < NUM_CLASSES:
            raise ShapeError(f"label must lie in [0, {NUM_CLASSES}), "
                             f"got {self.label}")
        if self.spec is not None:
            expected = (self.spec.num_frames, *self.spec.frame_size, 3)
            if f.shape != expected:
                raise ShapeError(f"frames {f.shape} disagree with spec "
                                 f"{expected}")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


def _clip_rngs(spec: ClipSpec):
    """Independent child generators for track and noise.

    Deriving each concern from its own stream keeps shape_track reproducible
    without rendering a full clip. The middle child is reserved (it used to
    seed a per-clip texture) so existing clip bytes stay stable.
    """
    children = np.random.SeedSequence([spec.seed, spec.class_id]).spawn(3)
    return tuple(np.random.default_rng(c) for c in children)


def shape_track(spec: ClipSpec) -> np.ndarray:
    """Ground-truth centroid positions, shape (T, 2) as (x, y) per frame.

    The per-clip center, amplitude, period, and phase are drawn identically
    for both motion modes; a stationary clip freezes the sinusoid at its
    phase, so single-frame position marginals match across motion classes.
    """
    rng, _, _ = _clip_rngs(spec)
    h, w = spec.frame_size
    margin_x = SHAPE_EXTENT + OSCILLATION_AMPLITUDE[1] + 2.0
    margin_y = SHAPE_EXTENT + 3.0
    cx = rng.uniform(margin_x, w - margin_x)
    cy = rng.uniform(margin_y, h - margin_y)
    amplitude = rng.uniform(*OSCILLATION_AMPLITUDE)
    period = rng.uniform(*OSCILLATION_PERIOD)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    t = np.arange(spec.num_frames, dtype=np.float64)
    if class_is_oscillating(spec.class_id):
        x = cx + amplitude * np.sin(2.0 * np.pi * t / period + phase)
    else:
        x = np.full_like(t, cx + amplitude * np.sin(phase))
    track = np.stack([x, np.full_like(t, cy)], axis=1)
    return track


def render_background(spec: ClipSpec) -> np.ndarray:
    """Static background texture, (H, W, 3) in [0, 1].

    One fixed texture shared by every clip of a given frame size: smoothed
    noise rescaled to a mid-gray band with a mild fixed tint. Sharing the
    texture matters for the benchmark's construction; a per-clip background
    would let the appearance stream fingerprint individual clips instead of
    learning shapes. It must also keep enough gradient for the flow solver
    to anchor the static region.
    """
    rng = np.random.default_rng(np.random.SeedSequence(BACKGROUND_TEXTURE_SEED))
    h, w = spec.frame_size
    base = gaussian_filter(rng.uniform(0.0, 1.0, (h, w)),
                           BACKGROUND_SMOOTHING, mode="wrap")
    lo, hi = BACKGROUND_RANGE
    base = lo + (hi - lo) * (base - base.min()) / (base.max() - base.min())
    gains = rng.uniform(0.92, 1.08, 3)
    return np.clip(base[:, :, None] * gains[None, None, :], 0.0, 1.0)


def _shape_alpha(shape_idx: int, cx: float, cy: float, h: int, w: int) -> np.ndarray:
    """Antialiased coverage mask via 4x4 supersampling; centroid at (cx, cy)."""
    n = SUPERSAMPLE
    xs = (np.arange(w * n) + 0.5) / n - 0.5 - cx
    ys = (np.arange(h * n) + 0.5) / n - 0.5 - cy
    dx = xs[None, :]
    dy = ys[:, None]
    if shape_idx == 0:
        inside = dx ** 2 + dy ** 2 <= DISK_RADIUS ** 2
    elif shape_idx == 1:
        inside = (np.abs(dx) <= SQUARE_HALF_SIDE) & (np.abs(dy) <= SQUARE_HALF_SIDE)
    else:
        # Equilateral triangle, vertex up; circumcenter == centroid.
        r = TRIANGLE_CIRCUMRADIUS
        verts = [(0.0, -r),
                 (r * np.sqrt(3.0) / 2.0, r / 2.0),
                 (-r * np.sqrt(3.0) / 2.0, r / 2.0)]
        inside = np.ones((h * n, w * n), dtype=bool)
        for (ax, ay), (bx, by) in zip(verts, verts[1:] + verts[:1]):
            cross = (bx - ax) * (dy - ay) - (by - ay) * (dx - ax)
            inside &= cross >= 0.0
    return inside.reshape(h, n, w, n).mean(axis=(1, 3))


def generate_clip(spec: ClipSpec) -> VideoClip:
    """Render a clip deterministically from its spec."""
    _, _, rng_noise = _clip_rngs(spec)
    h, w = spec.frame_size
    track = shape_track(spec)
    background = render_background(spec)
    color = SHAPE_COLORS[class_shape(spec.class_id)]
    frames = np.empty((spec.num_frames, h, w, 3), dtype=np.float64)
    for t in range(spec.num_frames):
        alpha = _shape_alpha(class_shape(spec.class_id),
                             track[t, 0], track[t, 1], h, w)[:, :, None]
        frames[t] = background * (1.0 - alpha) + color[None, None, :] * alpha
    if spec.noise_level > 0:
        frames += rng_noise.normal(0.0, spec.noise_level, frames.shape)
    np.clip(frames, 0.0, 1.0, out=frames)
    return VideoClip(frames=frames.astype(np.float32), label=spec.class_id,
                     spec=spec)


# ---------------------------------------------------------------------------
# Clip file format


def serialize_clip(clip: VideoClip) -> bytes:
    t, h, w, c = clip.frames.shape
    return b"".join([
        CLIP_MAGIC,
        pack_i32(CLIP_VERSION, t, h, w, c, clip.label),
        pack_f32_array(clip.frames),
    ])


def deserialize_clip(data: bytes, source: str = "clip") -> VideoClip:
    rd = ByteReader(data, source)
    rd.expect_magic(CLIP_MAGIC)
    check_version(rd, CLIP_VERSION)
    header_at = rd.offset
    t, h, w, c, label = (rd.read_i32() for _ in range(5))
    if t < 1 or h < 1 or w < 1:
        raise FormatError(f"{source}: bad clip dims {t}x{h}x{w}", header_at)
    if c != 3:
        raise FormatError(f"{source}: expected 3 channels, got {c}", header_at)
    if not 0 <= label < NUM_CLASSES:
        raise FormatError(f"{source}: label {label} outside [0, {NUM_CLASSES})",
                          header_at)
    payload_at = rd.offset
    frames = rd.read_f32_array((t, h, w, c))
    rd.expect_eof()
    try:
        return VideoClip(frames=frames, label=label)
    except (NumericError, ShapeError) as exc:
        raise FormatError(f"{source}: {exc}", payload_at) from exc


def save_clip(clip: VideoClip, path) -> None:
    Path(path).write_bytes(serialize_clip(clip))


def load_clip(path) -> VideoClip:
    p = Path(path)
    if not p.exists():
        raise DataError(f"clip file not found: {p}")
    return deserialize_clip(p.read_bytes(), source=str(p))


# ---------------------------------------------------------------------------
# Dataset generation and manifests


@dataclass(frozen=True)
class ManifestEntry:
    path: str  # relative to the manifest's directory
    label: int
    split: str  # "train" or "test"


@dataclass
class DatasetManifest:
    entries: list
    seed: int
    config_hash: str
    root: Path = field(default_factory=Path)

    def resolve(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path

    def split_entries(self, split: str) -> list:
        if split not in ("train", "test"):
            raise ConfigError(f"split must be 'train' or 'test', got {split!r}")
        return [e for e in self.entries if e.split == split]

    def class_counts(self) -> list:
        """Per class: (train count, test count)."""
        counts = [[0, 0] for _ in range(NUM_CLASSES)]
        for e in self.entries:
            counts[e.label][0 if e.split == "train" else 1] += 1
        return [tuple(c) for c in counts]


def _config_hash(counts, train_fraction, seed, num_frames, frame_size,
                 noise_level) -> str:
    text = (f"v{CLIP_VERSION}|counts={tuple(counts)}|"
            f"frac={train_fraction!r}|seed={seed}|T={num_frames}|"
            f"size={tuple(frame_size)}|noise={noise_level!r}")
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def generate_dataset(out_dir, counts=DEFAULT_CLASS_COUNTS,
                     train_fraction: float = DEFAULT_TRAIN_FRACTION,
                     seed: int = 0, num_frames: int = 30,
                     frame_size=(64, 64),
                     noise_level: float = 0.02) -> DatasetManifest:
    """Write clips and a manifest under out_dir; returns the manifest.

    The split is stratified: each class is permuted independently and cut at
    round(count * train_fraction), keeping at least one clip on each side.
    """
    counts = tuple(int(c) for c in counts)
    if len(counts) != NUM_CLASSES:
        raise ConfigError(f"need {NUM_CLASSES} class counts, got {len(counts)}")
    if any(c < 2 for c in counts):
        raise ConfigError(f"every class needs at least 2 clips, got {counts}")
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must lie in (0, 1), "
                          f"got {train_fraction}")

    out = Path(out_dir)
    clip_dir = out / "clips"
    clip_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    clip_seeds = rng.integers(0, 2 ** 31 - 1, size=sum(counts))

    entries = []
    seed_cursor = 0
    for cls in range(NUM_CLASSES):
        n = counts[cls]
        n_train = int(round(n * train_fraction))
        n_train = min(max(n_train, 1), n - 1)
        order = rng.permutation(n)
        split_of = ["test"] * n
        for idx in order[:n_train]:
            split_of[idx] = "train"
        for i in range(n):
            spec = ClipSpec(class_id=cls, seed=int(clip_seeds[seed_cursor]),
                            num_frames=num_frames, frame_size=tuple(frame_size),
                            noise_level=noise_level)
            seed_cursor += 1
            rel = f"clips/{class_name(cls)}_{i:03d}.clip"
            try:
                save_clip(generate_clip(spec), out / rel)
            except OSError as exc:
                raise DataError(f"failed to write clip {out / rel}: {exc}") from exc
            entries.append(ManifestEntry(path=rel, label=cls, split=split_of[i]))

    manifest = DatasetManifest(
        entries=entries, seed=seed,
        config_hash=_config_hash(counts, train_fraction, seed, num_frames,
                                 frame_size, noise_level),
        root=out)
    write_manifest(manifest, out / "manifest.tsv")
    return manifest


def write_manifest(manifest: DatasetManifest, path) -> None:
    lines = [f"# seed={manifest.seed}", f"# config={manifest.config_hash}"]
    lines += [f"{e.path}\t{e.label}\t{e.split}" for e in manifest.entries]
    Path(path).write_text("\n".join(lines) + "\n")


def load_manifest(path) -> DatasetManifest:
    p = Path(path)
    if not p.exists():
        raise DataError(f"manifest not found: {p}")
    seed = None
    config_hash = ""
    entries = []
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("seed="):
                seed = int(body[len("seed="):])
            elif body.startswith("config="):
                config_hash = body[len("config="):]
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{p}:{lineno}: expected path<TAB>label<TAB>split, "
                            f"got {raw!r}")
        rel, label_text, split = parts
        try:
            label = int(label_text)
        except ValueError:
            raise DataError(f"{p}:{lineno}: label {label_text!r} is not an "
                            f"integer") from None
        if not 0 <= label < NUM_CLASSES:
            raise DataError(f"{p}:{lineno}: label {label} outside "
                            f"[0, {NUM_CLASSES})")
        if split not in ("train", "test"):
            raise DataError(f"{p}:{lineno}: split must be train or test, "
                            f"got {split!r}")
        if not (p.parent / rel).exists():
            raise DataError(f"{p}:{lineno}: referenced clip missing: "
                            f"{p.parent / rel}")
        entries.append(ManifestEntry(path=rel, label=label, split=split))
    if not entries:
        raise DataError(f"{p}: manifest lists no clips")
    return DatasetManifest(entries=entries, seed=0 if seed is None else seed,
                           config_hash=config_hash, root=p.parent)
