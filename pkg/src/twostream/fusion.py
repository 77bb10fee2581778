"""Early, mid-level, and late fusion of the two streams.

Early fusion stacks frame and flow channels into one network input. Mid-level
fusion interleaves the two penultimate feature vectors, L2-normalizes, and
classifies with a one-vs-rest linear SVM. Late fusion combines the two
softmax score vectors through a Bayesian product with class priors.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .binio import ByteReader, check_version, pack_f32_array, pack_i32
from .errors import (ConfigError, DataError, FormatError, NumericError,
                     ShapeError)
from .streams import StreamFeature

SVM_MAGIC = b"TSVM"
SVM_VERSION = 1

# Below this Euclidean norm a feature is treated as zero and left unnormalized.
NORM_EPS = 1e-12

PRIOR_SMOOTHING = 1e-6

SCORE_SUM_TOL = 1e-6


def assemble_early_input(frame: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Stack an RGB frame with normalized flow channels: RGB first, then the
    interleaved u/v channels in stack order, giving 3 + 2L channels."""
    frame = np.asarray(frame, dtype=np.float32)
    flow = np.asarray(flow, dtype=np.float32)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ShapeError(f"frame must be (H, W, 3), got {frame.shape}")
    if flow.ndim != 3 or flow.shape[2] < 2 or flow.shape[2] % 2:
        raise ShapeError(f"flow must be (H, W, 2L), got {flow.shape}")
    if frame.shape[:2] != flow.shape[:2]:
        raise ShapeError(f"frame {frame.shape[:2]} and flow {flow.shape[:2]} "
                         "differ in spatial dims")
    return np.concatenate([frame, flow], axis=2)


@dataclass(frozen=True)
class FusedFeature:
    """Interleaved two-stream feature; float64 so unit norms hold to 1e-9."""

    values: np.ndarray
    normalized: bool

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise ShapeError("fused feature must be a non-empty vector, got "
                             f"shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise NumericError("fused feature contains non-finite values")
        if self.normalized and abs(np.linalg.norm(values) - 1.0) > 1e-9:
            raise NumericError(
                f"normalized feature has norm {np.linalg.norm(values)!r}")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.shape[0]


def interleave_features(f_st: StreamFeature, f_tp: StreamFeature) -> FusedFeature:
    """Alternate the two feature vectors: out_(2d-1) = f_st(d), out_(2d) = f_tp(d)
    in 1-based indexing, so even 0-based slots hold the first stream."""
    a = f_st.values
    b = f_tp.values
    if a.shape != b.shape:
        raise ShapeError(f"feature lengths differ: {a.shape[0]} vs {b.shape[0]}")
    out = np.empty(2 * a.shape[0], dtype=np.float64)
    out[0::2] = a
    out[1::2] = b
    return FusedFeature(values=out, normalized=False)


def deinterleave_features(fused: FusedFeature):
    """Inverse of interleave_features: (first stream, second stream) values."""
    v = fused.values
    if v.shape[0] % 2:
        raise ShapeError(f"fused length {v.shape[0]} is odd")
    return v[0::2].copy(), v[1::2].copy()


def l2_normalize(fused: FusedFeature) -> FusedFeature:
    """Scale to unit Euclidean norm; a zero vector is returned unchanged with
    normalized=False rather than dividing by zero."""
    norm = float(np.linalg.norm(fused.values))
    if norm < NORM_EPS:
        return FusedFeature(values=fused.values.copy(), normalized=False)
    return FusedFeature(values=fused.values / norm, normalized=True)


def check_score_vector(s, n: int = None) -> np.ndarray:
    """Validate a per-class probability vector; returns it as float64."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ShapeError(f"score vector must be a non-empty vector, got {s.shape}")
    if n is not None and s.shape[0] != n:
        raise ShapeError(f"score vector has length {s.shape[0]}, expected {n}")
    if not np.all(np.isfinite(s)):
        raise NumericError("score vector contains non-finite values")
    if s.min() < -1e-12 or s.max() > 1.0 + 1e-12:
        raise NumericError(f"score entries must lie in [0, 1], got range "
                           f"[{s.min():.4g}, {s.max():.4g}]")
    if abs(s.sum() - 1.0) > SCORE_SUM_TOL:
        raise NumericError(f"score vector sums to {s.sum()!r}, not 1")
    return s


@dataclass(frozen=True)
class ClassPriors:
    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise ShapeError(f"priors must be a non-empty vector, got {p.shape}")
        if not np.all(np.isfinite(p)) or p.min() <= 0.0:
            raise NumericError("priors must all be positive")
        if abs(p.sum() - 1.0) > 1e-12:
            raise NumericError(f"priors sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "p", p)

    def __len__(self) -> int:
        return self.p.shape[0]


def uniform_priors(n: int) -> ClassPriors:
    return ClassPriors(p=np.full(n, 1.0 / n))


def estimate_priors(labels, n_classes: int = None) -> ClassPriors:
    """Smoothed empirical class frequencies: p(j) proportional to
    count(j) + 1e-6, so unseen classes keep a tiny positive prior."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise DataError("cannot estimate priors from zero labels")
    if labels.min() < 0:
        raise DataError(f"negative label {labels.min()}")
    n = int(labels.max()) + 1 if n_classes is None else n_classes
    if labels.max() >= n:
        raise DataError(f"label {labels.max()} outside [0, {n})")
    counts = np.bincount(labels, minlength=n).astype(np.float64)
    counts += PRIOR_SMOOTHING
    return ClassPriors(p=counts / counts.sum())


def late_fuse(s_st, s_tp, priors: ClassPriors) -> np.ndarray:
    """Bayesian product fusion: score_j = s_st_j * s_tp_j / p_j, renormalized.

    Symmetric in the two streams; a uniform stream under uniform priors
    cancels exactly, returning the other stream's scores.
    """
    n = len(priors)
    s_st = check_score_vector(s_st, n)
    s_tp = check_score_vector(s_tp, n)
    products = s_st * s_tp / priors.p
    denom = products.sum()
    if denom <= 0.0:
        raise NumericError(
            "degenerate late fusion: every pairwise score product is zero")
    return products / denom


@dataclass(frozen=True)
class SvmHyper:
    c: float = 1.0
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.c <= 0:
            raise ConfigError(f"C must be positive, got {self.c}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")


@dataclass(eq=False)
class SvmModel:
    """One-vs-rest linear classifiers: margins = weights @ f + biases."""

    weights: np.ndarray  # (n_classes, feature_len) float32
    biases: np.ndarray   # (n_classes,) float32
    hyper: SvmHyper

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float32)
        self.biases = np.asarray(self.biases, dtype=np.float32)
        if self.weights.ndim != 2 or self.weights.shape[0] < 2:
            raise ShapeError("weights must be (n_classes >= 2, feature_len), "
                             f"got {self.weights.shape}")
        if self.biases.shape != (self.weights.shape[0],):
            raise ShapeError(f"biases shape {self.biases.shape} does not match "
                             f"{self.weights.shape[0]} classes")
        if not (np.all(np.isfinite(self.weights))
                and np.all(np.isfinite(self.biases))):
            raise NumericError("SVM parameters contain non-finite values")

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_len(self) -> int:
        return self.weights.shape[1]


def _stack_features(features, labels, n_classes):
    x = np.stack([f.values for f in features])
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (x.shape[0],):
        raise ShapeError(f"{x.shape[0]} features but {labels.shape} labels")
    n = int(labels.max()) + 1 if n_classes is None else n_classes
    if labels.min() < 0 or labels.max() >= n:
        raise DataError(f"labels must lie in [0, {n})")
    return x, labels, n


def svm_objective(model: SvmModel, features, labels) -> float:
    """Averaged one-vs-rest objective: sum_j [ lam/2 |w_j|^2 + mean hinge_j ]
    with lam = 1/C. Duplicating every sample leaves the value unchanged."""
    x, labels, _ = _stack_features(features, labels, model.n_classes)
    lam = 1.0 / model.hyper.c
    w = model.weights.astype(np.float64)
    b = model.biases.astype(np.float64)
    y = np.where(labels[:, None] == np.arange(model.n_classes), 1.0, -1.0)
    margins = x @ w.T + b
    hinge = np.maximum(0.0, 1.0 - y * margins).mean(axis=0).sum()
    return float(0.5 * lam * (w ** 2).sum() + hinge)


def train_linear_svm(features, labels, hyper: SvmHyper = SvmHyper(),
                     n_classes: int = None) -> SvmModel:
    """Deterministic full-batch subgradient descent on the one-vs-rest
    L2-regularized hinge loss, step 1/(lam*t) at epoch t, lam = 1/C.

    Zero initialization plus full-batch steps make the result independent of
    sample order and of duplicating the whole training set.
    """
    if not features:
        raise DataError("cannot train an SVM on zero features")
    for i, f in enumerate(features):
        if not f.normalized:
            raise ConfigError(f"feature {i} is not L2-normalized")
    x, labels, n = _stack_features(features, labels, n_classes)
    if np.unique(labels).size < 2:
        raise DataError("SVM training needs at least 2 distinct classes, "
                        f"got only class {labels[0]}")
    lam = 1.0 / hyper.c
    w = np.zeros((n, x.shape[1]), dtype=np.float64)
    b = np.zeros(n, dtype=np.float64)
    y = np.where(labels[:, None] == np.arange(n), 1.0, -1.0)  # (m, n)
    for t in range(1, hyper.epochs + 1):
        step = 1.0 / (lam * t)
        margins = x @ w.T + b
        active = (y * margins < 1.0) * y  # (m, n): +-1 on violations else 0
        w -= step * (lam * w - active.T @ x / x.shape[0])
        b += step * active.mean(axis=0)
    return SvmModel(weights=w, biases=b, hyper=hyper)


def svm_predict(model: SvmModel, fused: FusedFeature):
    """(chosen class, per-class margins); ties go to the lowest class index."""
    v = fused.values
    if v.shape[0] != model.feature_len:
        raise ShapeError(f"feature length {v.shape[0]} does not match model "
                         f"length {model.feature_len}")
    margins = model.weights.astype(np.float64) @ v + model.biases
    return int(np.argmax(margins)), margins


def majority_vote(predictions) -> int:
    """Most frequent class index; ties go to the lowest class index."""
    predictions = np.asarray(predictions, dtype=np.int64)
    if predictions.size == 0:
        raise DataError("majority vote over zero predictions")
    if predictions.min() < 0:
        raise DataError(f"negative class index {predictions.min()}")
    return int(np.bincount(predictions).argmax())


def serialize_svm(model: SvmModel) -> bytes:
    return b"".join([
        SVM_MAGIC,
        pack_i32(SVM_VERSION, model.n_classes, model.feature_len),
        pack_f32_array(model.weights),
        pack_f32_array(model.biases),
    ])


def deserialize_svm(data: bytes, source: str = "svm model") -> SvmModel:
    r = ByteReader(data, source)
    r.expect_magic(SVM_MAGIC)
    check_version(r, SVM_VERSION)
    at = r.offset
    n, d = r.read_i32(), r.read_i32()
    if n < 2 or d < 1:
        raise FormatError(f"{source}: bad dims {n} classes x {d} features", at)
    weights = r.read_f32_array((n, d))
    biases = r.read_f32_array((n,))
    r.expect_eof()
    try:
        return SvmModel(weights=weights, biases=biases, hyper=SvmHyper())
    except (ShapeError, NumericError) as exc:
        raise FormatError(f"{source}: {exc}", at) from None


def save_svm(model: SvmModel, path) -> None:
    Path(path).write_bytes(serialize_svm(model))


def load_svm(path) -> SvmModel:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"svm model {p} not found")
    return deserialize_svm(p.read_bytes(), source=str(p))


def write_feature_csv(features, labels, path) -> None:
    """Debug dump: one row per feature, label first, repr-precision floats."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(features) != labels.shape[0]:
        raise ShapeError(f"{len(features)} features but {labels.shape[0]} labels")
    lines = []
    for f, label in zip(features, labels):
        lines.append(",".join([str(int(label))]
                              + [repr(float(v)) for v in f.values]))
    Path(path).write_text("\n".join(lines) + "\n")
