"""End-to-end orchestration: staged runs with content-addressed caching.

Artifacts live under the run's output directory:

    dataset/              clips/ plus manifest.tsv
    flow/                 one .flow stack per clip
    models/               <kind>.stream, <kind>.history.csv, mid.svm
    reports/              <strategy>.report.csv / .confusion.csv / .confusion.pgm
                          and comparison.csv after a five-strategy run
    cache/                one stamp file per completed stage
    effective_config.txt  canonical text of the config that produced the run
    run_manifest.txt      config hash plus every derived seed

Every stage writes a stamp holding its key (a hash over exactly the config
values and upstream stage keys that feed it) and the SHA-256 of each artifact
it produced. A stage is reused only when the key matches and every artifact
still hashes to its recorded value; anything else, including a corrupted or
hand-edited artifact, invalidates the stamp and the stage re-runs. Evaluation
itself is cheap and always recomputed, so reports are rewritten every run.

A `.lock` file in the output directory keeps concurrent runs out; runs over
the same directory must be sequential.
"""

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import STRATEGIES, RunConfig
from .dataset import (NUM_CLASSES, DatasetManifest, generate_dataset,
                      load_clip, load_manifest)
from .errors import DataError, TwoStreamError
from .evaluation import (EvalReport, confusion, format_report_csv, report,
                         render_confusion_pgm, write_confusion_csv,
                         write_report_csv)
from .flow import (build_flow_stack, estimate_flow, load_flow_stack,
                   normalize_flow_for_net, save_flow_stack, slice_stack)
from .fusion import (estimate_priors, interleave_features, l2_normalize,
                     late_fuse, load_svm, majority_vote, save_svm,
                     svm_predict, train_linear_svm)
from .streams import (build_stream, extract_feature, flow_stack_path,
                      load_stream, predict_video, sample_anchors, save_stream,
                      train_stream)

# Streams each strategy trains and evaluates with.
STRATEGY_STREAMS = {
    "spatial_only": ("spatial",),
    "temporal_only": ("temporal",),
    "early": ("early",),
    "mid": ("spatial", "temporal"),
    "late": ("spatial", "temporal"),
}

_DATASET_KEYS = ("run.seed", "dataset.counts", "dataset.train_fraction",
                 "dataset.num_frames", "dataset.frame_height",
                 "dataset.frame_width", "dataset.noise_level")
_FLOW_KEYS = ("flow.alpha", "flow.gamma", "flow.pyramid_scale", "flow.levels",
              "flow.outer_iterations", "flow.inner_iterations",
              "flow.sor_omega", "flow.sor_sweeps")
_TRAIN_KEYS = ("run.seed", "stream.stack_length", "train.learning_rate",
               "train.momentum", "train.weight_decay", "train.batch_size",
               "train.epochs", "train.frames_per_clip")
_SVM_KEYS = ("run.seed", "svm.c", "svm.epochs", "eval.sample_count")


@dataclass(frozen=True)
class RunPaths:
    """Fixed layout of one run's output directory."""

    out: Path

    @property
    def dataset_dir(self) -> Path:
        return self.out / "dataset"

    @property
    def manifest_path(self) -> Path:
        return self.dataset_dir / "manifest.tsv"

    @property
    def flow_dir(self) -> Path:
        return self.out / "flow"

    @property
    def models_dir(self) -> Path:
        return self.out / "models"

    @property
    def reports_dir(self) -> Path:
        return self.out / "reports"

    @property
    def cache_dir(self) -> Path:
        return self.out / "cache"

    @property
    def lock_path(self) -> Path:
        return self.out / ".lock"

    def stream_path(self, kind: str) -> Path:
        return self.models_dir / f"{kind}.stream"

    def history_path(self, kind: str) -> Path:
        return self.models_dir / f"{kind}.history.csv"

    @property
    def svm_path(self) -> Path:
        return self.models_dir / "mid.svm"

    def report_path(self, strategy: str) -> Path:
        return self.reports_dir / f"{strategy}.report.csv"

    def confusion_csv_path(self, strategy: str) -> Path:
        return self.reports_dir / f"{strategy}.confusion.csv"

    def confusion_pgm_path(self, strategy: str) -> Path:
        return self.reports_dir / f"{strategy}.confusion.pgm"


def _silent(message: str) -> None:
    pass


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _config_lines(config: RunConfig, keys) -> str:
    wanted = set(keys)
    lines = [line for line in config.canonical_text().splitlines()
             if line.split(" = ")[0] in wanted]
    return "\n".join(lines)


def _stage_key(name: str, *parts: str) -> str:
    digest = hashlib.sha256()
    digest.update(name.encode())
    for part in parts:
        digest.update(b"\0")
        digest.update(part.encode())
    return digest.hexdigest()


def _load_stamp(path: Path):
    try:
        stamp = json.loads(path.read_text())
    except (OSError, ValueError):
        return None
    if not isinstance(stamp, dict) or not isinstance(stamp.get("files"), dict):
        return None
    return stamp


def _stamp_matches(stamp, key: str, out_dir: Path) -> bool:
    if stamp is None or stamp.get("key") != key:
        return False
    for rel, digest in stamp["files"].items():
        path = out_dir / rel
        if not path.is_file() or _sha256_file(path) != digest:
            return False
    return True


def _run_stage(name: str, key: str, paths: RunPaths, build, log) -> None:
    """Run `build` unless a valid stamp already covers this stage."""
    stamp_path = paths.cache_dir / f"{name.replace(':', '_')}.stamp"
    if _stamp_matches(_load_stamp(stamp_path), key, paths.out):
        log(f"[{name}] cached")
        return
    log(f"[{name}] running")
    try:
        files = build()
    except TwoStreamError as exc:
        raise type(exc)(f"stage {name}: {exc}") from exc
    records = {}
    for path in files:
        rel = Path(path).relative_to(paths.out).as_posix()
        records[rel] = _sha256_file(path)
    paths.cache_dir.mkdir(parents=True, exist_ok=True)
    stamp_path.write_text(json.dumps({"key": key, "files": records},
                                     indent=0, sort_keys=True) + "\n")


@contextmanager
def _exclusive_lock(paths: RunPaths):
    paths.out.mkdir(parents=True, exist_ok=True)
    try:
        fd = os.open(paths.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise DataError(
            f"output directory {paths.out} is locked by another run; "
            f"remove {paths.lock_path} if no run is active") from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        paths.lock_path.unlink(missing_ok=True)


def dataset_stage_key(config: RunConfig) -> str:
    return _stage_key("dataset", _config_lines(config, _DATASET_KEYS))


def flow_stage_key(config: RunConfig) -> str:
    return _stage_key("flow", dataset_stage_key(config),
                      _config_lines(config, _FLOW_KEYS))


def stream_stage_key(config: RunConfig, kind: str) -> str:
    parts = [dataset_stage_key(config), _config_lines(config, _TRAIN_KEYS)]
    if kind != "spatial":
        parts.append(flow_stage_key(config))
        parts.append(_config_lines(config, ("stream.clip_mag",)))
    return _stage_key(f"stream:{kind}", *parts)


def svm_stage_key(config: RunConfig) -> str:
    return _stage_key("svm", stream_stage_key(config, "spatial"),
                      stream_stage_key(config, "temporal"),
                      _config_lines(config, _SVM_KEYS))


def _build_dataset(config: RunConfig, paths: RunPaths):
    manifest = generate_dataset(
        paths.dataset_dir, counts=config.counts,
        train_fraction=config.train_fraction, seed=config.seed,
        num_frames=config.num_frames,
        frame_size=(config.frame_height, config.frame_width),
        noise_level=config.noise_level)
    files = [paths.manifest_path]
    files.extend(manifest.resolve(entry) for entry in manifest.entries)
    return files


def _build_flow(config: RunConfig, paths: RunPaths, manifest: DatasetManifest):
    params = config.flow_params()
    paths.flow_dir.mkdir(parents=True, exist_ok=True)
    clips = [load_clip(manifest.resolve(entry)) for entry in manifest.entries]
    pairs = [(i, t) for i, clip in enumerate(clips)
             for t in range(clip.frames.shape[0] - 1)]

    def one(pair):
        i, t = pair
        frames = clips[i].frames
        return estimate_flow(frames[t], frames[t + 1], params)

    # The solver is stateless per pair, so pairs can run on any worker in
    # any order; results are regrouped by index before stacking.
    if config.jobs == 1:
        flows = [one(pair) for pair in pairs]
    else:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            flows = list(pool.map(one, pairs))
    by_clip = {}
    for (i, _), field in zip(pairs, flows):
        by_clip.setdefault(i, []).append(field)
    files = []
    for i, entry in enumerate(manifest.entries):
        stack = build_flow_stack(by_clip[i], start_frame=0)
        out_path = flow_stack_path(paths.flow_dir, entry.path)
        save_flow_stack(stack, out_path)
        files.append(out_path)
    return files


def _build_stream(config: RunConfig, paths: RunPaths,
                  manifest: DatasetManifest, kind: str):
    paths.models_dir.mkdir(parents=True, exist_ok=True)
    model = build_stream(config.stream_config(kind),
                         seed=config.weight_seed(kind))
    flow_dir = None if kind == "spatial" else paths.flow_dir
    train_stream(model, manifest, config.train_hyper(kind), flow_dir=flow_dir,
                 clip_mag=config.clip_mag,
                 history_path=paths.history_path(kind))
    save_stream(model, paths.stream_path(kind))
    return [paths.stream_path(kind), paths.history_path(kind)]


def _clip_anchors(config: RunConfig, num_frames: int,
                  stack_length: int) -> np.ndarray:
    return sample_anchors(num_frames, stack_length, sampling="uniform",
                          count=config.sample_count)


def _fused_clip_features(config: RunConfig, spatial, temporal, clip, stack):
    """Per-anchor mid-fusion features for one clip, in anchor order."""
    length = config.stack_length
    anchors = _clip_anchors(config, clip.frames.shape[0], length)
    features = []
    for tau in anchors:
        window = normalize_flow_for_net(slice_stack(stack, int(tau), length),
                                        clip_mag=config.clip_mag)
        f_st = extract_feature(spatial, clip.frames[int(tau)])
        f_tp = extract_feature(temporal, window)
        features.append(l2_normalize(interleave_features(f_st, f_tp)))
    return features


def _build_svm(config: RunConfig, paths: RunPaths, manifest: DatasetManifest):
    spatial = load_stream(paths.stream_path("spatial"))
    temporal = load_stream(paths.stream_path("temporal"))
    features = []
    labels = []
    for entry in manifest.split_entries("train"):
        clip = load_clip(manifest.resolve(entry))
        stack = load_flow_stack(flow_stack_path(paths.flow_dir, entry.path))
        clip_features = _fused_clip_features(config, spatial, temporal, clip,
                                             stack)
        features.extend(clip_features)
        labels.extend([entry.label] * len(clip_features))
    model = train_linear_svm(features, labels, config.svm_hyper(),
                             n_classes=NUM_CLASSES)
    save_svm(model, paths.svm_path)
    return [paths.svm_path]


def _predict_entry(config: RunConfig, paths: RunPaths, strategy: str,
                   models: dict, manifest: DatasetManifest, entry) -> int:
    clip = load_clip(manifest.resolve(entry))
    num_frames = clip.frames.shape[0]
    if strategy == "spatial_only":
        scores = predict_video(models["spatial"], clip,
                               anchors=_clip_anchors(config, num_frames, 0))
        return int(np.argmax(scores))

    stack = load_flow_stack(flow_stack_path(paths.flow_dir, entry.path))
    anchors = _clip_anchors(config, num_frames, config.stack_length)
    if strategy == "temporal_only":
        scores = predict_video(models["temporal"], clip, stack=stack,
                               clip_mag=config.clip_mag, anchors=anchors)
        return int(np.argmax(scores))
    if strategy == "early":
        scores = predict_video(models["early"], clip, stack=stack,
                               clip_mag=config.clip_mag, anchors=anchors)
        return int(np.argmax(scores))
    if strategy == "mid":
        fused = _fused_clip_features(config, models["spatial"],
                                     models["temporal"], clip, stack)
        votes = [svm_predict(models["svm"], f)[0] for f in fused]
        return majority_vote(votes)
    if strategy == "late":
        s_st = predict_video(models["spatial"], clip, anchors=anchors)
        s_tp = predict_video(models["temporal"], clip, stack=stack,
                             clip_mag=config.clip_mag, anchors=anchors)
        return int(np.argmax(late_fuse(s_st, s_tp, models["priors"])))
    raise DataError(f"unknown strategy {strategy!r}")


def _load_models(config: RunConfig, paths: RunPaths, strategy: str,
                 manifest: DatasetManifest) -> dict:
    models = {}
    for kind in STRATEGY_STREAMS[strategy]:
        models[kind] = load_stream(paths.stream_path(kind))
    if strategy == "mid":
        models["svm"] = load_svm(paths.svm_path)
    if strategy == "late":
        train_labels = [e.label for e in manifest.split_entries("train")]
        models["priors"] = estimate_priors(train_labels, NUM_CLASSES)
    return models


def evaluate_strategy(config: RunConfig, strategy: str) -> EvalReport:
    """Score the test split with already-trained models and write reports.

    Raises DataError naming the missing file when a required checkpoint,
    flow stack, or the dataset manifest is absent.
    """
    paths = RunPaths(Path(config.out_dir))
    if not paths.manifest_path.is_file():
        raise DataError(f"dataset manifest {paths.manifest_path} not found; "
                        f"run gen-data first")
    manifest = load_manifest(paths.manifest_path)
    models = _load_models(config, paths, strategy, manifest)
    test_entries = manifest.split_entries("test")
    if not test_entries:
        raise DataError("dataset has no test entries to evaluate")
    predictions = []
    labels = []
    for entry in test_entries:
        predictions.append(_predict_entry(config, paths, strategy, models,
                                          manifest, entry))
        labels.append(entry.label)
    matrix = confusion(predictions, labels, NUM_CLASSES)
    result = report(matrix, strategy)
    paths.reports_dir.mkdir(parents=True, exist_ok=True)
    write_report_csv([result], paths.report_path(strategy))
    write_confusion_csv(matrix, paths.confusion_csv_path(strategy))
    render_confusion_pgm(matrix, paths.confusion_pgm_path(strategy))
    return result


def _needs_flow(strategies) -> bool:
    return any(s != "spatial_only" for s in strategies)


def _write_run_manifest(config: RunConfig, paths: RunPaths, strategies):
    lines = [f"config_hash={config.config_hash()}",
             f"run.seed={config.seed}",
             f"dataset.seed={config.seed}"]
    for kind in ("spatial", "temporal", "early"):
        lines.append(f"weights.{kind}={config.weight_seed(kind)}")
        lines.append(f"sgd.{kind}={config.sgd_seed(kind)}")
    lines.append(f"svm.seed={config.svm_hyper().seed}")
    lines.append("strategies=" + ",".join(strategies))
    (paths.out / "run_manifest.txt").write_text("\n".join(lines) + "\n")


def _stream_kinds(strategies) -> list:
    kinds = []
    for strategy in strategies:
        for kind in STRATEGY_STREAMS[strategy]:
            if kind not in kinds:
                kinds.append(kind)
    return kinds


def _prepare_run(config: RunConfig, paths: RunPaths, log) -> DatasetManifest:
    paths.cache_dir.mkdir(parents=True, exist_ok=True)
    (paths.out / "effective_config.txt").write_text(config.canonical_text())
    _run_stage("dataset", dataset_stage_key(config), paths,
               lambda: _build_dataset(config, paths), log)
    return load_manifest(paths.manifest_path)


def _ensure_flow(config: RunConfig, paths: RunPaths,
                 manifest: DatasetManifest, log) -> None:
    _run_stage("flow", flow_stage_key(config), paths,
               lambda: _build_flow(config, paths, manifest), log)


def _ensure_training(config: RunConfig, paths: RunPaths,
                     manifest: DatasetManifest, strategies, log) -> list:
    if _needs_flow(strategies):
        _ensure_flow(config, paths, manifest, log)
    produced = []
    for kind in _stream_kinds(strategies):
        _run_stage(f"stream:{kind}", stream_stage_key(config, kind), paths,
                   lambda kind=kind: _build_stream(config, paths, manifest,
                                                   kind), log)
        produced.append(paths.stream_path(kind))
    if "mid" in strategies:
        _run_stage("svm", svm_stage_key(config), paths,
                   lambda: _build_svm(config, paths, manifest), log)
        produced.append(paths.svm_path)
    return produced


def _run_strategies(config: RunConfig, strategies, log) -> list:
    paths = RunPaths(Path(config.out_dir))
    with _exclusive_lock(paths):
        manifest = _prepare_run(config, paths, log)
        _ensure_training(config, paths, manifest, strategies, log)
        reports = []
        for strategy in strategies:
            log(f"[evaluate:{strategy}] running")
            try:
                reports.append(evaluate_strategy(config, strategy))
            except TwoStreamError as exc:
                raise type(exc)(f"stage evaluate:{strategy}: {exc}") from exc
        _write_run_manifest(config, paths, strategies)
    return reports


def run_gen_data(config: RunConfig, log=_silent) -> Path:
    """Generate (or reuse) the dataset; returns the manifest path."""
    paths = RunPaths(Path(config.out_dir))
    with _exclusive_lock(paths):
        _prepare_run(config, paths, log)
    return paths.manifest_path


def run_compute_flow(config: RunConfig, log=_silent) -> Path:
    """Compute (or reuse) flow stacks for every clip; returns the flow dir."""
    paths = RunPaths(Path(config.out_dir))
    with _exclusive_lock(paths):
        manifest = _prepare_run(config, paths, log)
        _ensure_flow(config, paths, manifest, log)
    return paths.flow_dir


def run_train(config: RunConfig, log=_silent) -> list:
    """Train the models the configured strategy needs, with their upstream
    stages; returns the checkpoint paths."""
    paths = RunPaths(Path(config.out_dir))
    with _exclusive_lock(paths):
        manifest = _prepare_run(config, paths, log)
        produced = _ensure_training(config, paths, manifest,
                                    (config.strategy,), log)
    return produced


def run_eval(config: RunConfig, log=_silent) -> EvalReport:
    """Evaluate the configured strategy against existing artifacts only."""
    paths = RunPaths(Path(config.out_dir))
    with _exclusive_lock(paths):
        log(f"[evaluate:{config.strategy}] running")
        return evaluate_strategy(config, config.strategy)


def run_pipeline(config: RunConfig, log=_silent) -> EvalReport:
    """Run every stage the configured strategy needs, then evaluate it."""
    return _run_strategies(config, (config.strategy,), log)[0]


def run_all(config: RunConfig, log=_silent) -> list:
    """Run all five strategies over shared stages; writes comparison.csv."""
    reports = _run_strategies(config, STRATEGIES, log)
    paths = RunPaths(Path(config.out_dir))
    comparison = paths.reports_dir / "comparison.csv"
    comparison.write_text(format_report_csv(reports))
    return reports
