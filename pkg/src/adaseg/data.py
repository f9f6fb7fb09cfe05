"""Dataset file formats, split handling, label masking, synthetic corpora.

On-disk layout mirrors the frame-labelled video benchmarks so real
extracted features can be dropped in later:

    root/
      mapping.txt        # "id name" per class, ids contiguous from 0
      features/ID.fseq   # binary per-frame features (format below)
      groundTruth/ID.txt # one class name per frame
      splits/NAME.bundle # one video id per line

FSEQ binary format: magic "FSEQ", then little-endian u32 version (=1),
u32 frame count T, u32 feature dim D, then T*D little-endian float32
values, frame-major. Round trips are bit-exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (BadMagicError, BadVersionError, DataError, PayloadSizeError,
                     TruncatedFileError, UnknownLabelError)

FSEQ_MAGIC = b"FSEQ"
FSEQ_VERSION = 1
_MAX_CELLS = 1 << 31  # header sanity bound on T*D


@dataclass
class Video:
    vid: str
    features: np.ndarray  # (T, D) float32
    labels: np.ndarray    # (T,) int64


@dataclass
class Dataset:
    class_names: list[str]
    videos: dict[str, Video]
    splits: dict[str, list[str]]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def feature_dim(self) -> int:
        first = next(iter(self.videos.values()))
        return first.features.shape[1]

    def split_videos(self, name: str) -> list[Video]:
        if name not in self.splits:
            raise DataError(f"unknown split {name!r}; have {sorted(self.splits)}")
        return [self.videos[vid] for vid in self.splits[name]]

    def validate(self) -> None:
        if not self.class_names:
            raise DataError("dataset has no classes")
        c = self.num_classes
        for vid, video in self.videos.items():
            if video.features.ndim != 2 or video.features.shape[0] < 1:
                raise DataError(f"video {vid}: bad feature shape {video.features.shape}")
            if video.features.shape[0] != video.labels.shape[0]:
                raise DataError(f"video {vid}: {video.features.shape[0]} feature frames vs "
                                f"{video.labels.shape[0]} label frames")
            if video.labels.min() < 0 or video.labels.max() >= c:
                raise DataError(f"video {vid}: label id outside [0, {c})")
        for name, ids in self.splits.items():
            for vid in ids:
                if vid not in self.videos:
                    raise DataError(f"split {name!r} references missing video {vid!r}")


# ---------------------------------------------------------------------------
# FSEQ feature files


def write_features(path, features: np.ndarray) -> None:
    features = np.asarray(features, dtype=np.float32)
    if features.ndim != 2 or features.shape[0] < 1 or features.shape[1] < 1:
        raise ValueError(f"features must be a nonempty (T, D) matrix, got {features.shape}")
    frames, dim = features.shape
    header = FSEQ_MAGIC + np.asarray([FSEQ_VERSION, frames, dim], dtype="<u4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(features.astype("<f4").tobytes())


def read_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != FSEQ_MAGIC:
        raise BadMagicError(f"{path}: not an FSEQ file")
    if len(raw) < 16:
        raise TruncatedFileError(f"{path}: header cut short at {len(raw)} bytes")
    version, frames, dim = np.frombuffer(raw[4:16], dtype="<u4")
    if version != FSEQ_VERSION:
        raise BadVersionError(f"{path}: unsupported FSEQ version {version}")
    if frames < 1 or dim < 1:
        raise PayloadSizeError(f"{path}: empty shape ({frames}, {dim})")
    cells = int(frames) * int(dim)
    if cells > _MAX_CELLS:
        raise PayloadSizeError(f"{path}: header declares {cells} values")
    expected = 16 + 4 * cells
    if len(raw) < expected:
        raise TruncatedFileError(f"{path}: payload needs {expected} bytes, file has {len(raw)}")
    if len(raw) > expected:
        raise PayloadSizeError(f"{path}: {len(raw) - expected} trailing bytes")
    values = np.frombuffer(raw[16:], dtype="<f4").reshape(int(frames), int(dim))
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path}: non-finite feature values")
    return values.copy()


# ---------------------------------------------------------------------------
# label and mapping files


def write_labels(path, labels: np.ndarray, class_names: list[str]) -> None:
    labels = np.asarray(labels)
    lines = [class_names[int(l)] for l in labels]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_labels(path, name_to_id: dict[str, int]) -> np.ndarray:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not valid UTF-8 ({exc})") from exc
    lines = text.splitlines()
    if not lines:
        raise DataError(f"{path}: empty label file")
    out = np.empty(len(lines), dtype=np.int64)
    for i, line in enumerate(lines):
        name = line.strip()
        if name not in name_to_id:
            raise UnknownLabelError(f"{path}: line {i}: unknown class {name!r}")
        out[i] = name_to_id[name]
    return out


def write_mapping(path, class_names: list[str]) -> None:
    Path(path).write_text("".join(f"{i} {name}\n" for i, name in enumerate(class_names)),
                          encoding="utf-8")


def read_mapping(path) -> list[str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not valid UTF-8 ({exc})") from exc
    entries = {}
    for i, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        parts = line.split(maxsplit=1)
        if len(parts) != 2 or not parts[0].isdigit():
            raise DataError(f"{path}: line {i}: expected 'id name', got {line!r}")
        entries[int(parts[0])] = parts[1].strip()
    if not entries:
        raise DataError(f"{path}: empty mapping")
    if sorted(entries) != list(range(len(entries))):
        raise DataError(f"{path}: class ids not contiguous from 0: {sorted(entries)}")
    return [entries[i] for i in range(len(entries))]


def read_bundle(path) -> list[str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not valid UTF-8 ({exc})") from exc
    return [line.strip() for line in text.splitlines() if line.strip()]


# ---------------------------------------------------------------------------
# label-fraction masking


def make_label_mask(frames: int, fraction: float, mode: str = "stride",
                    seed: int = 0, video_id: str = "") -> np.ndarray:
    """Boolean mask keeping ceil(fraction * T) frames for supervision.

    The default "stride" mode picks floor(i * T / n) for i < n: a
    deterministic even cover of the sequence. "iid" mode samples without
    replacement, seeded by (seed, video_id).
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"labeled fraction must be in (0, 1], got {fraction}")
    if frames < 1:
        raise ValueError(f"frames must be >= 1, got {frames}")
    n = math.ceil(fraction * frames)
    mask = np.zeros(frames, dtype=bool)
    if mode == "stride":
        idx = (np.arange(n) * frames) // n
    elif mode == "iid":
        entropy = [np.uint32(seed & 0xFFFFFFFF), *video_id.encode("utf-8")]
        rng = np.random.default_rng(np.random.SeedSequence(entropy))
        idx = rng.choice(frames, size=n, replace=False)
    else:
        raise ValueError(f"unknown mask mode {mode!r}")
    mask[idx] = True
    return mask


# ---------------------------------------------------------------------------
# synthetic cross-domain corpus


@dataclass(frozen=True)
class SynthConfig:
    """Controls for the synthetic generator and its domain shift.

    Each video follows a random action script (a Markov chain with no
    immediate repeats); frames are class-mean vectors plus Gaussian noise.
    Target videos pass their features through a fixed invertible linear
    map (planar rotations by shift_angle plus a bias) and stretch every
    action duration by duration_factor.
    """
    num_classes: int = 6
    feature_dim: int = 16
    source_videos: int = 20
    target_videos: int = 10
    script_length: int = 8
    duration_min: int = 12
    duration_max: int = 30
    noise_scale: float = 1.0
    class_mean_scale: float = 1.5
    shift_angle: float = 0.9
    shift_bias: float = 1.0
    duration_factor: float = 1.5

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")
        if self.feature_dim < 1:
            raise ValueError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.source_videos < 1 or self.target_videos < 1:
            raise ValueError("need at least one video per domain")
        if self.script_length < 1:
            raise ValueError(f"script_length must be >= 1, got {self.script_length}")
        if not 0 < self.duration_min <= self.duration_max:
            raise ValueError(f"bad duration range [{self.duration_min}, {self.duration_max}]")
        if self.duration_factor <= 0:
            raise ValueError(f"duration_factor must be positive, got {self.duration_factor}")
        if self.noise_scale < 0:
            raise ValueError(f"noise_scale must be nonnegative, got {self.noise_scale}")

    def feature_transform(self) -> tuple[np.ndarray, np.ndarray]:
        """The target domain's (linear map, bias); always invertible."""
        d = self.feature_dim
        a = np.eye(d)
        c, s = math.cos(self.shift_angle), math.sin(self.shift_angle)
        for i in range(0, d - 1, 2):
            a[i, i], a[i, i + 1] = c, -s
            a[i + 1, i], a[i + 1, i + 1] = s, c
        if abs(np.linalg.det(a)) < 1e-12:
            raise ValueError("feature transform is singular")
        b = np.full(d, self.shift_bias / math.sqrt(d))
        return a, b


def _random_script(rng: np.random.Generator, config: SynthConfig) -> list[int]:
    script = [int(rng.integers(config.num_classes))]
    for _ in range(config.script_length - 1):
        step = int(rng.integers(config.num_classes - 1))
        nxt = step if step < script[-1] else step + 1  # skip the previous class
        script.append(nxt)
    return script


def _render_video(rng: np.random.Generator, config: SynthConfig, means: np.ndarray,
                  duration_scale: float, transform: tuple[np.ndarray, np.ndarray] | None,
                  vid: str) -> Video:
    script = _random_script(rng, config)
    durations = [int(rng.integers(config.duration_min, config.duration_max + 1))
                 for _ in script]
    if duration_scale != 1.0:
        durations = [max(1, int(d * duration_scale + 0.5)) for d in durations]
    labels = np.repeat(np.asarray(script, dtype=np.int64), durations)
    feats = means[labels] + config.noise_scale * rng.normal(size=(labels.size, config.feature_dim))
    if transform is not None:
        a, b = transform
        feats = feats @ a.T + b
    return Video(vid=vid, features=feats.astype(np.float32), labels=labels)


def generate_synthetic(config: SynthConfig, seed: int) -> tuple[Dataset, Dataset]:
    """Build (source, target) datasets; a pure function of (config, seed)."""
    ss = np.random.SeedSequence(seed)
    shared_rng, src_rng, tgt_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    means = shared_rng.normal(size=(config.num_classes, config.feature_dim))
    means *= config.class_mean_scale / np.linalg.norm(means, axis=1, keepdims=True)
    transform = config.feature_transform()
    class_names = [f"act{i}" for i in range(config.num_classes)]

    src_videos = {}
    for i in range(config.source_videos):
        vid = f"src{i:03d}"
        src_videos[vid] = _render_video(src_rng, config, means, 1.0, None, vid)
    tgt_videos = {}
    for i in range(config.target_videos):
        vid = f"tgt{i:03d}"
        tgt_videos[vid] = _render_video(tgt_rng, config, means, config.duration_factor,
                                        transform, vid)
    source = Dataset(class_names, src_videos, {"source": sorted(src_videos)})
    target = Dataset(class_names, tgt_videos, {"target": sorted(tgt_videos)})
    source.validate()
    target.validate()
    return source, target


# ---------------------------------------------------------------------------
# corpus directories


def save_corpus(root, *datasets: Dataset) -> None:
    """Write datasets into one directory tree (shared mapping, merged splits)."""
    root = Path(root)
    names = datasets[0].class_names
    for ds in datasets[1:]:
        if ds.class_names != names:
            raise ValueError("datasets disagree on the class mapping")
    for sub in ("features", "groundTruth", "splits"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    write_mapping(root / "mapping.txt", names)
    seen: set[str] = set()
    for ds in datasets:
        for vid, video in ds.videos.items():
            if vid in seen:
                raise ValueError(f"duplicate video id {vid!r} across datasets")
            seen.add(vid)
            write_features(root / "features" / f"{vid}.fseq", video.features)
            write_labels(root / "groundTruth" / f"{vid}.txt", video.labels, names)
        for split, ids in ds.splits.items():
            (root / "splits" / f"{split}.bundle").write_text(
                "".join(f"{vid}\n" for vid in ids), encoding="utf-8")


def load_dataset(root) -> Dataset:
    """Load and cross-validate a corpus directory."""
    root = Path(root)
    mapping_path = root / "mapping.txt"
    if not mapping_path.exists():
        raise DataError(f"{root}: missing mapping.txt")
    class_names = read_mapping(mapping_path)
    name_to_id = {n: i for i, n in enumerate(class_names)}
    bundles = sorted((root / "splits").glob("*.bundle")) if (root / "splits").is_dir() else []
    if not bundles:
        raise DataError(f"{root}: no splits/*.bundle files")
    splits = {p.stem: read_bundle(p) for p in bundles}
    videos: dict[str, Video] = {}
    for split, ids in splits.items():
        for vid in ids:
            if vid in videos:
                continue
            fpath = root / "features" / f"{vid}.fseq"
            lpath = root / "groundTruth" / f"{vid}.txt"
            if not fpath.exists():
                raise DataError(f"split {split!r} references {vid!r} but {fpath} is missing")
            if not lpath.exists():
                raise DataError(f"split {split!r} references {vid!r} but {lpath} is missing")
            features = read_features(fpath)
            labels = read_labels(lpath, name_to_id)
            if features.shape[0] != labels.shape[0]:
                raise DataError(f"video {vid}: {features.shape[0]} feature frames vs "
                                f"{labels.shape[0]} label lines")
            videos[vid] = Video(vid=vid, features=features, labels=labels)
    ds = Dataset(class_names, videos, splits)
    ds.validate()
    return ds
