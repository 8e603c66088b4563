"""On-disk interchange format and cross-validation folds.

Layout of a dataset directory::

    manifest.json             dataset-level metadata and the video index
    videos/<id>.json          per-video metadata: run-length labels, base64 bitset masks
    videos/<id>.kp.bin        keypoints, float32 (E, T, K, 2)
    videos/<id>.vis.bin       visual features, float32 (E, T, Dv)

Tensor files start with a 16-byte preamble: the magic ``GVHOI1``, a
little-endian uint16 rank and a uint64 element count. ``rank`` uint32
dimensions follow, then the row-major little-endian float32 payload.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data_model import EntitySequence, EntityTrack, Segment, extract_segments, rasterize
from .errors import DataError

MAGIC = b"GVHOI1"
PREAMBLE = struct.Struct("<6sHQ")
FORMAT_VERSION = 1
DATA_ROOT_ENV = "GVHOI_DATA_ROOT"
PROTOCOLS = ("leave-one-subject-out", "leave-two-subjects-out", "fixed-test-subjects")


def write_tensor(path, array: np.ndarray) -> None:
    a = np.ascontiguousarray(array, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(PREAMBLE.pack(MAGIC, a.ndim, a.size))
        fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
        fh.write(a.tobytes())


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < PREAMBLE.size or raw[:6] != MAGIC:
        raise DataError(f"{path}: bad header")
    _, rank, count = PREAMBLE.unpack_from(raw)
    dims_end = PREAMBLE.size + 4 * rank
    if len(raw) < dims_end:
        raise DataError(f"{path}: bad header (truncated dimensions)")
    shape = struct.unpack_from(f"<{rank}I", raw, PREAMBLE.size)
    if int(np.prod(shape, dtype=np.int64)) != count:
        raise DataError(f"{path}: bad header (dims {shape} disagree with element count {count})")
    expected = dims_end + 4 * count
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype="<f4", offset=dims_end).reshape(shape).astype(np.float32)


def _bits(mask: np.ndarray) -> str:
    return base64.b64encode(np.packbits(np.asarray(mask, bool).ravel()).tobytes()).decode("ascii")


def _unbits(text: str, shape: tuple[int, ...]) -> np.ndarray:
    n = int(np.prod(shape))
    packed = np.frombuffer(base64.b64decode(text), dtype=np.uint8)
    if packed.size != (n + 7) // 8:
        raise DataError(f"bitset holds {packed.size} bytes, expected {(n + 7) // 8}")
    return np.unpackbits(packed)[:n].astype(bool).reshape(shape)


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class VideoEntry:
    video_id: str
    subject_ids: list[str]
    activity: str
    n_frames: int
    paths: dict[str, str]
    sha256: dict[str, str] = field(default_factory=dict)


@dataclass
class DatasetManifest:
    name: str
    root: Path
    videos: list[VideoEntry]
    label_spaces: dict[str, list[str]]
    resolution: tuple[int, int]
    n_keypoints: int
    fps: float
    visual_dim: int
    subjects: list[str]
    splits: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        registry = set(self.subjects)
        for v in self.videos:
            unknown = set(v.subject_ids) - registry
            if unknown:
                raise DataError(f"manifest: video {v.video_id} lists unregistered subjects {sorted(unknown)}")

    def entry(self, video_id: str) -> VideoEntry:
        for v in self.videos:
            if v.video_id == video_id:
                return v
        raise DataError(f"manifest {self.name}: unknown video {video_id!r}")

    @property
    def video_ids(self) -> list[str]:
        return [v.video_id for v in self.videos]

    def to_json(self) -> dict:
        return {
            "format": "GVHOI",
            "version": FORMAT_VERSION,
            "name": self.name,
            "resolution": list(self.resolution),
            "n_keypoints": self.n_keypoints,
            "fps": self.fps,
            "visual_dim": self.visual_dim,
            "label_spaces": self.label_spaces,
            "subjects": self.subjects,
            "splits": self.splits,
            "videos": [vars(v) for v in self.videos],
        }


def resolve_root(ref: str | os.PathLike) -> Path:
    p = Path(ref)
    if not p.exists() and not p.is_absolute() and os.environ.get(DATA_ROOT_ENV):
        p = Path(os.environ[DATA_ROOT_ENV]) / p
    return p


def load_manifest(ref: str | os.PathLike) -> DatasetManifest:
    root = resolve_root(ref)
    path = root / "manifest.json" if root.is_dir() else root
    if not path.exists():
        raise DataError(f"no manifest at {path}")
    d = json.loads(path.read_text())
    if d.get("format") != "GVHOI" or d.get("version") != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported manifest format {d.get('format')}/{d.get('version')}")
    videos = [VideoEntry(**v) for v in d["videos"]]
    return DatasetManifest(d["name"], path.parent, videos, d["label_spaces"], tuple(d["resolution"]),
                           d["n_keypoints"], d["fps"], d["visual_dim"], d["subjects"], d.get("splits", {}))


def write_video(root: Path, seq: EntitySequence) -> VideoEntry:
    vdir = root / "videos"
    vdir.mkdir(parents=True, exist_ok=True)
    paths = {"meta": f"videos/{seq.video_id}.json", "keypoints": f"videos/{seq.video_id}.kp.bin",
             "visual": f"videos/{seq.video_id}.vis.bin"}
    write_tensor(root / paths["keypoints"], np.stack([e.keypoints for e in seq.entities]))
    write_tensor(root / paths["visual"], np.stack([e.visual for e in seq.entities]))
    meta = {
        "video_id": seq.video_id,
        "n_frames": seq.T,
        "fps": seq.fps,
        "activity": seq.activity,
        "entities": [
            {
                "entity_id": e.entity_id,
                "kind": e.kind,
                "labels": [list(s) for s in extract_segments(e.labels)],
                "label_mask": _bits(e.label_mask),
                "keypoint_mask": _bits(e.keypoint_mask),
            }
            for e in seq.entities
        ],
    }
    (root / paths["meta"]).write_text(json.dumps(meta, indent=1))
    sha = {k: _sha256(root / paths[k]) for k in ("keypoints", "visual")}
    return VideoEntry(seq.video_id, list(seq.subject_ids), seq.activity, seq.T, paths, sha)


def write_dataset(root, name: str, sequences: Sequence[EntitySequence], label_spaces: dict[str, list[str]],
                  resolution: tuple[int, int], splits: Optional[dict[str, list[str]]] = None) -> DatasetManifest:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = [write_video(root, s) for s in sequences]
    subjects = sorted({sub for s in sequences for sub in s.subject_ids})
    first = sequences[0]
    manifest = DatasetManifest(name, root, entries, label_spaces, tuple(resolution), first.K, first.fps,
                               int(first.entities[0].visual.shape[1]), subjects, splits or {})
    (root / "manifest.json").write_text(json.dumps(manifest.to_json(), indent=1))
    return manifest


def load_video(manifest: DatasetManifest, video_id: str, verify: bool = True) -> EntitySequence:
    entry = manifest.entry(video_id)
    root = manifest.root
    for key in ("meta", "keypoints", "visual"):
        if not (root / entry.paths[key]).exists():
            raise DataError(f"{video_id}: missing file {root / entry.paths[key]}")
    if verify:
        for key, digest in entry.sha256.items():
            if _sha256(root / entry.paths[key]) != digest:
                raise DataError(f"{root / entry.paths[key]}: checksum mismatch")
    meta = json.loads((root / entry.paths["meta"]).read_text())
    kp = read_tensor(root / entry.paths["keypoints"])
    vis = read_tensor(root / entry.paths["visual"])
    T, K, E = entry.n_frames, manifest.n_keypoints, len(meta["entities"])
    if meta["n_frames"] != T:
        raise DataError(f"{root / entry.paths['meta']}: n_frames {meta['n_frames']} != manifest {T}")
    _expect_shape(root / entry.paths["keypoints"], "keypoints", kp.shape, (E, T, K, 2))
    _expect_shape(root / entry.paths["visual"], "visual", vis.shape, (E, T, manifest.visual_dim))
    tracks = []
    for i, e in enumerate(meta["entities"]):
        labels = rasterize([Segment(*s) for s in e["labels"]], T, fill=-1)
        if (labels < 0).any():
            raise DataError(f"{root / entry.paths['meta']}: field labels of {e['entity_id']} does not cover all frames")
        space = manifest.label_spaces.get(e["kind"], [])
        if labels.max() >= len(space):
            raise DataError(f"{root / entry.paths['meta']}: field labels of {e['entity_id']} exceeds "
                            f"{e['kind']} label space of size {len(space)}")
        tracks.append(EntityTrack(e["entity_id"], e["kind"], kp[i], _unbits(e["keypoint_mask"], (T, K)), vis[i],
                                  labels, _unbits(e["label_mask"], (T,))))
    return EntitySequence(video_id, tracks, meta["fps"], meta["activity"], list(entry.subject_ids))


def _expect_shape(path, name, got, want):
    if tuple(got) != tuple(want):
        raise DataError(f"{path}: field {name} has shape {tuple(got)}, expected {tuple(want)}")


def make_folds(manifest: DatasetManifest, protocol: str, test_subjects: Optional[Sequence[str]] = None
               ) -> list[tuple[list[str], list[str]]]:
    """(train ids, test ids) per fold, subject-disjoint by construction and by assertion."""
    if protocol not in PROTOCOLS:
        raise DataError(f"unknown protocol {protocol!r}; choose from {PROTOCOLS}")
    videos = manifest.videos
    folds: list[tuple[list[str], list[str]]] = []
    if protocol == "leave-one-subject-out":
        if len(manifest.subjects) < 2:
            raise DataError("leave-one-subject-out needs at least 2 subjects")
        for v in videos:
            if len(v.subject_ids) != 1:
                raise DataError(f"leave-one-subject-out needs one subject per video; {v.video_id} has {v.subject_ids}")
        units = [(s,) for s in manifest.subjects]
    elif protocol == "leave-two-subjects-out":
        for v in videos:
            if len(v.subject_ids) != 2:
                raise DataError(f"leave-two-subjects-out needs subject pairs; {v.video_id} has {v.subject_ids}")
        units = sorted({tuple(sorted(v.subject_ids)) for v in videos})
    else:
        if not test_subjects:
            raise DataError("fixed-test-subjects needs the test subject list")
        missing = set(test_subjects) - set(manifest.subjects)
        if missing:
            raise DataError(f"test subjects not in registry: {sorted(missing)}")
        units = [tuple(sorted(test_subjects))]
    for unit in units:
        held = set(unit)
        test = [v.video_id for v in videos if set(v.subject_ids) <= held and v.subject_ids]
        train = [v.video_id for v in videos if not held & set(v.subject_ids)]
        if not test:
            continue
        if not train:
            raise DataError(f"{protocol}: holding out {sorted(held)} leaves no training videos")
        folds.append((train, test))
    if not folds:
        raise DataError(f"{protocol}: no fold has test videos")
    for train, test in folds:
        assert_subject_disjoint(manifest, train, test)
    return folds


def assert_subject_disjoint(manifest: DatasetManifest, train: Sequence[str], test: Sequence[str]) -> None:
    subj = {v.video_id: set(v.subject_ids) for v in manifest.videos}
    a = set().union(*(subj[i] for i in train)) if train else set()
    b = set().union(*(subj[i] for i in test)) if test else set()
    if a & b:
        raise DataError(f"subjects {sorted(a & b)} appear in both train and test")
