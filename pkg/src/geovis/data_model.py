"""Core domain types: entity tracks, geometric features and segment timelines."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DataError

HUMAN = "human"
OBJECT = "object"
KINDS = (HUMAN, OBJECT)


class Segment(NamedTuple):
    """Inclusive frame range ``[start, end]`` carrying one class label."""

    start: int
    end: int
    label: int

    @property
    def length(self) -> int:
        return self.end - self.start + 1


SegmentTimeline = list[Segment]


@dataclass
class EntityTrack:
    entity_id: str
    kind: str
    keypoints: np.ndarray  # (T, K, 2) pixels, float32
    keypoint_mask: np.ndarray  # (T, K) bool
    visual: np.ndarray  # (T, Dv)
    labels: np.ndarray  # (T,) int
    label_mask: np.ndarray  # (T,) bool

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"entity {self.entity_id}: unknown kind {self.kind!r}")
        self.keypoint_mask = np.asarray(self.keypoint_mask, dtype=bool)
        self.keypoints = np.where(self.keypoint_mask[..., None], np.asarray(self.keypoints, dtype=np.float32), 0.0).astype(np.float32)
        self.visual = np.asarray(self.visual, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.label_mask = np.asarray(self.label_mask, dtype=bool)
        T = self.keypoints.shape[0]
        if self.keypoints.ndim != 3 or self.keypoints.shape[2] != 2:
            raise DataError(f"entity {self.entity_id}: keypoints must be (T, K, 2), got {self.keypoints.shape}")
        if self.keypoint_mask.shape != self.keypoints.shape[:2]:
            raise DataError(f"entity {self.entity_id}: keypoint_mask shape {self.keypoint_mask.shape}")
        for name in ("visual", "labels", "label_mask"):
            if getattr(self, name).shape[0] != T:
                raise DataError(f"entity {self.entity_id}: {name} has {getattr(self, name).shape[0]} frames, expected {T}")

    @property
    def n_frames(self) -> int:
        return self.keypoints.shape[0]

    @property
    def n_keypoints(self) -> int:
        return self.keypoints.shape[1]


@dataclass
class EntitySequence:
    video_id: str
    entities: list[EntityTrack]
    fps: float = 30.0
    activity: str = ""
    subject_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.entities:
            raise DataError(f"{self.video_id}: no entities")
        T = self.entities[0].n_frames
        K = self.entities[0].n_keypoints
        for e in self.entities:
            if e.n_frames != T:
                raise DataError(f"{self.video_id}: entity {e.entity_id} has {e.n_frames} frames, expected {T}")
            if e.n_keypoints != K:
                raise DataError(f"{self.video_id}: entity {e.entity_id} has K={e.n_keypoints}, expected {K}")
        if not any(e.kind == HUMAN for e in self.entities):
            raise DataError(f"{self.video_id}: at least one human entity is required")

    @property
    def T(self) -> int:
        return self.entities[0].n_frames

    @property
    def K(self) -> int:
        return self.entities[0].n_keypoints

    @property
    def humans(self) -> list[EntityTrack]:
        return [e for e in self.entities if e.kind == HUMAN]

    @property
    def objects(self) -> list[EntityTrack]:
        return [e for e in self.entities if e.kind == OBJECT]

    def subsample(self, stride: int) -> "EntitySequence":
        if stride == 1:
            return self
        tracks = [
            EntityTrack(e.entity_id, e.kind, e.keypoints[::stride], e.keypoint_mask[::stride],
                        e.visual[::stride], e.labels[::stride], e.label_mask[::stride])
            for e in self.entities
        ]
        return EntitySequence(self.video_id, tracks, self.fps / stride, self.activity, list(self.subject_ids))

    def cap_objects(self, cap: int | None) -> "EntitySequence":
        if cap is None:
            return self
        kept, n_obj = [], 0
        for e in self.entities:
            if e.kind == OBJECT:
                n_obj += 1
                if n_obj > cap:
                    continue
            kept.append(e)
        return EntitySequence(self.video_id, kept, self.fps, self.activity, list(self.subject_ids))


@dataclass(frozen=True)
class NormalizationSpec:
    width: float
    height: float


@dataclass
class GeometricFeatures:
    values: np.ndarray  # (T, E, K, 4): x, y, vx, vy
    mask: np.ndarray  # (T, E, K)


def derive_geometric_features(seq: EntitySequence, normalize: NormalizationSpec) -> GeometricFeatures:
    """Normalized positions plus backward-difference velocities.

    A velocity is only nonzero when the keypoint is valid in both the
    current and the previous frame.
    """
    if seq.T == 0:
        raise DataError("empty sequence")
    scale = np.array([normalize.width, normalize.height], dtype=np.float64)
    pos = np.stack([e.keypoints for e in seq.entities], axis=1).astype(np.float64) / scale  # (T, E, K, 2)
    mask = np.stack([e.keypoint_mask for e in seq.entities], axis=1)
    pos = np.where(mask[..., None], pos, 0.0)
    vel = np.zeros_like(pos)
    both = mask[1:] & mask[:-1]
    vel[1:] = np.where(both[..., None], pos[1:] - pos[:-1], 0.0)
    return GeometricFeatures(np.concatenate([pos, vel], axis=-1), mask)


def extract_segments(labels: Sequence[int], label_mask: Sequence[bool] | None = None) -> SegmentTimeline:
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0:
        raise DataError("labels must be a non-empty 1-D sequence")
    mask = np.ones(labels.shape, bool) if label_mask is None else np.asarray(label_mask, bool)
    segments: SegmentTimeline = []
    start = None
    for t in range(labels.size):
        if not mask[t]:
            if start is not None:
                segments.append(Segment(start, t - 1, int(labels[start])))
                start = None
            continue
        if start is None:
            start = t
        elif labels[t] != labels[start]:
            segments.append(Segment(start, t - 1, int(labels[start])))
            start = t
    if start is not None:
        segments.append(Segment(start, labels.size - 1, int(labels[start])))
    return segments


def rasterize(segments: SegmentTimeline, n_frames: int, fill: int = -1) -> np.ndarray:
    out = np.full(n_frames, fill, dtype=np.int64)
    for s in segments:
        out[s.start:s.end + 1] = s.label
    return out
