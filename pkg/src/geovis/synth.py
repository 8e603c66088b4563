"""Deterministic synthetic multi-person interaction scenes.

Humans cycle through idle / approach / manipulate / retreat at their own
pace, so at any frame some are busy while others wait. Objects sit still
unless a human manipulates them. All randomness comes from Philox streams
keyed by the script seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data_model import HUMAN, OBJECT, EntitySequence, EntityTrack
from .errors import DataError

HUMAN_CLASSES = ("idle", "approach", "manipulate", "retreat")
OBJECT_CLASSES = ("static", "manipulated")
ACTION_INDEX = {a: i for i, a in enumerate(HUMAN_CLASSES)}

# keypoint offsets (pixels at scale 1) from the body centre
SKELETON = np.array([
    [0.0, -80.0],  # head
    [-40.0, -10.0],  # left hand
    [40.0, -10.0],  # right hand
    [0.0, 20.0],  # pelvis
    [-20.0, 90.0],  # left foot
    [20.0, 90.0],  # right foot
])
N_KEYPOINTS = len(SKELETON)
OBJECT_HALF_SIZE = np.array([20.0, 15.0])
STAND_OFFSET = np.array([0.0, -70.0])
_PROJECTION_KEY = 0x5EED


def _rng(*key: int) -> np.random.Generator:
    words = np.array([k & 0xFFFFFFFFFFFFFFFF for k in key] + [0] * (2 - len(key)), dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=words[:2]))


@dataclass
class Step:
    duration: int
    action: str
    target: Optional[int] = None


@dataclass
class ScenarioScript:
    n_humans: int
    n_objects: int
    timeline: list[list[Step]]  # one list per human
    homes: np.ndarray  # (n_humans, 2) pixels
    object_centers: np.ndarray  # (n_objects, 2) pixels
    noise_sigma: float = 0.0
    occlusion_rate: float = 0.0
    seed: int = 0
    resolution: tuple[int, int] = (640, 480)
    visual_dim: int = 64
    visual_noise: float = 4.0
    human_scales: list[float] = field(default_factory=list)
    video_id: str = "synthetic"
    subject_ids: list[str] = field(default_factory=list)
    activity: str = "interaction"

    @property
    def n_frames(self) -> int:
        return sum(s.duration for s in self.timeline[0]) if self.timeline else 0

    def validate(self) -> None:
        if self.n_humans < 1 or len(self.timeline) != self.n_humans:
            raise DataError("script needs one timeline per human (at least one human)")
        totals = {sum(s.duration for s in tl) for tl in self.timeline}
        if len(totals) != 1:
            raise DataError(f"inconsistent durations across entities: {sorted(totals)}")
        if self.n_frames < 1:
            raise DataError("script has no frames")
        for tl in self.timeline:
            for s in tl:
                if s.duration < 1:
                    raise DataError(f"non-positive duration in {s}")
                if s.action not in ACTION_INDEX:
                    raise DataError(f"unknown action {s.action!r}")
                if s.action in ("approach", "manipulate") and not (s.target is not None and 0 <= s.target < self.n_objects):
                    raise DataError(f"{s.action} needs a valid object target, got {s.target}")
        if not 0.0 <= self.occlusion_rate <= 1.0:
            raise DataError("occlusion_rate must lie in [0, 1]")


def projection(kind: str, visual_dim: int) -> np.ndarray:
    """Fixed class-conditioned projection shared by every generated video."""
    n = len(HUMAN_CLASSES if kind == HUMAN else OBJECT_CLASSES)
    return _rng(_PROJECTION_KEY, 0 if kind == HUMAN else 1).normal(size=(n + 2, visual_dim))


def _human_centres(script: ScenarioScript, h: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Body centre per frame, label per frame, manipulation target per frame and oscillation phase."""
    T = script.n_frames
    centre = np.zeros((T, 2))
    labels = np.zeros(T, np.int64)
    target = np.full(T, -1)
    phase = np.zeros(T)
    pos = np.asarray(script.homes[h], dtype=np.float64)
    t = 0
    for step in script.timeline[h]:
        D = step.duration
        labels[t:t + D] = ACTION_INDEX[step.action]
        if step.action == "idle":
            centre[t:t + D] = pos
        elif step.action in ("approach", "retreat"):
            goal = (script.object_centers[step.target] + STAND_OFFSET if step.action == "approach"
                    else np.asarray(script.homes[h], dtype=np.float64))
            frac = np.arange(D) / (D - 1) if D > 1 else np.ones(1)
            centre[t:t + D] = pos + frac[:, None] * (goal - pos)
            pos = goal.copy()
        else:  # manipulate
            pos = script.object_centers[step.target] + STAND_OFFSET
            centre[t:t + D] = pos
            target[t:t + D] = step.target
            phase[t:t + D] = np.arange(D)
        t += D
    return centre, labels, target, phase


def generate(script: ScenarioScript) -> EntitySequence:
    script.validate()
    T = script.n_frames
    W, H = script.resolution
    res = np.array([W, H], dtype=np.float64)
    noise_rng = _rng(script.seed, 1)
    occ_rng = _rng(script.seed, 2)
    vis_rng = _rng(script.seed, 3)
    scales = script.human_scales or [1.0] * script.n_humans

    human_data = [_human_centres(script, h) for h in range(script.n_humans)]
    manipulated = np.zeros((T, script.n_objects), bool)
    wobble = np.zeros((T, script.n_objects, 2))
    for centre, labels, target, phase in human_data:
        for j in range(script.n_objects):
            on = target == j
            manipulated[:, j] |= on
            wobble[on, j, 1] += 6.0 * np.sin(2 * np.pi * phase[on] / 15.0)

    obj_centre = np.asarray(script.object_centers, dtype=np.float64).reshape(-1, 2)
    tracks = []
    P_h = projection(HUMAN, script.visual_dim)
    P_o = projection(OBJECT, script.visual_dim)

    for h, (centre, labels, target, phase) in enumerate(human_data):
        kp = centre[:, None, :] + scales[h] * SKELETON[None]
        swing = np.where(target >= 0, 10.0 * np.sin(2 * np.pi * phase / 15.0), 0.0)
        kp[:, 2, 1] += swing  # right hand works the object
        kp = kp + script.noise_sigma * res * noise_rng.normal(size=kp.shape)
        mask = _occlusion(occ_rng, T, N_KEYPOINTS, script.occlusion_rate, N_KEYPOINTS)
        rel = _nearest_offset(centre, obj_centre) / res
        z = np.concatenate([np.eye(len(HUMAN_CLASSES))[labels], rel], axis=1)
        visual = z @ P_h + script.visual_noise * vis_rng.normal(size=(T, script.visual_dim))
        tracks.append(EntityTrack(f"h{h}", HUMAN, kp, mask, visual, labels, np.ones(T, bool)))

    for j in range(script.n_objects):
        c = obj_centre[j][None, :] + wobble[:, j]
        kp = np.zeros((T, N_KEYPOINTS, 2))
        kp[:, 0] = c - OBJECT_HALF_SIZE
        kp[:, 1] = c + OBJECT_HALF_SIZE
        kp[:, :2] += script.noise_sigma * res * noise_rng.normal(size=(T, 2, 2))
        mask = _occlusion(occ_rng, T, N_KEYPOINTS, script.occlusion_rate, 2)
        labels = manipulated[:, j].astype(np.int64)
        centres = np.stack([d[0] for d in human_data], axis=1)  # (T, nh, 2)
        d = centres - c[:, None, :]
        nearest = d[np.arange(T), np.argmin((d ** 2).sum(-1), axis=1)] / res
        z = np.concatenate([np.eye(len(OBJECT_CLASSES))[labels], nearest], axis=1)
        visual = z @ P_o + script.visual_noise * vis_rng.normal(size=(T, script.visual_dim))
        tracks.append(EntityTrack(f"o{j}", OBJECT, kp, mask, visual, labels, np.ones(T, bool)))

    return EntitySequence(script.video_id, tracks, 30.0, script.activity, list(script.subject_ids))


def _occlusion(rng: np.random.Generator, T: int, K: int, rate: float, n_valid: int) -> np.ndarray:
    mask = np.zeros((T, K), bool)
    mask[:, :n_valid] = True
    dropped = rng.random(T) < rate
    mask[dropped] = False
    return mask


def _nearest_offset(centre: np.ndarray, objects: np.ndarray) -> np.ndarray:
    if len(objects) == 0:
        return np.zeros_like(centre)
    d = objects[None, :, :] - centre[:, None, :]
    return d[np.arange(len(centre)), np.argmin((d ** 2).sum(-1), axis=1)]


def random_timeline(rng: np.random.Generator, T: int, n_objects: int) -> list[Step]:
    steps: list[Step] = []
    remaining = T
    first = True
    while remaining > 0:
        if n_objects == 0:
            steps.append(Step(remaining, "idle"))
            break
        target = int(rng.integers(n_objects))
        idle = int(rng.integers(0, 30)) if first else int(rng.integers(20, 45))
        cycle = [Step(idle, "idle"), Step(int(rng.integers(25, 45)), "approach", target),
                 Step(int(rng.integers(25, 45)), "manipulate", target), Step(int(rng.integers(25, 45)), "retreat")]
        first = False
        for s in cycle:
            if s.duration == 0:
                continue
            if s.duration >= remaining:
                s.duration = remaining
                remaining = 0
                steps.append(s)
                break
            steps.append(s)
            remaining -= s.duration
    # a trailing sliver is merged into the previous step
    if len(steps) > 1 and steps[-1].duration < 5:
        steps[-2].duration += steps.pop().duration
    return steps


def random_script(seed: int, n_humans: int, n_objects: int, T: int, **kwargs) -> ScenarioScript:
    rng = _rng(seed, 0)
    W, H = kwargs.get("resolution", (640, 480))
    homes = np.stack([rng.uniform(0.1 * W, 0.9 * W, n_humans), rng.uniform(0.25 * H, 0.35 * H, n_humans)], 1)
    objects = np.stack([rng.uniform(0.15 * W, 0.85 * W, n_objects), rng.uniform(0.65 * H, 0.8 * H, n_objects)], 1)
    timeline = [random_timeline(rng, T, n_objects) for _ in range(n_humans)]
    return ScenarioScript(n_humans, n_objects, timeline, homes, objects.reshape(n_objects, 2), seed=seed, **kwargs)


PRESETS = {
    "tiny": {"n_videos": 4, "n_humans": 2, "n_objects": 1, "T": 200, "n_test": 1},
    "small": {"n_videos": 24, "n_humans": 3, "n_objects": 2, "T": 400, "n_test": 6},
}


@dataclass
class Benchmark:
    name: str
    sequences: list[EntitySequence]
    train_ids: list[str]
    test_ids: list[str]
    resolution: tuple[int, int]
    n_keypoints: int = N_KEYPOINTS
    fps: float = 30.0
    label_spaces: dict = field(default_factory=lambda: {HUMAN: list(HUMAN_CLASSES), OBJECT: list(OBJECT_CLASSES)})

    def by_id(self, ids) -> list[EntitySequence]:
        index = {s.video_id: s for s in self.sequences}
        return [index[i] for i in ids]

    @property
    def subjects(self) -> list[str]:
        return sorted({s for seq in self.sequences for s in seq.subject_ids})


def subject_scale(subject: str) -> float:
    n = int(subject.lstrip("s"))
    return float(_rng(_PROJECTION_KEY, 100 + n).uniform(0.8, 1.2))


def make_benchmark(preset: str = "tiny", seed: int = 0, **script_kwargs) -> Benchmark:
    """Videos for a preset; test videos use a disjoint subject pool and their own seeds."""
    if preset not in PRESETS:
        raise DataError(f"unknown synthetic preset {preset!r}")
    p = PRESETS[preset]
    nh = p["n_humans"]
    n_test = p["n_test"]
    n_train = p["n_videos"] - n_test
    train_pool = [f"s{i}" for i in range(max(3 * nh, nh))]
    test_pool = [f"s{len(train_pool) + i}" for i in range(nh)]
    pick = _rng(seed, 7)
    seqs, train_ids, test_ids = [], [], []
    for v in range(p["n_videos"]):
        is_test = v >= n_train
        vid = f"{preset}_{'test' if is_test else 'train'}_{v:03d}"
        subjects = test_pool if is_test else sorted(pick.choice(train_pool, nh, replace=False).tolist())
        script = random_script(seed * 1000 + v, nh, p["n_objects"], p["T"], video_id=vid, subject_ids=list(subjects),
                               human_scales=[subject_scale(s) for s in subjects], **script_kwargs)
        seqs.append(generate(script))
        (test_ids if is_test else train_ids).append(vid)
    return Benchmark(preset, seqs, train_ids, test_ids, (640, 480))
