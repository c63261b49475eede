"""Trajectory file parsing, window extraction and dataset splitting.

Input files are plain text, one observation per line, whitespace or tab
separated, with a configurable column order (public trajectory corpora
disagree on the ordering of frame/pedestrian/x/y).  All coordinates are
metres in a shared world frame.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ParseError

# Column orders seen in public distributions: indices of (frame, ped, x, y)
# among the first four fields of each line.
COLUMN_ORDERS = {
    "frame_ped_xy": (0, 1, 2, 3),
    "frame_ped_yx": (0, 1, 3, 2),
    "ped_frame_xy": (1, 0, 2, 3),
    "ped_frame_yx": (1, 0, 3, 2),
}

DEFAULT_DT = 0.4  # seconds between sampled steps in the reference corpora

# (t_obs, t_pred) presets: "standard" suits top-down corpora; "short" suits
# on-vehicle recordings where occlusion keeps observed tracks brief.
WINDOW_PRESETS = {
    "standard": (8, 12),
    "short": (4, 12),
}


@dataclass(frozen=True)
class TrackPoint:
    """One observation of one pedestrian: (frame, id, x metres, y metres)."""

    frame_id: int
    ped_id: int
    x: float
    y: float


@dataclass
class Scene:
    """All track points of one recording plus its sampling geometry."""

    points: list[TrackPoint]
    frame_stride: int
    dt: float = DEFAULT_DT
    scene_id: str = ""


@dataclass
class SequenceSample:
    """One model instance: N pedestrians over a full obs+pred window.

    abs_* are positions in metres, rel_* are per-step displacements.
    rel_obs[:, 0] is defined as (0, 0); rel_fut[:, 0] is the step from the
    last observed position, so cumulatively summing rel_fut from
    abs_obs[:, -1] reconstructs abs_fut.
    """

    ped_ids: list[int]
    abs_obs: np.ndarray  # N x T_obs x 2
    abs_fut: np.ndarray  # N x T_pred x 2
    rel_obs: np.ndarray  # N x T_obs x 2
    rel_fut: np.ndarray  # N x T_pred x 2
    scene_id: str = ""
    start_frame: int = 0

    @property
    def n_peds(self):
        return self.abs_obs.shape[0]

    @property
    def t_obs(self):
        return self.abs_obs.shape[1]

    @property
    def t_pred(self):
        return self.abs_fut.shape[1]


def _parse_number(token, line_no, kind):
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"line {line_no}: non-numeric field {token!r}") from None
    if kind == "int":
        rounded = round(value)
        if abs(value - rounded) > 1e-9:
            raise ParseError(f"line {line_no}: expected integer, got {token!r}")
        return int(rounded)
    return value


def parse_trajectory_file(text, column_order="frame_ped_xy", dt=DEFAULT_DT,
                          frame_stride=None, scene_id=""):
    """Parse delimited trajectory text into a Scene.

    `text` is a string or an iterable of lines.  Lines may arrive in any
    order; the scene's points come back sorted by (frame, ped).  When
    `frame_stride` is not given it is inferred as the most common gap
    between a pedestrian's consecutive frames (1 for an empty scene).
    """
    if column_order not in COLUMN_ORDERS:
        raise ValueError(f"unknown column order {column_order!r}; choose from {sorted(COLUMN_ORDERS)}")
    idx_frame, idx_ped, idx_x, idx_y = COLUMN_ORDERS[column_order]

    lines = text.splitlines() if isinstance(text, str) else text
    points = []
    seen = set()
    for line_no, raw in enumerate(lines, start=1):
        stripped = raw.strip()
        if not stripped:
            continue
        fields = stripped.split()
        if len(fields) < 4:
            raise ParseError(f"line {line_no}: expected >=4 fields, got {len(fields)}")
        frame = _parse_number(fields[idx_frame], line_no, "int")
        ped = _parse_number(fields[idx_ped], line_no, "int")
        x = _parse_number(fields[idx_x], line_no, "float")
        y = _parse_number(fields[idx_y], line_no, "float")
        if (frame, ped) in seen:
            raise DataError(f"duplicate observation for frame {frame}, pedestrian {ped}")
        seen.add((frame, ped))
        points.append(TrackPoint(frame, ped, x, y))

    points.sort(key=lambda p: (p.frame_id, p.ped_id))
    if frame_stride is None:
        frame_stride = _infer_frame_stride(points)
    return Scene(points=points, frame_stride=frame_stride, dt=dt, scene_id=scene_id)


def load_scene(path, column_order="frame_ped_xy", dt=DEFAULT_DT, frame_stride=None):
    """Read a trajectory file from disk; scene_id is the file stem."""
    from pathlib import Path

    p = Path(path)
    return parse_trajectory_file(
        p.read_text(), column_order=column_order, dt=dt,
        frame_stride=frame_stride, scene_id=p.stem,
    )


def _infer_frame_stride(points):
    by_ped = defaultdict(list)
    for p in points:
        by_ped[p.ped_id].append(p.frame_id)
    gaps = Counter()
    for frames in by_ped.values():
        for a, b in zip(frames, frames[1:]):
            if b > a:
                gaps[b - a] += 1
    if not gaps:
        return 1
    return gaps.most_common(1)[0][0]


def window_sequences(scene, t_obs=8, t_pred=12, stride=1):
    """Cut fixed-length observation/prediction windows out of a scene.

    Windows slide over the scene's sampled frame grid in steps of `stride`.
    A pedestrian joins a window only if present at every one of its
    t_obs + t_pred frames; windows with no such pedestrian are dropped.
    """
    if t_obs < 2:
        raise ValueError(f"t_obs must be >= 2, got {t_obs}")
    if t_pred < 1:
        raise ValueError(f"t_pred must be >= 1, got {t_pred}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if not scene.points:
        return []

    by_frame = defaultdict(dict)
    for p in scene.points:
        by_frame[p.frame_id][p.ped_id] = (p.x, p.y)

    length = t_obs + t_pred
    first = scene.points[0].frame_id
    last = scene.points[-1].frame_id
    grid = range(first, last + 1, scene.frame_stride)
    n_starts = len(grid) - length + 1

    samples = []
    for start_idx in range(0, max(n_starts, 0), stride):
        frames = [grid[start_idx + k] for k in range(length)]
        present = set(by_frame[frames[0]])
        for f in frames[1:]:
            present &= set(by_frame[f])
            if not present:
                break
        if not present:
            continue
        ped_ids = sorted(present)
        track = np.array(
            [[by_frame[f][ped] for f in frames] for ped in ped_ids], dtype=np.float64
        )  # N x length x 2
        samples.append(_make_sample(ped_ids, track, t_obs, scene.scene_id, frames[0]))
    return samples


def _make_sample(ped_ids, track, t_obs, scene_id, start_frame):
    abs_obs = track[:, :t_obs].copy()
    abs_fut = track[:, t_obs:].copy()
    rel = np.zeros_like(track)
    rel[:, 1:] = track[:, 1:] - track[:, :-1]
    return SequenceSample(
        ped_ids=list(ped_ids),
        abs_obs=abs_obs,
        abs_fut=abs_fut,
        rel_obs=rel[:, :t_obs].copy(),
        rel_fut=rel[:, t_obs:].copy(),
        scene_id=scene_id,
        start_frame=start_frame,
    )


def split_dataset(samples, ratios=(0.6, 0.2, 0.2), seed=0):
    """Deterministic (train, val, test) partition of a sample list.

    Sizes are floor-rounded from the ratios with the remainder assigned to
    train; the same (samples, ratios, seed) always yields the same split.
    """
    r_train, r_val, r_test = ratios
    if abs(r_train + r_val + r_test - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    n = len(samples)
    n_val = int(n * r_val)
    n_test = int(n * r_test)
    n_train = n - n_val - n_test
    order = np.random.default_rng(seed).permutation(n)
    train = [samples[i] for i in order[:n_train]]
    val = [samples[i] for i in order[n_train : n_train + n_val]]
    test = [samples[i] for i in order[n_train + n_val :]]
    return train, val, test


def relative_round_trip_error(sample):
    """Max metre error reconstructing abs_fut from rel_fut (diagnostic)."""
    rebuilt = np.cumsum(sample.rel_fut, axis=1) + sample.abs_obs[:, -1:, :]
    return float(np.abs(rebuilt - sample.abs_fut).max())
