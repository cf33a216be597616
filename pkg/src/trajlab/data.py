"""Dataset parsing, windowing, motion representations and normalization.

Input files follow the common pedestrian-track layout: one observation per
line, whitespace separated, `frame_id pedestrian_id x y`, sampled on a fixed
frame grid. Windows split each track into an observed stretch and a future
stretch; models consume them either as per-step speeds or as positions
relative to the first observed point.
"""
from __future__ import annotations

import json
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FitError, ParseError

Array = np.ndarray

FRAME_PERIOD = 0.4  # seconds between consecutive window steps

REPRESENTATIONS = ("speeds", "relative_positions")


@dataclass
class Trajectory:
    scene_id: str
    pedestrian_id: int
    frames: Array          # (n,) int64, strictly increasing, equal gaps
    positions: Array       # (n, 2) float64, meters
    frame_period: float = FRAME_PERIOD


@dataclass
class RawWindow:
    """One observed+future slice of a track, in absolute coordinates."""

    scene_id: str
    pedestrian_id: int
    start_frame: int
    observed: Array        # (t_obs, 2)
    future: Array          # (t_pred, 2)

    @property
    def window_id(self) -> str:
        return f"{self.scene_id}:{self.pedestrian_id}:{self.start_frame}"


@dataclass
class TrackWindow:
    """A window re-expressed in a motion representation.

    observed/future hold per-step vectors in representation units; origin is
    the absolute position of the first observed point, which together with
    the steps reconstructs the raw window exactly.
    """

    observed: Array
    future: Array
    representation: str
    origin: Array
    valid_mask: Array
    scene_id: str = ""
    pedestrian_id: int = 0
    start_frame: int = 0


@dataclass
class NormStats:
    mean: Array            # (2,)
    std: Array             # (2,), floored at 1e-8

    def apply(self, x: Array) -> Array:
        return (x - self.mean) / self.std

    def invert(self, x: Array) -> Array:
        return x * self.std + self.mean


@dataclass
class RigidTransform:
    """canonical = (p - offset) @ rotation.T; invert undoes it."""

    rotation: Array        # (2, 2) orthogonal
    offset: Array          # (2,)
    degenerate: bool = False

    def apply(self, pts: Array) -> Array:
        return (np.asarray(pts) - self.offset) @ self.rotation.T

    def invert(self, pts: Array) -> Array:
        return np.asarray(pts) @ self.rotation + self.offset


@dataclass
class Fold:
    test_scene: str
    train_scenes: tuple


# ---- parsing -------------------------------------------------------------


def _parse_number(token: str, path, line_no: int, pos: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise ParseError(path, line_no, f"field {pos} is not a number: {token!r}") from None


def _parse_int(token: str, path, line_no: int, pos: int) -> int:
    value = _parse_number(token, path, line_no, pos)
    if value != int(value):
        raise ParseError(path, line_no, f"field {pos} must be an integer, got {token!r}")
    return int(value)


def parse_dataset(path) -> list[Trajectory]:
    """Read one scene file into per-pedestrian trajectories.

    Tracks are sorted by frame; a track whose frame gaps are irregular is
    split into maximal equal-gap segments rather than interpolated.
    """
    path = Path(path)
    scene_id = path.stem
    by_ped: dict[int, list] = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != 4:
                raise ParseError(path, line_no, f"expected 4 fields, got {len(tokens)}")
            frame = _parse_int(tokens[0], path, line_no, 1)
            ped = _parse_int(tokens[1], path, line_no, 2)
            x = _parse_number(tokens[2], path, line_no, 3)
            y = _parse_number(tokens[3], path, line_no, 4)
            by_ped.setdefault(ped, []).append((frame, x, y, line_no))

    out: list[Trajectory] = []
    for ped in sorted(by_ped):
        rows = sorted(by_ped[ped], key=lambda r: r[0])
        for i in range(1, len(rows)):
            if rows[i][0] == rows[i - 1][0]:
                raise ParseError(path, rows[i][3], f"duplicate frame {rows[i][0]} for pedestrian {ped}")
        frames = np.array([r[0] for r in rows], dtype=np.int64)
        coords = np.array([[r[1], r[2]] for r in rows], dtype=np.float64)
        for lo, hi in _equal_gap_segments(frames):
            out.append(Trajectory(scene_id, ped, frames[lo:hi], coords[lo:hi]))
    return out


def _equal_gap_segments(frames: Array):
    """Index ranges [lo, hi) over which consecutive frame gaps are constant."""
    n = len(frames)
    if n <= 2:
        yield 0, n
        return
    gaps = np.diff(frames)
    lo = 0
    for i in range(1, len(gaps)):
        if gaps[i] != gaps[lo]:
            yield lo, i + 1
            lo = i
    yield lo, n


# ---- windowing -----------------------------------------------------------


def extract_windows(traj: Trajectory, t_obs: int = 8, t_pred: int = 12, stride: int = 1) -> list[RawWindow]:
    if t_obs < 1 or t_pred < 1:
        raise ConfigError(f"window lengths must be >= 1, got t_obs={t_obs} t_pred={t_pred}")
    if stride < 1:
        raise ConfigError(f"stride must be >= 1, got {stride}")
    total = t_obs + t_pred
    n = len(traj.positions)
    out = []
    for start in range(0, n - total + 1, stride):
        pos = traj.positions[start:start + total]
        out.append(RawWindow(
            scene_id=traj.scene_id,
            pedestrian_id=traj.pedestrian_id,
            start_frame=int(traj.frames[start]),
            observed=pos[:t_obs].copy(),
            future=pos[t_obs:].copy(),
        ))
    return out


def window_all(trajectories, t_obs: int = 8, t_pred: int = 12, stride: int = 1) -> list[RawWindow]:
    out = []
    for traj in trajectories:
        out.extend(extract_windows(traj, t_obs, t_pred, stride))
    return out


# ---- representations -----------------------------------------------------


def to_representation(raw: RawWindow, mode: str) -> TrackWindow:
    """Encode a raw window as per-step speeds or first-point-relative positions.

    The first observed speed is defined as (0, 0) so the observed block keeps
    its length; decoding integrates steps back from the origin.
    """
    if mode not in REPRESENTATIONS:
        raise ConfigError(f"unknown representation {mode!r}")
    obs, fut = raw.observed, raw.future
    origin = obs[0].copy()
    if mode == "speeds":
        obs_steps = np.zeros_like(obs)
        obs_steps[1:] = obs[1:] - obs[:-1]
        fut_steps = np.empty_like(fut)
        fut_steps[0] = fut[0] - obs[-1]
        fut_steps[1:] = fut[1:] - fut[:-1]
    else:
        obs_steps = obs - origin
        fut_steps = fut - origin
    return TrackWindow(
        observed=obs_steps,
        future=fut_steps,
        representation=mode,
        origin=origin,
        valid_mask=np.ones(len(obs), dtype=bool),
        scene_id=raw.scene_id,
        pedestrian_id=raw.pedestrian_id,
        start_frame=raw.start_frame,
    )


def decode_observed(window: TrackWindow) -> Array:
    if window.representation == "speeds":
        return window.origin + np.cumsum(window.observed, axis=0)
    return window.origin + window.observed


def decode_future(window: TrackWindow, steps: Array | None = None) -> Array:
    """Absolute positions for future steps (defaults to the stored ones)."""
    steps = window.future if steps is None else np.asarray(steps)
    if window.representation == "speeds":
        last_observed = window.origin + window.observed.sum(axis=0)
        return last_observed + np.cumsum(steps, axis=0)
    return window.origin + steps


def decode_window(window: TrackWindow) -> RawWindow:
    return RawWindow(
        scene_id=window.scene_id,
        pedestrian_id=window.pedestrian_id,
        start_frame=window.start_frame,
        observed=decode_observed(window),
        future=decode_future(window),
    )


# ---- normalization -------------------------------------------------------

STD_FLOOR = 1e-8


def fit_normalization(windows) -> NormStats:
    """Per-component mean/std over every step vector of the given windows."""
    if not windows:
        raise FitError("cannot fit normalization on zero windows")
    steps = np.concatenate([w.observed for w in windows] + [w.future for w in windows], axis=0)
    mean = steps.mean(axis=0)
    std = steps.std(axis=0)  # population std
    return NormStats(mean=mean, std=np.maximum(std, STD_FLOOR))


def normalize_window(window: TrackWindow, stats: NormStats) -> TrackWindow:
    return TrackWindow(
        observed=stats.apply(window.observed),
        future=stats.apply(window.future),
        representation=window.representation,
        origin=window.origin,
        valid_mask=window.valid_mask,
        scene_id=window.scene_id,
        pedestrian_id=window.pedestrian_id,
        start_frame=window.start_frame,
    )


# ---- augmentation --------------------------------------------------------


def augment_scale(windows, scale_range=(0.5, 2.0), seed: int = 0) -> list[RawWindow]:
    """Originals plus one uniformly rescaled copy of each window.

    Scaling multiplies all coordinates of a window by a single factor, which
    scales every speed linearly.
    """
    lo, hi = scale_range
    if not (0 < lo <= hi):
        raise ConfigError(f"bad scale range {scale_range}")
    rng = np.random.default_rng(seed)
    out = list(windows)
    for w in windows:
        s = rng.uniform(lo, hi)
        out.append(RawWindow(
            scene_id=w.scene_id,
            pedestrian_id=w.pedestrian_id,
            start_frame=w.start_frame,
            observed=w.observed * s,
            future=w.future * s,
        ))
    return out


# ---- canonical frame -----------------------------------------------------


def canonicalize(raw: RawWindow) -> tuple[RawWindow, RigidTransform]:
    """Translate the first observed point to the origin and rotate the last
    observed point onto the positive x-axis. Returns the transformed window
    and the transform (invertible; flagged degenerate when first and last
    observed points coincide, in which case only the translation applies)."""
    first = raw.observed[0]
    last = raw.observed[-1]
    v = last - first
    r = float(np.hypot(v[0], v[1]))
    if r == 0.0:
        rot = np.eye(2)
        degenerate = True
    else:
        c, s = v[0] / r, v[1] / r
        rot = np.array([[c, s], [-s, c]])
        degenerate = False
    tf = RigidTransform(rotation=rot, offset=first.copy(), degenerate=degenerate)
    return RawWindow(
        scene_id=raw.scene_id,
        pedestrian_id=raw.pedestrian_id,
        start_frame=raw.start_frame,
        observed=tf.apply(raw.observed),
        future=tf.apply(raw.future),
    ), tf


# ---- leave-one-out folds -------------------------------------------------


def loo_splits(scene_names) -> list[Fold]:
    names = list(scene_names)
    if len(names) < 2:
        raise ConfigError(f"leave-one-out needs at least 2 scenes, got {len(names)}")
    if len(set(names)) != len(names):
        raise ConfigError("duplicate scene names")
    return [Fold(test_scene=t, train_scenes=tuple(n for n in names if n != t)) for t in names]


# ---- window cache --------------------------------------------------------

CACHE_VERSION = 1


def manifest_path(cache_path) -> Path:
    return Path(str(cache_path) + ".json")


def save_cache(cache_path, windows: list[RawWindow], *, t_obs: int, t_pred: int,
               stride: int, config_hash: str = "") -> dict:
    """Write windows as little-endian float64 blobs plus a JSON manifest."""
    cache_path = Path(cache_path)
    scenes = sorted({w.scene_id for w in windows})
    scene_index = {s: i for i, s in enumerate(scenes)}
    n = len(windows)
    coords = np.stack([np.concatenate([w.observed, w.future], axis=0) for w in windows]) \
        if n else np.zeros((0, t_obs + t_pred, 2))
    peds = np.array([w.pedestrian_id for w in windows], dtype=np.int64)
    starts = np.array([w.start_frame for w in windows], dtype=np.int64)
    scene_ids = np.array([scene_index[w.scene_id] for w in windows], dtype=np.int64)

    blob = b"".join([
        coords.astype("<f8").tobytes(),
        peds.astype("<i8").tobytes(),
        starts.astype("<i8").tobytes(),
        scene_ids.astype("<i8").tobytes(),
    ])
    cache_path.parent.mkdir(parents=True, exist_ok=True)
    cache_path.write_bytes(blob)

    manifest = {
        "format_version": CACHE_VERSION,
        "t_obs": t_obs,
        "t_pred": t_pred,
        "stride": stride,
        "config_hash": config_hash,
        "scenes": scenes,
        "counts": {s: int((scene_ids == scene_index[s]).sum()) for s in scenes},
        "n_windows": n,
        "coord_bytes": coords.size * 8,
    }
    manifest_path(cache_path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_cache(cache_path) -> tuple[list[RawWindow], dict]:
    cache_path = Path(cache_path)
    manifest = json.loads(manifest_path(cache_path).read_text())
    if manifest.get("format_version") != CACHE_VERSION:
        raise DataError(f"unsupported cache version {manifest.get('format_version')}")
    t_obs, t_pred, n = manifest["t_obs"], manifest["t_pred"], manifest["n_windows"]
    total = t_obs + t_pred
    blob = cache_path.read_bytes()
    coord_bytes = n * total * 2 * 8
    idx_bytes = n * 8
    expected = coord_bytes + 3 * idx_bytes
    if len(blob) != expected:
        raise DataError(f"cache size mismatch: {len(blob)} bytes, expected {expected}")
    coords = np.frombuffer(blob, dtype="<f8", count=n * total * 2).reshape(n, total, 2)
    peds = np.frombuffer(blob, dtype="<i8", count=n, offset=coord_bytes)
    starts = np.frombuffer(blob, dtype="<i8", count=n, offset=coord_bytes + idx_bytes)
    scene_ids = np.frombuffer(blob, dtype="<i8", count=n, offset=coord_bytes + 2 * idx_bytes)
    scenes = manifest["scenes"]
    windows = [
        RawWindow(
            scene_id=scenes[scene_ids[i]],
            pedestrian_id=int(peds[i]),
            start_frame=int(starts[i]),
            observed=coords[i, :t_obs].astype(np.float64),
            future=coords[i, t_obs:].astype(np.float64),
        )
        for i in range(n)
    ]
    return windows, manifest


def stable_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]
