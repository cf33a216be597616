"""Motion-type clustering and endpoint imputation studies.

Tracks are first canonicalized (origin at the first observed position, the
line to the last observed position rotated onto +x) so that clustering sees
pose-free motion shapes. Each window reduces to two features: how far it
travels while observed, and how spread out its future headings are.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codebook import kmeans_fit
from .data import RawWindow, canonicalize
from .errors import ConfigError, FitError, ModelError

Array = np.ndarray

FEATURE_STD_FLOOR = 1e-8


def canonicalize_windows(raws) -> list:
    """Canonical copies of the given windows, in order."""
    return [canonicalize(r)[0] for r in raws]


def heading_spread(window: RawWindow) -> float:
    """Circular variance of the future per-step heading angles.

    The step into the first future position counts. Steps with zero length
    carry no heading and are skipped; a future that never moves spreads 0.
    """
    points = np.concatenate([window.observed[-1:], window.future], axis=0)
    steps = np.diff(points, axis=0)
    lengths = np.sqrt((steps ** 2).sum(axis=1))
    moving = steps[lengths > 0.0]
    if len(moving) == 0:
        return 0.0
    angles = np.arctan2(moving[:, 1], moving[:, 0])
    resultant = math.hypot(float(np.cos(angles).sum()), float(np.sin(angles).sum()))
    return 1.0 - resultant / len(moving)


def motion_features(window: RawWindow) -> Array:
    """(travel, heading spread) for one canonical window.

    Travel is the x coordinate of the last observed canonical position, which
    equals the straight-line distance covered over the observed portion.
    """
    return np.array([window.observed[-1, 0], heading_spread(window)])


def observed_distance(a: RawWindow, b: RawWindow) -> float:
    """Summed per-step Euclidean distance between two observed portions."""
    if a.observed.shape != b.observed.shape:
        raise ConfigError(
            f"observed portions differ in shape: {a.observed.shape} vs {b.observed.shape}")
    return float(np.sqrt(((a.observed - b.observed) ** 2).sum(axis=1)).sum())


@dataclass
class MotionCluster:
    """One motion type: its members, their features, and a medoid exemplar."""

    cluster_id: int
    member_ids: list
    medoid_id: str
    features: Array          # (members, 2), rows aligned with member_ids
    mean_speed: float        # mean travel feature, the ordering key


def _medoid_index(observed: Array) -> int:
    # summed pairwise track distance, chunked so the (m, m) matrix is the
    # only quadratic allocation
    m = len(observed)
    totals = np.zeros(m)
    for i in range(m):
        d = np.sqrt(((observed[i] - observed) ** 2).sum(axis=2)).sum(axis=1)
        totals[i] = d.sum()
    return int(np.argmin(totals))


def cluster_motion_types(windows, n_clusters: int = 6, seed: int = 0) -> list:
    """Group canonical windows into motion types.

    K-means runs on standardized (travel, heading spread) features; the
    returned clusters are renumbered 1..n by ascending mean travel, and each
    carries the medoid member (least summed observed-track distance to its
    co-members, ties to the smallest window id).
    """
    windows = list(windows)
    if len(windows) < n_clusters:
        raise FitError(f"need at least {n_clusters} windows, got {len(windows)}")
    feats = np.stack([motion_features(w) for w in windows])
    mean = feats.mean(axis=0)
    std = np.maximum(feats.std(axis=0), FEATURE_STD_FLOOR)
    _, assign, _, _ = kmeans_fit((feats - mean) / std, n_clusters, seed=seed)

    groups = []
    for c in range(n_clusters):
        idx = np.flatnonzero(assign == c)
        order = sorted(idx, key=lambda i: windows[i].window_id)
        groups.append((float(feats[idx, 0].mean()), order))
    groups.sort(key=lambda g: g[0])

    clusters = []
    for new_id, (mean_speed, order) in enumerate(groups, start=1):
        members = [windows[i] for i in order]
        medoid = members[_medoid_index(np.stack([w.observed for w in members]))]
        clusters.append(MotionCluster(
            cluster_id=new_id,
            member_ids=[w.window_id for w in members],
            medoid_id=medoid.window_id,
            features=feats[order],
            mean_speed=mean_speed,
        ))
    return clusters


def nearest_to_medoid(test_windows, medoid: RawWindow) -> list:
    """Rank windows by observed-track distance to the medoid, closest first.

    Returns (window, distance) pairs; equal distances fall back to window id.
    """
    scored = [(observed_distance(w, medoid), w.window_id, w) for w in test_windows]
    scored.sort(key=lambda t: (t[0], t[1]))
    return [(w, d) for d, _, w in scored]


# ---- endpoint imputation -------------------------------------------------


@dataclass
class SweepEntry:
    endpoint: Array          # the requested absolute endpoint
    final_position: Array    # where the decoded track actually ends
    result: object           # ForecastResult


def endpoint_sweep(forecaster, raw: RawWindow, endpoints) -> list:
    """Decode the same observed portion once per candidate endpoint."""
    cfg = forecaster.config
    if cfg.architecture != "bert_os" or not cfg.oracle_endpoint:
        raise ModelError("endpoint sweeps need a one-shot model trained with known endpoints")
    endpoints = [np.asarray(e, dtype=np.float64) for e in endpoints]
    if not endpoints:
        return []
    results = forecaster.forecast_batch([raw] * len(endpoints), endpoints=endpoints)
    return [SweepEntry(endpoint=e, final_position=res.positions[-1], result=res)
            for e, res in zip(endpoints, results)]


# ---- figure data ---------------------------------------------------------

PANEL_HEADER = "track_id\tstep\tx\ty\trole\tcluster_id"
PANEL_CAP = 200

_ROLE_COLORS = {"observed": "#1f77b4", "future_true": "#2ca02c", "future_pred": "#d62728"}


def _track_rows(track_id: str, cluster_id: int, window: RawWindow, pred=None) -> list:
    rows = []
    step = 0
    for role, points in (("observed", window.observed), ("future_true", window.future)):
        for p in points:
            rows.append(f"{track_id}\t{step}\t{p[0]:.6f}\t{p[1]:.6f}\t{role}\t{cluster_id}")
            step += 1
    if pred is not None:
        for j, p in enumerate(pred):
            rows.append(f"{track_id}\t{len(window.observed) + j}\t{p[0]:.6f}\t{p[1]:.6f}"
                        f"\tfuture_pred\t{cluster_id}")
    return rows


def tracks_svg(tracks, width: int = 480, height: int = 480, margin: float = 20.0) -> str:
    """Standalone SVG drawing (points, role) polyline tracks."""
    pts = [p for points, _ in tracks for p in np.asarray(points, dtype=np.float64)]
    if pts:
        all_pts = np.stack(pts)
        lo = all_pts.min(axis=0)
        hi = all_pts.max(axis=0)
    else:
        lo = np.zeros(2)
        hi = np.ones(2)
    span = np.maximum(hi - lo, 1e-9)
    sx = (width - 2 * margin) / span[0]
    sy = (height - 2 * margin) / span[1]
    s = min(sx, sy)

    def to_px(p):
        x = margin + (p[0] - lo[0]) * s
        y = height - margin - (p[1] - lo[1]) * s
        return f"{x:.2f},{y:.2f}"

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    for points, role in tracks:
        color = _ROLE_COLORS.get(role, "#888888")
        coords = " ".join(to_px(p) for p in np.asarray(points, dtype=np.float64))
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                     f'stroke-width="1.2" opacity="0.7"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_cluster_figures(clusters, windows_by_id, out_dir, cap: int = PANEL_CAP,
                         predictions=None) -> list:
    """Write one table and one SVG per cluster, plus a combined table.

    Panels draw at most `cap` members, ranked by distance to the medoid; the
    combined table keeps every member. `predictions` optionally maps window
    ids to predicted future positions, drawn as a third role.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    predictions = predictions or {}
    written = []
    all_rows = [PANEL_HEADER]
    for cluster in clusters:
        members = [windows_by_id[wid] for wid in cluster.member_ids]
        medoid = windows_by_id[cluster.medoid_id]
        ranked = [w for w, _ in nearest_to_medoid(members, medoid)][:cap]

        rows = [PANEL_HEADER]
        svg_tracks = []
        for w in ranked:
            pred = predictions.get(w.window_id)
            rows.extend(_track_rows(w.window_id, cluster.cluster_id, w, pred))
            svg_tracks.append((w.observed, "observed"))
            svg_tracks.append((np.concatenate([w.observed[-1:], w.future]), "future_true"))
            if pred is not None:
                svg_tracks.append((np.concatenate([w.observed[-1:], pred]), "future_pred"))
        for w in members:
            all_rows.extend(_track_rows(w.window_id, cluster.cluster_id, w,
                                        predictions.get(w.window_id)))

        table = out_dir / f"cluster{cluster.cluster_id}_tracks.tsv"
        table.write_text("\n".join(rows) + "\n")
        svg = out_dir / f"cluster{cluster.cluster_id}_tracks.svg"
        svg.write_text(tracks_svg(svg_tracks))
        written.extend([table, svg])

    combined = out_dir / "all_tracks.tsv"
    combined.write_text("\n".join(all_rows) + "\n")
    written.append(combined)
    return written


def emit_sweep_figure(entries, raw: RawWindow, out_dir, cluster_id: int = 0) -> list:
    """Write the endpoint-sweep panel: one observed track, one true future,
    one predicted future per endpoint."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [PANEL_HEADER]
    rows.extend(_track_rows(raw.window_id, cluster_id, raw))
    svg_tracks = [(raw.observed, "observed"),
                  (np.concatenate([raw.observed[-1:], raw.future]), "future_true")]
    for i, entry in enumerate(entries):
        track_id = f"{raw.window_id}:end{i}"
        for j, p in enumerate(entry.result.positions):
            rows.append(f"{track_id}\t{len(raw.observed) + j}\t{p[0]:.6f}\t{p[1]:.6f}"
                        f"\tfuture_pred\t{cluster_id}")
        svg_tracks.append((np.concatenate([raw.observed[-1:], entry.result.positions]),
                           "future_pred"))
    table = out_dir / f"cluster{cluster_id}_sweep.tsv"
    table.write_text("\n".join(rows) + "\n")
    svg = out_dir / f"cluster{cluster_id}_sweep.svg"
    svg.write_text(tracks_svg(svg_tracks))
    return [table, svg]
