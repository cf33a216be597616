import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from trajlab.codebook import fit_codebook
from trajlab.data import RawWindow, canonicalize, fit_normalization, to_representation
from trajlab.errors import ConfigError, FitError, ModelError
from trajlab.evaluation import Forecaster
from trajlab.models import ModelConfig, build_model
from trajlab.multimodal import (
    PANEL_HEADER,
    canonicalize_windows,
    cluster_motion_types,
    emit_cluster_figures,
    emit_sweep_figure,
    endpoint_sweep,
    heading_spread,
    motion_features,
    nearest_to_medoid,
    observed_distance,
    tracks_svg,
)

from conftest import arcs_and_lines

T_OBS, T_PRED = 4, 3


def make_window(points, scene="syn", ped=0, start=0):
    points = np.asarray(points, dtype=np.float64)
    return RawWindow(scene_id=scene, pedestrian_id=ped, start_frame=start,
                     observed=points[:T_OBS].copy(), future=points[T_OBS:].copy())


def straight_window(speed, heading=0.0, origin=(0.0, 0.0), ped=0, scene="syn", start=0):
    v = speed * np.array([math.cos(heading), math.sin(heading)])
    points = np.asarray(origin) + np.arange(T_OBS + T_PRED)[:, None] * v
    return make_window(points, scene=scene, ped=ped, start=start)


def still_window(origin, ped, scene="syn"):
    points = np.tile(np.asarray(origin, dtype=np.float64), (T_OBS + T_PRED, 1))
    return make_window(points, scene=scene, ped=ped)


class TestHeadingSpread:
    def test_straight_future_has_no_spread(self):
        assert heading_spread(straight_window(0.5)) == pytest.approx(0.0, abs=1e-12)

    def test_motionless_future(self):
        assert heading_spread(still_window((2.0, 3.0), ped=0)) == 0.0

    def test_back_and_forth_is_maximal(self):
        points = [(0, 0), (1, 0), (2, 0), (3, 0),   # observed
                  (4, 0), (3, 0), (4, 0)]           # future reverses each step
        w = make_window(points)
        # headings alternate +x / -x; with 3 steps the resultant is 1 of 3
        assert heading_spread(w) == pytest.approx(1.0 - 1.0 / 3.0, abs=1e-12)

    def test_opposed_pair_cancels(self):
        points = [(0, 0), (1, 0), (2, 0), (3, 0),
                  (4, 0), (3, 0), (3, 0)]
        # steps: +x, -x, none; the zero step is skipped
        assert heading_spread(make_window(points)) == pytest.approx(1.0, abs=1e-12)

    def test_boundary_step_counts(self):
        # the only movement is from the last observed point into the future
        points = [(0, 0), (0, 0), (0, 0), (0, 0),
                  (1, 0), (1, 0), (1, 0)]
        assert heading_spread(make_window(points)) == pytest.approx(0.0, abs=1e-12)


class TestMotionFeatures:
    def test_travel_is_straight_line_distance(self):
        raw = straight_window(0.7, heading=1.1, origin=(4.0, -2.0))
        canon = canonicalize(raw)[0]
        feats = motion_features(canon)
        want = np.linalg.norm(raw.observed[-1] - raw.observed[0])
        assert feats[0] == pytest.approx(want, abs=1e-9)

    def test_pose_invariance(self):
        base = arcs_and_lines(1, seed=60, t_obs=T_OBS, t_pred=T_PRED)[0]
        theta = 2.2
        rot = np.array([[math.cos(theta), -math.sin(theta)],
                        [math.sin(theta), math.cos(theta)]])
        moved = RawWindow(scene_id=base.scene_id, pedestrian_id=base.pedestrian_id,
                          start_frame=base.start_frame,
                          observed=base.observed @ rot.T + np.array([10.0, -4.0]),
                          future=base.future @ rot.T + np.array([10.0, -4.0]))
        a = motion_features(canonicalize(base)[0])
        b = motion_features(canonicalize(moved)[0])
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_canonicalize_windows_preserves_order(self):
        raws = arcs_and_lines(4, seed=61, t_obs=T_OBS, t_pred=T_PRED)
        canon = canonicalize_windows(raws)
        assert [c.window_id for c in canon] == [r.window_id for r in raws]
        for c in canon:
            np.testing.assert_allclose(c.observed[0], [0.0, 0.0], atol=1e-12)


class TestObservedDistance:
    def test_constant_offset(self):
        a = straight_window(0.5)
        b = RawWindow(scene_id="syn", pedestrian_id=1, start_frame=0,
                      observed=a.observed + np.array([3.0, 4.0]), future=a.future.copy())
        assert observed_distance(a, b) == pytest.approx(5.0 * T_OBS, abs=1e-12)

    def test_zero_for_self(self):
        a = straight_window(0.5)
        assert observed_distance(a, a) == 0.0

    def test_shape_mismatch(self):
        a = straight_window(0.5)
        b = RawWindow(scene_id="s", pedestrian_id=2, start_frame=0,
                      observed=a.observed[:-1], future=a.future)
        with pytest.raises(ConfigError):
            observed_distance(a, b)


def two_population_corpus():
    still = [still_window((i * 0.01, 0.0), ped=i) for i in range(5)]
    movers = [straight_window(0.8, heading=0.3 * i, origin=(i, i), ped=100 + i)
              for i in range(5)]
    return still, movers


class TestClustering:
    def test_two_populations_separate(self):
        still, movers = two_population_corpus()
        canon = canonicalize_windows(still + movers)
        clusters = cluster_motion_types(canon, n_clusters=2, seed=0)
        assert [c.cluster_id for c in clusters] == [1, 2]
        # ascending mean travel puts the motionless group first
        assert clusters[0].mean_speed < clusters[1].mean_speed
        assert set(clusters[0].member_ids) == {w.window_id for w in still}
        assert set(clusters[1].member_ids) == {w.window_id for w in movers}

    def test_features_align_with_members(self):
        still, movers = two_population_corpus()
        canon = canonicalize_windows(still + movers)
        by_id = {w.window_id: w for w in canon}
        for cluster in cluster_motion_types(canon, n_clusters=2, seed=0):
            assert cluster.features.shape == (len(cluster.member_ids), 2)
            for wid, row in zip(cluster.member_ids, cluster.features):
                np.testing.assert_allclose(row, motion_features(by_id[wid]), atol=1e-12)

    def test_member_ids_sorted(self):
        _, movers = two_population_corpus()
        canon = canonicalize_windows(movers)
        clusters = cluster_motion_types(canon, n_clusters=1, seed=0)
        assert clusters[0].member_ids == sorted(clusters[0].member_ids)

    def test_medoid_brute_force(self):
        raws = arcs_and_lines(7, seed=62, t_obs=T_OBS, t_pred=T_PRED)
        canon = canonicalize_windows(raws)
        cluster = cluster_motion_types(canon, n_clusters=1, seed=0)[0]
        members = sorted(canon, key=lambda w: w.window_id)
        sums = [sum(observed_distance(a, b) for b in members) for a in members]
        assert cluster.medoid_id == members[int(np.argmin(sums))].window_id

    def test_medoid_is_a_member(self):
        still, movers = two_population_corpus()
        canon = canonicalize_windows(still + movers)
        for cluster in cluster_motion_types(canon, n_clusters=2, seed=0):
            assert cluster.medoid_id in cluster.member_ids

    def test_too_few_windows(self):
        canon = canonicalize_windows(arcs_and_lines(3, seed=63, t_obs=T_OBS, t_pred=T_PRED))
        with pytest.raises(FitError):
            cluster_motion_types(canon, n_clusters=4)

    def test_deterministic(self):
        raws = canonicalize_windows(arcs_and_lines(12, seed=64, t_obs=T_OBS, t_pred=T_PRED))
        a = cluster_motion_types(raws, n_clusters=3, seed=5)
        b = cluster_motion_types(raws, n_clusters=3, seed=5)
        assert [c.member_ids for c in a] == [c.member_ids for c in b]
        assert [c.medoid_id for c in a] == [c.medoid_id for c in b]


class TestNearestToMedoid:
    def test_medoid_ranks_first(self):
        raws = canonicalize_windows(arcs_and_lines(6, seed=65, t_obs=T_OBS, t_pred=T_PRED))
        medoid = raws[2]
        ranked = nearest_to_medoid(raws, medoid)
        assert ranked[0][0].window_id == medoid.window_id
        assert ranked[0][1] == 0.0

    def test_matches_sort_oracle(self):
        raws = canonicalize_windows(arcs_and_lines(8, seed=66, t_obs=T_OBS, t_pred=T_PRED))
        medoid = raws[0]
        ranked = nearest_to_medoid(raws, medoid)
        dists = [r[1] for r in ranked]
        assert dists == sorted(dists)
        for w, d in ranked:
            assert d == pytest.approx(observed_distance(w, medoid), abs=1e-12)

    def test_ties_fall_back_to_window_id(self):
        a = straight_window(0.5, ped=2)
        b = straight_window(0.5, ped=1)
        probe = straight_window(0.6, ped=9)
        ranked = nearest_to_medoid([a, b], probe)
        assert [r[0].pedestrian_id for r in ranked] == [1, 2]


@pytest.fixture(scope="module")
def oracle_forecaster():
    raws = arcs_and_lines(8, seed=67, t_obs=T_OBS, t_pred=T_PRED)
    cfg = ModelConfig(architecture="bert_os", representation="relative_positions",
                      oracle_endpoint=True, d_model=8, layers=1, heads=2,
                      dropout_rate=0.0, t_obs=T_OBS, t_pred=T_PRED)
    stats = fit_normalization([to_representation(w, cfg.representation) for w in raws])
    fc = Forecaster(config=cfg, model=build_model(cfg, seed=3), norm=stats)
    return fc, raws


class TestEndpointSweep:
    def test_entry_per_endpoint(self, oracle_forecaster):
        fc, raws = oracle_forecaster
        endpoints = [np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([-1.0, 0.0])]
        entries = endpoint_sweep(fc, raws[0], endpoints)
        assert len(entries) == 3
        for e, ep in zip(entries, endpoints):
            np.testing.assert_array_equal(e.endpoint, ep)
            np.testing.assert_array_equal(e.final_position, e.result.positions[-1])
            assert e.result.positions.shape == (T_PRED, 2)

    def test_matches_single_decode(self, oracle_forecaster):
        fc, raws = oracle_forecaster
        target = np.array([2.0, -1.0])
        entry = endpoint_sweep(fc, raws[1], [target])[0]
        direct = fc.forecast(raws[1], endpoint=target)
        np.testing.assert_allclose(entry.result.positions, direct.positions, atol=1e-9)

    def test_distinct_endpoints_distinct_tracks(self, oracle_forecaster):
        fc, raws = oracle_forecaster
        entries = endpoint_sweep(fc, raws[0], [np.zeros(2), np.array([4.0, 4.0])])
        assert np.abs(entries[0].result.positions - entries[1].result.positions).max() > 1e-9

    def test_requires_oracle_model(self, oracle_forecaster):
        _, raws = oracle_forecaster
        cfg = ModelConfig(d_model=8, layers=1, heads=2, dropout_rate=0.0,
                          t_obs=T_OBS, t_pred=T_PRED)
        stats = fit_normalization([to_representation(w, cfg.representation) for w in raws])
        plain = Forecaster(config=cfg, model=build_model(cfg, seed=0), norm=stats)
        with pytest.raises(ModelError):
            endpoint_sweep(plain, raws[0], [np.zeros(2)])

    def test_empty_sweep(self, oracle_forecaster):
        fc, raws = oracle_forecaster
        assert endpoint_sweep(fc, raws[0], []) == []


class TestFigureOutputs:
    def build_clusters(self):
        still, movers = two_population_corpus()
        canon = canonicalize_windows(still + movers)
        clusters = cluster_motion_types(canon, n_clusters=2, seed=0)
        return clusters, {w.window_id: w for w in canon}

    def test_files_and_row_counts(self, tmp_path):
        clusters, by_id = self.build_clusters()
        written = emit_cluster_figures(clusters, by_id, tmp_path)
        names = {p.name for p in written}
        assert names == {"cluster1_tracks.tsv", "cluster1_tracks.svg",
                         "cluster2_tracks.tsv", "cluster2_tracks.svg", "all_tracks.tsv"}

        combined = (tmp_path / "all_tracks.tsv").read_text().rstrip("\n").split("\n")
        assert combined[0] == PANEL_HEADER
        total_members = sum(len(c.member_ids) for c in clusters)
        assert len(combined) == 1 + total_members * (T_OBS + T_PRED)

    def test_panel_cap_limits_panels_not_combined(self, tmp_path):
        clusters, by_id = self.build_clusters()
        emit_cluster_figures(clusters, by_id, tmp_path, cap=1)
        panel = (tmp_path / "cluster1_tracks.tsv").read_text().rstrip("\n").split("\n")
        assert len(panel) == 1 + (T_OBS + T_PRED)
        combined = (tmp_path / "all_tracks.tsv").read_text().rstrip("\n").split("\n")
        total_members = sum(len(c.member_ids) for c in clusters)
        assert len(combined) == 1 + total_members * (T_OBS + T_PRED)

    def test_predictions_add_rows(self, tmp_path):
        clusters, by_id = self.build_clusters()
        wid = clusters[1].member_ids[0]
        preds = {wid: np.zeros((T_PRED, 2))}
        emit_cluster_figures(clusters, by_id, tmp_path, predictions=preds)
        combined = (tmp_path / "all_tracks.tsv").read_text().rstrip("\n").split("\n")
        total_members = sum(len(c.member_ids) for c in clusters)
        assert len(combined) == 1 + total_members * (T_OBS + T_PRED) + T_PRED
        assert sum("future_pred" in line for line in combined) == T_PRED

    def test_empty_cluster_list(self, tmp_path):
        emit_cluster_figures([], {}, tmp_path)
        assert (tmp_path / "all_tracks.tsv").read_text() == PANEL_HEADER + "\n"

    def test_svg_parses(self, tmp_path):
        clusters, by_id = self.build_clusters()
        emit_cluster_figures(clusters, by_id, tmp_path)
        root = ET.fromstring((tmp_path / "cluster2_tracks.svg").read_text())
        assert root.tag.endswith("svg")
        polylines = [e for e in root.iter() if e.tag.endswith("polyline")]
        # one observed and one true-future line per drawn member
        assert len(polylines) == 2 * len(clusters[1].member_ids)

    def test_sweep_figure(self, tmp_path, oracle_forecaster):
        fc, raws = oracle_forecaster
        raw = raws[0]
        entries = endpoint_sweep(fc, raw, [np.zeros(2), np.ones(2)])
        written = emit_sweep_figure(entries, raw, tmp_path, cluster_id=3)
        assert {p.name for p in written} == {"cluster3_sweep.tsv", "cluster3_sweep.svg"}
        rows = (tmp_path / "cluster3_sweep.tsv").read_text().rstrip("\n").split("\n")
        assert len(rows) == 1 + (T_OBS + T_PRED) + 2 * T_PRED
        root = ET.fromstring((tmp_path / "cluster3_sweep.svg").read_text())
        polylines = [e for e in root.iter() if e.tag.endswith("polyline")]
        assert len(polylines) == 2 + 2

    def test_empty_svg_still_valid(self):
        root = ET.fromstring(tracks_svg([]))
        assert root.tag.endswith("svg")
