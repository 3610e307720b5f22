import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splatlabel.evaluate import (
    OrientedBox,
    Prediction,
    bin_by_occlusion,
    bootstrap_interval,
    evaluate_predictions,
    f1_scores,
    match_detections,
    neutral_f1,
    obb_iou,
    orientation_error,
    pitch_yaw_error,
    position_error,
    prediction_from_dict,
    prediction_to_dict,
    zero_orientation_baseline,
)
from splatlabel.geometry import quat_to_matrix, normalize


def aab(center, extent=1.0, q=(1, 0, 0, 0)):
    extent = np.broadcast_to(np.atleast_1d(extent) * np.ones(3), (3,))
    return OrientedBox(center=center, extents=extent, rotation=q)


def pred(box, confidence, camera_id="c0", axis=(1, 0, 0)):
    return Prediction(camera_id=camera_id, confidence=confidence, box=box, axis=axis)


def random_box(rng, center_span=1.0):
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    return OrientedBox(
        center=rng.uniform(-center_span, center_span, 3),
        extents=rng.uniform(0.3, 1.5, 3),
        rotation=q,
    )


def monte_carlo_iou(a, b, n=200_000, seed=0):
    rng = np.random.default_rng(seed)
    ra = quat_to_matrix(a.rotation)
    rb = quat_to_matrix(b.rotation)
    local = rng.uniform(-0.5, 0.5, (n, 3)) * a.extents
    pts = a.center + local @ ra.T
    in_b = np.all(np.abs((pts - b.center) @ rb) <= b.extents / 2, axis=1)
    inter = in_b.mean() * a.volume
    return inter / (a.volume + b.volume - inter)


class TestObbIou:
    def test_identical(self):
        box = aab((0.3, -0.1, 2.0), (0.4, 0.5, 0.6))
        assert obb_iou(box, box) == pytest.approx(1.0, abs=1e-12)

    def test_axis_aligned_offset(self):
        a = aab((0, 0, 0))
        b = aab((0.5, 0, 0))
        assert obb_iou(a, b) == pytest.approx(1 / 3, abs=1e-12)

    def test_disjoint(self):
        assert obb_iou(aab((0, 0, 0)), aab((5, 0, 0))) == 0.0

    def test_contained(self):
        outer = aab((0, 0, 0), 2.0)
        inner = aab((0.1, 0, 0), 1.0)
        assert obb_iou(outer, inner) == pytest.approx(1.0 / 8.0, abs=1e-12)

    def test_degenerate_rejected(self):
        bad = OrientedBox(center=(0, 0, 0), extents=(1e-7, 1e-7, 1e-7), rotation=(1, 0, 0, 0))
        with pytest.raises(ValueError, match="degenerate"):
            obb_iou(bad, aab((0, 0, 0)))

    def test_random_pairs_match_monte_carlo(self):
        rng = np.random.default_rng(7)
        for i in range(20):
            a = random_box(rng)
            b = random_box(rng, center_span=0.8)
            got = obb_iou(a, b)
            mc = monte_carlo_iou(a, b, seed=i)
            assert abs(got - mc) < 0.01

    @given(st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_symmetry_and_identity(self, seed):
        rng = np.random.default_rng(seed)
        a = random_box(rng)
        b = random_box(rng)
        ab = obb_iou(a, b)
        assert 0.0 <= ab <= 1.0
        assert abs(ab - obb_iou(b, a)) < 1e-9
        assert obb_iou(a, a) == pytest.approx(1.0, abs=1e-9)


class TestMatching:
    def test_exact_match(self):
        gt = aab((0, 0, 0))
        m = match_detections([pred(gt, 0.9)], [gt])
        assert (m.tp, m.fp, m.fn) == (1, 0, 0)
        assert m.pairs[0][2] == pytest.approx(1.0)

    def test_two_predictions_one_gt(self):
        gt = aab((0, 0, 0))
        strong = pred(aab((0.05, 0, 0)), 0.9)
        weak = pred(aab((0.02, 0, 0)), 0.4)
        m = match_detections([weak, strong], [gt])
        assert (m.tp, m.fp, m.fn) == (1, 1, 0)
        assert m.pairs[0][0] is strong  # higher confidence wins despite lower iou
        assert m.false_positives == [weak]

    def test_unmatched_gt_is_fn(self):
        m = match_detections([], [aab((0, 0, 0))])
        assert (m.tp, m.fp, m.fn) == (0, 0, 1)

    def test_greedy_differs_from_optimal_assignment(self):
        # [oracle] exhaustive assignment enumeration: optimal pairs all three,
        # greedy-by-confidence sacrifices one. The matcher must be greedy.
        g1 = aab((0, 0, 0))
        g2 = aab((0.25, 0.0526, 0))
        g3 = aab((5, 0, 0))
        gts = [g1, g2, g3]
        p1 = pred(aab((0.25, 0, 0)), 0.9)
        p2 = pred(aab((0.25, 0.0526 + 0.111, 0)), 0.8)
        p3 = pred(aab((5.125, 0, 0)), 0.7)
        preds = [p1, p2, p3]

        iou = np.array([[obb_iou(p.box, g) for g in gts] for p in preds])
        best = 0
        for perm in itertools.permutations(range(3)):
            best = max(best, sum(iou[i, j] >= 0.5 for i, j in enumerate(perm)))
        assert best == 3  # optimal assignment matches everything

        m = match_detections(preds, gts, iou_threshold=0.5)
        assert m.tp == 2  # documented greedy behavior
        matched = {id(p) for p, _, _ in m.pairs}
        assert id(p1) in matched and id(p3) in matched
        assert m.false_positives == [p2]
        assert m.false_negatives == [g1]

    def test_order_invariance_with_distinct_confidences(self):
        rng = np.random.default_rng(0)
        gts = [random_box(rng) for _ in range(4)]
        preds = [pred(OrientedBox(g.center + rng.normal(0, 0.02, 3), g.extents, g.rotation),
                      c) for g, c in zip(gts, [0.9, 0.7, 0.5, 0.3])]
        a = match_detections(preds, gts)
        b = match_detections(list(reversed(preds)), gts)
        assert {id(p) for p, _, _ in a.pairs} == {id(p) for p, _, _ in b.pairs}


class TestScores:
    def test_f1_example(self):
        m = match_detections(
            [pred(aab((0, 0, 0)), 0.9), pred(aab((9, 9, 9)), 0.8)], [aab((0, 0, 0))]
        )
        p, r, f1 = f1_scores(m)
        assert (p, r) == (0.5, 1.0)
        assert f1 == pytest.approx(2 / 3)

    def test_no_predictions_convention(self):
        m = match_detections([], [aab((0, 0, 0))])
        p, r, f1 = f1_scores(m)
        assert (p, r, f1) == (1.0, 0.0, 0.0)

    def test_perfect(self):
        gt = aab((0, 0, 0))
        p, r, f1 = f1_scores(match_detections([pred(gt, 1.0)], [gt]))
        assert (p, r, f1) == (1.0, 1.0, 1.0)

    def test_neutral_equals_f1_when_no_filtering(self):
        rng = np.random.default_rng(1)
        gts = [random_box(rng) for _ in range(3)]
        preds = [pred(g, 0.5 + 0.1 * i) for i, g in enumerate(gts)]
        _, _, f1 = f1_scores(match_detections(preds, gts))
        assert neutral_f1(preds, gts, gts) == pytest.approx(f1)

    def test_neutral_f1_hand_computed(self):
        # one pred hits a filtered gt, the other only an occlusion-filtered-out
        # gt: plain F1 = 2/3 but neutral F1 = 1.0
        visible = aab((0, 0, 0))
        hidden = aab((4, 0, 0))
        preds = [pred(visible, 0.9), pred(hidden, 0.8)]
        assert f1_scores(match_detections(preds, [visible]))[2] == pytest.approx(2 / 3)
        assert neutral_f1(preds, [visible], [visible, hidden]) == pytest.approx(1.0)

    def test_pred_matching_nothing_hurts_both(self):
        visible = aab((0, 0, 0))
        hidden = aab((4, 0, 0))
        preds = [pred(visible, 0.9), pred(aab((20, 0, 0)), 0.8)]
        f1 = f1_scores(match_detections(preds, [visible]))[2]
        nf1 = neutral_f1(preds, [visible], [visible, hidden])
        assert f1 == pytest.approx(nf1) == pytest.approx(2 / 3)

    def test_filtered_must_be_subset(self):
        with pytest.raises(ValueError, match="subset"):
            neutral_f1([], [aab((0, 0, 0))], [aab((9, 9, 9))])

    def test_neutral_at_least_f1_randomized(self):
        rng = np.random.default_rng(99)
        for _ in range(200):
            n_full = rng.integers(1, 6)
            full = [random_box(rng, 2.0) for _ in range(n_full)]
            filtered = [g for g in full if rng.random() < 0.6]
            preds = []
            for g in full:
                if rng.random() < 0.7:
                    jitter = OrientedBox(g.center + rng.normal(0, 0.05, 3), g.extents, g.rotation)
                    preds.append(pred(jitter, float(rng.random())))
            for _ in range(rng.integers(0, 3)):
                preds.append(pred(random_box(rng, 4.0), float(rng.random())))
            f1 = f1_scores(match_detections(preds, filtered))[2]
            nf1 = neutral_f1(preds, filtered, full)
            assert nf1 >= f1 - 1e-12


class TestPoseErrors:
    def test_position_error_exact(self):
        assert position_error((0, 0, 0), (0, 0, 0)) == 0.0
        assert position_error((0, 0, 0), (1, 2, 2)) == pytest.approx(3.0)

    def test_position_error_chi_mean(self):
        # [oracle] mean norm of N(0, sigma^2 I3) is sigma * 2 * sqrt(2/pi)
        rng = np.random.default_rng(5)
        sigma = 0.007
        gt = rng.uniform(-1, 1, (100_000, 3))
        noisy = gt + rng.normal(0, sigma, gt.shape)
        errors = np.linalg.norm(gt - noisy, axis=1)
        expected = sigma * 2 * np.sqrt(2 / np.pi)
        assert errors.mean() == pytest.approx(expected, rel=0.02)
        assert position_error(gt[0], noisy[0]) == pytest.approx(errors[0])

    def test_orientation_error_basics(self):
        assert orientation_error((1, 0, 0), (1, 0, 0)) == 0.0
        assert orientation_error((1, 0, 0), (0, 1, 0)) == pytest.approx(90.0)
        assert orientation_error((1, 0, 0), (-1, 0, 0)) == pytest.approx(180.0)

    def test_dot_product_clamped(self):
        v = np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)
        value = orientation_error(v, v * (1 + 1e-9))
        assert np.isfinite(value)
        assert value == 0.0

    def test_rotation_invariance(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            v, w = normalize(rng.standard_normal(3)), normalize(rng.standard_normal(3))
            q = normalize(rng.standard_normal(4))
            r = quat_to_matrix(q)
            base = orientation_error(v, w)
            assert 0.0 <= base <= 180.0
            assert orientation_error(r @ v, r @ w) == pytest.approx(base, abs=1e-9)

    def test_pitch_yaw(self):
        pitch, yaw = pitch_yaw_error((1, 0, 0), (1, 0, 0))
        assert (pitch, yaw) == (0.0, 0.0)
        pitch, yaw = pitch_yaw_error((1, 0, 0), (0, 0, 1))
        assert pitch == pytest.approx(90.0)
        pitch, yaw = pitch_yaw_error((1, 0, 0), (0, 1, 0))
        assert yaw == pytest.approx(90.0)
        # azimuth wraps: -170 deg vs +170 deg differ by 20, not 340
        a = (np.cos(np.radians(170)), np.sin(np.radians(170)), 0)
        b = (np.cos(np.radians(-170)), np.sin(np.radians(-170)), 0)
        assert pitch_yaw_error(a, b)[1] == pytest.approx(20.0)


class TestOcclusionBins:
    def test_bin_edges(self):
        bins = bin_by_occlusion([95.0, 25.0, 30.0, 100.0, 0.0, 89.999])
        assert bins[(90.0, 100.0)] == [95.0, 100.0]
        assert bins[(30.0, 40.0)] == [30.0]
        assert bins[(0.0, 30.0)] == [25.0, 0.0]
        assert bins[(80.0, 90.0)] == [89.999]

    def test_population_sums(self):
        rng = np.random.default_rng(0)
        values = rng.uniform(0, 100, 500)
        bins = bin_by_occlusion(values)
        assert sum(len(v) for v in bins.values()) == 500
        assert len(bins) == 8

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            bin_by_occlusion([101.0])
        with pytest.raises(ValueError):
            bin_by_occlusion([-0.5])


class TestBootstrap:
    def test_constant_samples(self):
        lo, hi = bootstrap_interval(np.full(50, 3.25), seed=1)
        assert (lo, hi) == (3.25, 3.25)

    def test_normal_mean_width_matches_clt(self):
        # [oracle] CLT: 95% interval half-width ~ 1.96 / sqrt(n)
        rng = np.random.default_rng(3)
        samples = rng.standard_normal(10_000)
        lo, hi = bootstrap_interval(samples, n_resamples=4000, seed=3)
        half_width = (hi - lo) / 2
        assert half_width == pytest.approx(1.96 / 100.0, rel=0.10)
        assert lo < samples.mean() < hi

    def test_seed_reproducible(self):
        rng = np.random.default_rng(4)
        samples = rng.uniform(0, 1, 200)
        assert bootstrap_interval(samples, seed=9) == bootstrap_interval(samples, seed=9)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            bootstrap_interval([])


class TestZeroOrientationBaseline:
    def test_all_equal_reference(self):
        axes = np.tile([1.0, 0, 0], (10, 1))
        assert zero_orientation_baseline(axes) == 0.0

    def test_uniform_sphere_is_90(self):
        rng = np.random.default_rng(6)
        axes = rng.standard_normal((100_000, 3))
        axes /= np.linalg.norm(axes, axis=1, keepdims=True)
        assert zero_orientation_baseline(axes) == pytest.approx(90.0, abs=1.0)

    def test_beats_random_on_clustered_gt(self):
        # downward-hanging fruit: a fixed reference beats uniform random guessing
        rng = np.random.default_rng(8)
        for spread in (0.2, 0.5, 1.0):
            axes = np.array([0.0, 0.0, -1.0]) + spread * rng.standard_normal((2000, 3))
            axes /= np.linalg.norm(axes, axis=1, keepdims=True)
            baseline = zero_orientation_baseline(axes, reference_axis=(0, 0, -1))
            random_preds = rng.standard_normal((2000, 3))
            random_preds /= np.linalg.norm(random_preds, axis=1, keepdims=True)
            random_err = np.mean([
                orientation_error(a, p) for a, p in zip(axes, random_preds)
            ])
            assert baseline < random_err


class TestReport:
    def test_prediction_jsonl_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        p = pred(random_box(rng), 0.75, camera_id="img3", axis=normalize((1, 2, 3)))
        again = prediction_from_dict(prediction_to_dict(p))
        assert again.camera_id == p.camera_id
        assert again.confidence == p.confidence
        assert again.box.center == pytest.approx(p.box.center)
        assert again.axis == pytest.approx(p.axis)

    def test_perfect_predictor_report(self):
        from splatlabel.annotate import FruitAnnotation, build_fruit_pose
        from splatlabel import synthetic as syn
        from splatlabel.annotate import ImageLabel

        rng = np.random.default_rng(11)
        labels, preds = [], []
        for i in range(6):
            center = rng.uniform(-0.5, 0.5, 3) + [0, 0, 2.0]
            cloud = syn.sphere_cloud(center, 0.04, 300, seed=i)
            ann = FruitAnnotation(f"f{i}", "T01", cloud, calyx=center + [0.04, 0, 0])
            pose = build_fruit_pose(ann)
            label = ImageLabel(
                fruit_id=f"f{i}", tree_id="T01", camera_id=f"img{i % 2}",
                bbox2d=(0, 0, 10, 10), obb_camera=pose,
                occlusion=float(rng.uniform(0, 100)), s_total=100, s_occluded=0,
            )
            labels.append(label)
            preds.append(Prediction(
                camera_id=label.camera_id, confidence=1.0,
                box=OrientedBox(pose.center, pose.extents, pose.box_rotation),
                axis=pose.axis,
            ))
        report = evaluate_predictions(labels, preds, occlusion_limit=100.0, n_resamples=50)
        assert report.f1 == 1.0
        assert report.neutral_f1 == 1.0
        assert report.position_errors.max() < 1e-9
        assert report.orientation_errors.max() < 1e-9
        assert sum(b.gt_count for b in report.bins) == 6
        d = report.to_dict()
        assert d["counts"]["tp"] == 6
        assert "f1" in d["bootstrap_95"]
