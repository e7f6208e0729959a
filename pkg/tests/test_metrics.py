"""Metric unit tests: worked examples, identities, and the exhaustive
insertion/deletion oracle on tiny images."""

import math

import numpy as np
import pytest

import oracles
from camkit import (
    ConfigError,
    EvalConfig,
    RangeError,
    SaliencySource,
    ShapeError,
    StubScorer,
    Zone,
    binarize,
    dice,
    drop_fraction,
    evaluate_collection,
    evaluate_item,
    image_digest,
    increase_indicator,
    insertion_deletion,
    iou,
    load_bundle,
    load_stub_scorer,
    pointing_game,
    report_to_csv,
    report_to_dict,
    scan_collection,
    score,
    soft_mask,
)
from camkit.cam import PostprocessConfig, channel_weights, gradcam, postprocess
from camkit.datasets import Annotation, AnnotationKind, Box
from camkit.metrics import CurveMode
from conftest import make_collection


def softmax_bf(logits):
    exps = [math.exp(v) for v in logits]
    total = sum(exps)
    return [e / total for e in exps]


class TestSoftMask:
    def test_all_ones_salient_is_identity(self, rng):
        img = rng.standard_normal((3, 4, 4))
        np.testing.assert_array_equal(soft_mask(img, np.ones((4, 4)), Zone.SALIENT), img)

    def test_all_ones_context_is_zero(self, rng):
        img = rng.standard_normal((3, 4, 4))
        np.testing.assert_array_equal(
            soft_mask(img, np.ones((4, 4)), Zone.CONTEXT), np.zeros_like(img)
        )

    def test_half_weight_pixel(self):
        img = np.array([2.0, 4.0, 6.0]).reshape(3, 1, 1)
        out = soft_mask(img, np.array([[0.5]]), Zone.SALIENT)
        np.testing.assert_allclose(out.ravel(), [1.0, 2.0, 3.0])

    def test_dim_mismatch(self, rng):
        with pytest.raises(ShapeError):
            soft_mask(rng.standard_normal((3, 4, 4)), np.ones((5, 5)), Zone.SALIENT)


class TestDropFraction:
    def test_worked_example(self):
        assert drop_fraction(0.8, 0.2) == pytest.approx(0.75)

    def test_clamped_when_masked_higher(self):
        assert drop_fraction(0.3, 0.9) == 0.0

    def test_no_drop_on_tie(self):
        assert drop_fraction(0.5, 0.5) == 0.0

    def test_zero_original(self):
        assert drop_fraction(0.0, 0.4) == 0.0

    def test_out_of_range_rejected(self):
        with pytest.raises(RangeError):
            drop_fraction(1.2, 0.5)
        with pytest.raises(RangeError):
            drop_fraction(0.5, -0.1)

    def test_range_and_clamp_properties(self, rng):
        for _ in range(200):
            orig, masked = rng.uniform(0, 1, size=2)
            value = drop_fraction(orig, masked)
            assert 0.0 <= value <= 1.0
            if masked >= orig:
                assert value == 0.0


class TestIncreaseIndicator:
    def test_strict_increase(self):
        assert increase_indicator(0.3, 0.5) == 1

    def test_tie_is_not_increase(self):
        assert increase_indicator(0.5, 0.5) == 0

    def test_aggregate_is_mean(self):
        flags = [1, 0, 0, 1]
        assert np.mean(flags) == pytest.approx(0.5)


class TestPointingGame:
    BOX_ANN = Annotation(kind=AnnotationKind.BBOXES, boxes=(Box(7, 2, 2, 5, 5),))

    def _map_with_peak(self, row, col, shape=(8, 8)):
        sal = np.zeros(shape)
        sal[row, col] = 1.0
        return sal

    def test_hit_inside_box(self):
        assert pointing_game(self._map_with_peak(3, 3), self.BOX_ANN, 7).hit

    def test_miss_outside_box(self):
        result = pointing_game(self._map_with_peak(0, 0), self.BOX_ANN, 7)
        assert not result.hit
        assert not result.degenerate

    def test_aggregate_accuracy(self):
        outcomes = [True, True, False]
        assert np.mean(outcomes) == pytest.approx(2 / 3, abs=5e-4)

    def test_degenerate_zero_map_is_flagged_miss(self):
        result = pointing_game(np.zeros((8, 8)), self.BOX_ANN, 7)
        assert not result.hit
        assert result.degenerate

    def test_mask_annotation(self):
        mask = np.zeros((8, 8), dtype=np.uint8)
        mask[4:6, 4:6] = 3
        ann = Annotation(kind=AnnotationKind.SEG_MASK, mask=mask)
        assert pointing_game(self._map_with_peak(4, 5), ann, 3).hit
        assert not pointing_game(self._map_with_peak(0, 0), ann, 3).hit

    def test_positive_scaling_invariance(self, rng):
        mask = np.zeros((6, 6), dtype=np.uint8)
        mask[1:3, 1:3] = 2
        ann = Annotation(kind=AnnotationKind.SEG_MASK, mask=mask)
        for _ in range(20):
            sal = rng.uniform(0, 1, size=(6, 6))
            base = pointing_game(sal, ann, 2).hit
            for c in (0.01, 0.7, 42.0):
                assert pointing_game(sal * c, ann, 2).hit == base

    def test_box_edges_half_open(self):
        assert pointing_game(self._map_with_peak(2, 2), self.BOX_ANN, 7).hit
        assert not pointing_game(self._map_with_peak(5, 5), self.BOX_ANN, 7).hit


class TestBinarize:
    def test_threshold(self):
        np.testing.assert_array_equal(
            binarize(np.array([[0.2, 0.8]]), 0.5), [[False, True]]
        )

    def test_zero_map_empty(self):
        assert not binarize(np.zeros((3, 3)), 0.5).any()

    def test_boundary_is_inclusive(self):
        np.testing.assert_array_equal(binarize(np.array([[0.5]]), 0.5), [[True]])

    def test_tau_bounds(self):
        for tau in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(ConfigError):
                binarize(np.zeros((2, 2)), tau)


class TestDiceIou:
    def _mask(self, flat):
        return np.array(flat, dtype=bool)

    def test_identity(self):
        m = self._mask([[1, 0], [1, 1]])
        assert dice(m, m) == 1.0
        assert iou(m, m) == 1.0

    def test_disjoint(self):
        a = self._mask([[1, 0], [0, 0]])
        b = self._mask([[0, 1], [0, 0]])
        assert dice(a, b) == 0.0
        assert iou(a, b) == 0.0

    def test_worked_dice(self):
        a = self._mask([[1, 1], [1, 1]])
        b = self._mask([[1, 1], [0, 0]])
        assert dice(a, b) == pytest.approx(2 * 2 / 6)

    def test_worked_iou(self):
        a = self._mask([[1, 1], [1, 0]])
        b = self._mask([[1, 1], [0, 1]])
        assert iou(a, b) == pytest.approx(0.5)

    def test_both_empty(self):
        e = np.zeros((3, 3), dtype=bool)
        assert dice(e, e) == 1.0
        assert iou(e, e) == 1.0

    def test_empty_vs_nonempty(self):
        e = np.zeros((2, 2), dtype=bool)
        m = self._mask([[1, 0], [0, 0]])
        assert iou(e, m) == 0.0
        assert dice(e, m) == 0.0

    def test_dice_iou_relation(self, rng):
        for _ in range(100):
            a = rng.uniform(size=(6, 6)) > 0.5
            b = rng.uniform(size=(6, 6)) > 0.5
            i = iou(a, b)
            assert dice(a, b) == pytest.approx(2 * i / (1 + i), abs=1e-9)

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            dice(np.zeros((2, 2), dtype=bool), np.zeros((3, 3), dtype=bool))


def exhaustive_stub(image, rng):
    """Stub table covering every subset of zeroed pixels of a tiny image."""
    flat = image.reshape(3, -1)
    n = flat.shape[1]
    table = {}
    for bits in range(2**n):
        frame = flat.copy()
        for p in range(n):
            if bits & (1 << p):
                frame[:, p] = 0.0
        logits = rng.uniform(-2, 2, size=2)
        table[image_digest(frame.reshape(image.shape))] = [float(v) for v in logits]
    return table


def oracle_curve(image, saliency, table, mode, steps):
    """Independent curve computation: explicit ranking, masking, softmax."""
    flat = image.reshape(3, -1)
    n = flat.shape[1]
    sal = list(np.asarray(saliency).ravel())
    order = sorted(range(n), key=lambda p: (-sal[p], p))
    fractions = [i / steps for i in range(steps + 1)]
    scores = []
    for frac in fractions:
        k = int(math.floor(frac * n + 0.5))
        if mode is CurveMode.DELETION:
            frame = flat.copy()
            for p in order[:k]:
                frame[:, p] = 0.0
        else:
            frame = np.zeros_like(flat)
            for p in order[:k]:
                frame[:, p] = flat[:, p]
        logits = table[image_digest(frame.reshape(image.shape))]
        scores.append(softmax_bf(logits)[0])
    return fractions, scores, oracles.trapezoid_bf(fractions, scores)


class TestInsertionDeletion:
    def test_constant_scorer_auc(self, rng):
        stub = StubScorer({"default": [math.log(0.7), math.log(0.3)]})
        img = rng.standard_normal((3, 4, 4)).astype(np.float32)
        sal = rng.uniform(0, 1, size=(4, 4))
        expected = score(stub, img).probability(0)
        for mode in (CurveMode.INSERTION, CurveMode.DELETION):
            curve = insertion_deletion(img, sal, stub, 0, mode, steps=5)
            assert curve.auc == pytest.approx(expected, abs=1e-12)
            assert expected == pytest.approx(0.7, abs=1e-12)

    def test_deletion_endpoints_exact(self, rng):
        img = rng.standard_normal((3, 2, 2)).astype(np.float32)
        zero = np.zeros_like(img)
        table = {
            image_digest(img): [2.0, -1.0],
            image_digest(zero): [-3.0, 0.5],
            "default": [0.0, 0.0],
        }
        stub = StubScorer(table)
        sal = rng.uniform(0, 1, size=(2, 2))
        curve = insertion_deletion(img, sal, stub, 0, CurveMode.DELETION, steps=4)
        assert curve.scores[0] == score(stub, img).probability(0)
        assert curve.scores[-1] == score(stub, zero).probability(0)
        assert curve.fractions[0] == 0.0
        assert curve.fractions[-1] == 1.0

    def test_insertion_endpoints_exact(self, rng):
        img = rng.standard_normal((3, 2, 2)).astype(np.float32)
        zero = np.zeros_like(img)
        stub = StubScorer(
            {image_digest(img): [1.5, 0.0], image_digest(zero): [0.0, 1.5], "default": [0.0, 0.0]}
        )
        curve = insertion_deletion(
            img,
            np.full((2, 2), 0.5),
            stub,
            0,
            CurveMode.INSERTION,
            steps=4,
            insertion_baseline="zero",
        )
        assert curve.scores[0] == score(stub, zero).probability(0)
        assert curve.scores[-1] == score(stub, img).probability(0)

    def test_two_pixel_exhaustive_oracle(self, rng):
        img = rng.standard_normal((3, 1, 2)).astype(np.float32)
        sal = np.array([[0.9, 0.3]])
        table = exhaustive_stub(img, rng)
        stub = StubScorer(table)
        for mode in (CurveMode.INSERTION, CurveMode.DELETION):
            curve = insertion_deletion(
                img, sal, stub, 0, mode, steps=2, insertion_baseline="zero"
            )
            fractions, scores, auc = oracle_curve(img, sal, table, mode, steps=2)
            np.testing.assert_allclose(curve.fractions, fractions, atol=1e-12)
            np.testing.assert_allclose(curve.scores, scores, atol=1e-9)
            assert curve.auc == pytest.approx(auc, abs=1e-9)

    def test_four_pixel_exhaustive_oracle(self, rng):
        img = rng.standard_normal((3, 2, 2)).astype(np.float32)
        sal = np.array([[0.7, 0.1], [0.9, 0.4]])
        table = exhaustive_stub(img, rng)
        stub = StubScorer(table)
        for steps in (2, 4):
            for mode in (CurveMode.INSERTION, CurveMode.DELETION):
                curve = insertion_deletion(
                    img, sal, stub, 0, mode, steps=steps, insertion_baseline="zero"
                )
                fractions, scores, auc = oracle_curve(img, sal, table, mode, steps)
                np.testing.assert_allclose(curve.scores, scores, atol=1e-9)
                assert curve.auc == pytest.approx(auc, abs=1e-9)

    def test_ties_break_row_major(self, rng):
        img = rng.standard_normal((3, 2, 2)).astype(np.float32)
        # Equal saliency everywhere: the first deleted pixel must be (0, 0).
        sal = np.full((2, 2), 0.5)
        expected = img.copy()
        expected[:, 0, 0] = 0.0
        marker = [9.0, 0.0]
        stub = StubScorer({image_digest(expected): marker, "default": [0.0, 0.0]})
        curve = insertion_deletion(img, sal, stub, 0, CurveMode.DELETION, steps=4)
        assert curve.scores[1] == pytest.approx(softmax_bf(marker)[0], abs=1e-12)

    def test_steps_too_small(self, rng):
        stub = StubScorer({"default": [0.0, 0.0]})
        with pytest.raises(ConfigError):
            insertion_deletion(
                np.zeros((3, 2, 2)), np.zeros((2, 2)), stub, 0, CurveMode.DELETION, steps=1
            )


class CountingScorer(StubScorer):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.calls = 0

    def logits(self, image):
        self.calls += 1
        return super().logits(image)


class TestEvaluateCollection:
    def _setup(self, tmp_path, n_items=3, **kwargs):
        make_collection(tmp_path, n_items=n_items, **kwargs)
        scan = scan_collection(tmp_path)
        scorer = load_stub_scorer(tmp_path / "stub.json")
        return scan.items, scorer

    def test_empty_items(self, tmp_path):
        _, scorer = self._setup(tmp_path, n_items=1)
        report = evaluate_collection([], SaliencySource.GRADCAM, scorer, EvalConfig())
        assert report.records == []
        assert report.failures == []
        assert report.aggregates == {}

    def test_single_item_matches_individual_ops(self, tmp_path):
        items, scorer = self._setup(tmp_path, n_items=1)
        cfg = EvalConfig(curves=False, steps=4)
        report = evaluate_collection(items, SaliencySource.GRADCAM, scorer, cfg)
        assert len(report.records) == 1
        record = report.records[0]

        bundle = load_bundle(items[0].bundle_path)
        raw = gradcam(bundle.features, channel_weights(bundle.gradients))
        sal = postprocess(
            raw, PostprocessConfig(target_size=bundle.image.shape[1:])
        ).values
        orig = score(scorer, bundle.image).probability(bundle.class_index)
        sal_prob = score(scorer, soft_mask(bundle.image, sal, Zone.SALIENT)).probability(
            bundle.class_index
        )
        ctx_prob = score(scorer, soft_mask(bundle.image, sal, Zone.CONTEXT)).probability(
            bundle.class_index
        )
        assert record.drop_salience == pytest.approx(drop_fraction(orig, sal_prob), abs=1e-12)
        assert record.increase_salience == float(increase_indicator(orig, sal_prob))
        assert record.drop_context == pytest.approx(drop_fraction(orig, ctx_prob), abs=1e-12)
        assert record.increase_context == float(increase_indicator(orig, ctx_prob))
        pg = pointing_game(sal, items[0].annotation, items[0].target_class)
        assert record.pointing_hit == float(pg.hit)
        gt = items[0].annotation.mask == items[0].target_class
        assert record.dice == pytest.approx(dice(binarize(sal, 0.5), gt), abs=1e-12)
        assert record.iou == pytest.approx(iou(binarize(sal, 0.5), gt), abs=1e-12)

    def test_two_item_aggregate_is_mean(self, tmp_path):
        items, scorer = self._setup(tmp_path, n_items=2)
        cfg = EvalConfig(curves=False)
        report = evaluate_collection(items, SaliencySource.GUIDED_CAM, scorer, cfg)
        assert len(report.records) == 2
        for name, value in report.aggregates.items():
            per_image = [r.metric_values()[name] for r in report.records]
            assert value == pytest.approx(np.mean(per_image), abs=1e-12)

    def test_failures_recorded_and_excluded(self, tmp_path):
        items, scorer = self._setup(tmp_path, n_items=3)
        (items[1].bundle_path / "features.npy").unlink()
        report = evaluate_collection(
            items, SaliencySource.GRADCAM, scorer, EvalConfig(curves=False)
        )
        assert len(report.records) == 2
        assert len(report.failures) == 1
        assert report.failures[0]["item"] == items[1].stem
        assert "MissingComponent" in report.failures[0]["error"]

    def test_one_inference_per_zone(self, tmp_path):
        items, _ = self._setup(tmp_path, n_items=1)
        import json

        table = json.loads((tmp_path / "stub.json").read_text())
        scorer = CountingScorer(table)
        evaluate_item(items[0], SaliencySource.GRADCAM, scorer, EvalConfig(curves=False))
        assert scorer.calls == 3

        scorer = CountingScorer(table)
        evaluate_item(items[0], SaliencySource.GRADCAM, scorer, EvalConfig(steps=4))
        assert scorer.calls == 3 + 2 * (4 + 1)

    def test_box_annotation_skips_dice_iou(self, tmp_path):
        items, scorer = self._setup(tmp_path, n_items=1, boxes_for=("img000",))
        report = evaluate_collection(
            items, SaliencySource.GRADCAM, scorer, EvalConfig(curves=False)
        )
        record = report.records[0]
        assert record.dice is None
        assert record.iou is None
        assert record.pointing_hit is not None

    def test_parallel_matches_serial(self, tmp_path):
        items, scorer = self._setup(tmp_path, n_items=4)
        cfg = EvalConfig(curves=False)
        serial = evaluate_collection(items, SaliencySource.GUIDED_CAM, scorer, cfg)
        parallel = evaluate_collection(
            items,
            SaliencySource.GUIDED_CAM,
            scorer,
            cfg,
            workers=3,
            scorer_factory=lambda: load_stub_scorer(tmp_path / "stub.json"),
        )
        assert report_to_csv(serial) == report_to_csv(parallel)


class TestReportSerialization:
    def test_csv_schema_and_rows(self, tmp_path):
        make_collection(tmp_path, n_items=2)
        items = scan_collection(tmp_path).items
        scorer = load_stub_scorer(tmp_path / "stub.json")
        report = evaluate_collection(
            items, SaliencySource.GRADCAM, scorer, EvalConfig(curves=False)
        )
        text = report_to_csv(report)
        lines = text.strip().split("\n")
        assert lines[0] == (
            "item,drop_salience,increase_salience,drop_context,increase_context,"
            "pointing_hit,dice,iou,insertion_auc,deletion_auc"
        )
        assert len(lines) == 4  # header + 2 items + aggregate
        assert lines[-1].startswith("aggregate,")
        assert report_to_csv(report) == text

    def test_json_shape(self, tmp_path):
        make_collection(tmp_path, n_items=1)
        items = scan_collection(tmp_path).items
        scorer = load_stub_scorer(tmp_path / "stub.json")
        report = evaluate_collection(
            items, SaliencySource.GUIDED_CAM, scorer, EvalConfig(curves=False)
        )
        payload = report_to_dict(report)
        assert payload["method"] == "guided"
        assert payload["counts"] == {"evaluated": 1, "failed": 0}
        assert set(payload["per_image"][0]) == {
            "item",
            "pointing_degenerate",
            "drop_salience",
            "increase_salience",
            "drop_context",
            "increase_context",
            "pointing_hit",
            "dice",
            "iou",
            "insertion_auc",
            "deletion_auc",
        }
        for name, value in payload["aggregates"].items():
            assert 0.0 <= value <= 1.0, name
