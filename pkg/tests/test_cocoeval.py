import numpy as np
import pytest

from segkit import cocoeval, maskops
from segkit.cocoeval import EvalParams, average_precision_101, evaluate_map, match_image_category
from segkit.errors import ValidationError

import helpers
import oracles


def one_image_dataset(gt_masks, height=1, width=20, categories=None):
    anns = [
        helpers.annotation(i + 1, 1, cat, mask, iscrowd)
        for i, (cat, mask, iscrowd) in enumerate(gt_masks)
    ]
    cats = categories or {1: "person"}
    return helpers.dataset({1: (height, width)}, cats, anns)


class TestMatching:
    def test_single_match_above_threshold(self):
        gt = helpers.mask_from_cols(1, 8, [0, 1, 2, 3])
        det = helpers.mask_from_cols(1, 8, [0, 1, 2])
        assert maskops.mask_iou(det, gt) == 0.75
        ds = one_image_dataset([(1, gt, 0)], width=8)
        dets = [helpers.detection(1, 1, 0.9, det)]
        res = match_image_category(ds.annotations, dets, 0.5, 100, image_size=(1, 8))
        assert res.tp == [True]
        assert res.unmatched_gt == 0

    def test_single_match_below_threshold(self):
        gt = helpers.mask_from_cols(1, 8, [0, 1, 2, 3])
        det = helpers.mask_from_cols(1, 8, [0, 1, 2])
        ds = one_image_dataset([(1, gt, 0)], width=8)
        dets = [helpers.detection(1, 1, 0.9, det)]
        res = match_image_category(ds.annotations, dets, 0.8, 100, image_size=(1, 8))
        assert res.tp == [False]
        assert res.unmatched_gt == 1

    def test_greedy_scoring_order(self):
        # hand-executed: d1 (score .9) overlaps G1 at 0.8 and takes it even
        # though d2 (score .8) would match G1 perfectly; d2 is left with G2
        # at IoU 0.25 < 0.5 and becomes FP
        g1 = helpers.mask_from_cols(1, 20, range(0, 10))
        g2 = helpers.mask_from_cols(1, 20, range(6, 16))
        d1 = helpers.mask_from_cols(1, 20, range(0, 8))
        d2 = helpers.mask_from_cols(1, 20, range(0, 10))
        assert maskops.mask_iou(d1, g1) == 0.8
        assert maskops.mask_iou(d2, g1) == 1.0
        assert maskops.mask_iou(d2, g2) == 0.25
        ds = one_image_dataset([(1, g1, 0), (1, g2, 0)])
        dets = [helpers.detection(1, 1, 0.9, d1), helpers.detection(1, 1, 0.8, d2)]
        res = match_image_category(ds.annotations, dets, 0.5, 100, image_size=(1, 20))
        assert res.order == [0, 1]
        assert res.tp == [True, False]
        assert res.unmatched_gt == 1

    def test_greedy_on_reference_iou_matrix(self):
        # the canonical two-by-two case: d1 prefers G1 (.8 over .6); d2 then
        # sees only G2 at .4 which misses the .5 threshold
        iou = np.array([[0.8, 0.6], [0.7, 0.4]])
        tp, matched = cocoeval._greedy_match(iou, 0.5)
        assert tp == [True, False]
        assert matched == 1

    def test_iou_tie_takes_lowest_gt_index(self):
        iou = np.array([[0.6, 0.6]])
        tp, _ = cocoeval._greedy_match(iou, 0.5)
        assert tp == [True]
        # rerun with a second det so the taken gt matters
        iou = np.array([[0.6, 0.6], [0.9, 0.1]])
        tp, matched = cocoeval._greedy_match(iou, 0.5)
        # det0 takes gt0; det1's best remaining is gt1 at 0.1 -> FP
        assert tp == [True, False]
        assert matched == 1

    def test_max_dets_truncation(self):
        gt = helpers.mask_from_cols(1, 8, [0, 1])
        dets = [
            helpers.detection(1, 1, 0.5, helpers.mask_from_cols(1, 8, [4])),
            helpers.detection(1, 1, 0.9, helpers.mask_from_cols(1, 8, [0, 1])),
        ]
        ds = one_image_dataset([(1, gt, 0)], width=8)
        res = match_image_category(ds.annotations, dets, 0.5, 1, image_size=(1, 8))
        assert res.order == [1]  # highest score kept
        assert res.tp == [True]

    def test_mixed_groups_rejected(self):
        d1 = helpers.detection(1, 1, 0.9, helpers.mask_from_cols(1, 4, [0]))
        d2 = helpers.detection(2, 1, 0.9, helpers.mask_from_cols(1, 4, [0]))
        with pytest.raises(ValidationError):
            match_image_category([], [d1, d2], 0.5, 100, image_size=(1, 4))


class TestAveragePrecision:
    def test_perfect_single_detection(self):
        assert average_precision_101([True], 1) == 1.0

    def test_fp_then_tp(self):
        assert average_precision_101([False, True], 1) == 0.5

    def test_no_detections(self):
        assert average_precision_101([], 1) == 0.0

    def test_zero_gt_rejected(self):
        with pytest.raises(ValidationError):
            average_precision_101([True], 0)

    def test_half_recall(self):
        # one of two gts found: precision 1 up to recall 0.5, nothing after
        ap = average_precision_101([True], 2)
        assert ap == 51 / 101

    def test_envelope_is_monotone(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            labels = list(rng.random(10) < 0.5)
            curve = cocoeval.precision_envelope(labels, 5)
            assert (np.diff(curve) <= 1e-15).all()


class TestEvaluateMap:
    def test_perfect_predictions(self):
        rng = np.random.default_rng(1)
        masks = [helpers.random_blob_mask(rng, 6, 6) for _ in range(4)]
        anns = [helpers.annotation(i + 1, 1, 1 + i % 2, m) for i, m in enumerate(masks)]
        ds = helpers.dataset({1: (6, 6)}, {1: "a", 2: "b"}, anns)
        dets = [helpers.detection(a.image_id, a.category_id, 1.0,
                                  maskops.rle_decode(a.segmentation)) for a in anns]
        report = evaluate_map(ds, dets)
        assert report.mean_ap == 1.0
        assert all(r.ap == 1.0 for r in report.per_category.values())

    def test_no_predictions(self):
        gt = helpers.mask_from_cols(2, 4, [0])
        ds = helpers.dataset({1: (2, 4)}, {1: "a"}, [helpers.annotation(1, 1, 1, gt)])
        report = evaluate_map(ds, [])
        assert report.mean_ap == 0.0

    def test_iou_075_fixture_scores_point_six(self):
        gt = helpers.mask_from_cols(1, 8, [0, 1, 2, 3])
        det = helpers.mask_from_cols(1, 8, [0, 1, 2])
        ds = one_image_dataset([(1, gt, 0)], width=8)
        report = evaluate_map(ds, [helpers.detection(1, 1, 0.9, det)])
        res = report.per_category[1]
        assert res.ap_per_threshold == [1.0] * 6 + [0.0] * 4
        assert report.mean_ap == 0.6

    def test_absent_category_excluded_from_mean(self):
        gt = helpers.mask_from_cols(1, 8, [0, 1])
        ds = one_image_dataset([(1, gt, 0)], width=8, categories={1: "a", 2: "b"})
        dets = [
            helpers.detection(1, 1, 1.0, gt),
            helpers.detection(1, 2, 0.9, helpers.mask_from_cols(1, 8, [5])),
        ]
        report = evaluate_map(ds, dets)
        assert report.per_category[2].present is False
        assert report.per_category[2].ap is None
        assert report.mean_ap == 1.0

    def test_no_present_categories_gives_zero(self):
        ds = helpers.dataset({1: (2, 2)}, {1: "a"}, [])
        report = evaluate_map(ds, [])
        assert report.mean_ap == 0.0
        assert report.per_category[1].present is False

    def test_crowd_gt_excluded(self):
        crowd = helpers.mask_from_cols(1, 8, [0, 1, 2, 3])
        real = helpers.mask_from_cols(1, 8, [5, 6])
        ds = one_image_dataset([(1, crowd, 1), (1, real, 0)], width=8)
        # detection matching only the crowd region is an FP; gt count is 1
        dets = [
            helpers.detection(1, 1, 0.9, real),
            helpers.detection(1, 1, 0.8, crowd),
        ]
        report = evaluate_map(ds, dets)
        res = report.per_category[1]
        assert res.num_gt == 1
        # TP at rank 1, FP at rank 2: envelope 1.0 everywhere
        assert res.ap == 1.0

    def test_fp_slot_before_tp_halves_ap(self):
        gt = helpers.mask_from_cols(1, 8, [0, 1])
        miss = helpers.mask_from_cols(1, 8, [5])
        ds = one_image_dataset([(1, gt, 0)], width=8)
        dets = [
            helpers.detection(1, 1, 0.9, miss),
            helpers.detection(1, 1, 0.8, gt),
        ]
        report = evaluate_map(ds, dets)
        assert report.per_category[1].ap == 0.5

    def test_adding_trailing_fp_never_raises_ap(self):
        gt = helpers.mask_from_cols(1, 8, [0, 1])
        ds = one_image_dataset([(1, gt, 0)], width=8)
        base = [helpers.detection(1, 1, 0.9, gt)]
        extra = base + [helpers.detection(1, 1, 0.5, helpers.mask_from_cols(1, 8, [5]))]
        assert (
            evaluate_map(ds, extra).mean_ap <= evaluate_map(ds, base).mean_ap
        )

    def test_unknown_references_rejected(self):
        ds = helpers.dataset({1: (2, 2)}, {1: "a"}, [])
        bad_img = helpers.detection(9, 1, 0.5, np.zeros((2, 2), bool))
        with pytest.raises(ValidationError, match="unknown image"):
            evaluate_map(ds, [bad_img])
        bad_cat = helpers.detection(1, 9, 0.5, np.zeros((2, 2), bool))
        with pytest.raises(ValidationError, match="unknown category"):
            evaluate_map(ds, [bad_cat])

    def test_rle_size_checked(self):
        ds = helpers.dataset({1: (2, 2)}, {1: "a"}, [])
        bad = helpers.detection(1, 1, 0.5, np.zeros((3, 3), bool))
        with pytest.raises(ValidationError, match="does not match"):
            evaluate_map(ds, [bad])

    def test_bbox_iou_kind(self):
        gt = helpers.mask_from_cols(2, 8, [0, 1, 2, 3])
        det = helpers.mask_from_cols(2, 8, [0, 1, 2])
        ds = one_image_dataset([(1, gt, 0)], height=2, width=8)
        report = evaluate_map(
            ds, [helpers.detection(1, 1, 0.9, det)], EvalParams(iou_kind="bbox")
        )
        # boxes [0,0,4,2] vs [0,0,3,2]: inter 6, union 8 -> 0.75
        assert report.mean_ap == 0.6

    def test_jobs_do_not_change_result(self):
        ds, dets, _, _ = helpers.random_eval_case(np.random.default_rng(40))
        r1 = evaluate_map(ds, dets, jobs=1)
        r4 = evaluate_map(ds, dets, jobs=4)
        assert r1.mean_ap == r4.mean_ap
        for cid in r1.per_category:
            assert r1.per_category[cid].ap == r4.per_category[cid].ap


class TestOracleEquivalence:
    @pytest.mark.parametrize("iou_kind", ["mask", "bbox"])
    def test_matches_brute_force_on_random_cases(self, iou_kind):
        rng = np.random.default_rng(99 if iou_kind == "mask" else 100)
        params = EvalParams(iou_kind=iou_kind)
        for _ in range(40):
            ds, dets, oracle_gts, oracle_dets = helpers.random_eval_case(rng)
            got = evaluate_map(ds, dets, params)
            want = oracles.evaluate_brute_force(
                [c.id for c in ds.categories],
                oracle_gts,
                oracle_dets,
                params.iou_thresholds,
                params.recall_points,
                params.max_dets_per_image,
                iou_kind,
            )
            assert abs(got.mean_ap - want["mean_ap"]) <= 1e-9
            for cid, ap in want["per_category"].items():
                res = got.per_category[cid]
                if ap is None:
                    assert not res.present
                else:
                    assert abs(res.ap - ap) <= 1e-9
