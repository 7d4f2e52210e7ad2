import numpy as np
import pytest

from regionrep.core import (
    DimsMismatchError,
    IGNORE_LABEL,
    ImageDims,
    LabelMap,
    MaskSet,
    RegionMask,
    rle_encode,
)
from regionrep.labeling import oracle_region_probs
from regionrep.segmap import IouReport, PixelPrediction, miou, oracle_eval, predict_pixels

from conftest import random_partition


def label_map(rows, num_classes):
    return LabelMap(np.array(rows, dtype=np.uint16), num_classes=num_classes)


def brute_force_confusion(pred: PixelPrediction, gt: LabelMap) -> np.ndarray:
    c = gt.num_classes
    conf = np.zeros((c, c + 1), dtype=np.int64)
    for y in range(gt.dims.height):
        for x in range(gt.dims.width):
            g = int(gt.labels[y, x])
            if g == IGNORE_LABEL:
                continue
            if pred.void[y, x]:
                conf[g, c] += 1
            else:
                conf[g, int(pred.labels[y, x])] += 1
    return conf


def brute_force_miou(conf: np.ndarray, gt_labels, pred: PixelPrediction):
    c = conf.shape[0]
    present = set()
    scored = gt_labels != IGNORE_LABEL
    present |= set(np.unique(gt_labels[scored]).tolist())
    present |= set(np.unique(pred.labels[scored & ~pred.void]).tolist())
    ious = {}
    for k in sorted(present):
        tp = conf[k, k]
        fn = conf[k].sum() - tp
        fp = conf[:, k].sum() - tp
        denom = tp + fn + fp
        ious[k] = tp / denom if denom else 0.0
    return ious


class TestPredictPixels:
    def test_unweighted_mean_of_covering_regions(self):
        dims = ImageDims(1, 2)
        masks = MaskSet(
            dims,
            [RegionMask(dims, [0, 2]), RegionMask(dims, [0, 1, 1])],
        )
        probs = [np.array([0.8, 0.2]), np.array([0.0, 1.0])]
        out = predict_pixels(masks, probs, num_classes=2)
        np.testing.assert_allclose(out.probs[0, 0], [0.4, 0.6])
        np.testing.assert_allclose(out.probs[0, 1], [0.8, 0.2])
        assert out.labels[0, 0] == 1 and out.labels[0, 1] == 0
        assert not out.void.any()

    def test_uncovered_pixels_are_void(self):
        dims = ImageDims(1, 3)
        masks = MaskSet(dims, [RegionMask(dims, [0, 1, 2])])
        out = predict_pixels(masks, [np.array([1.0])], num_classes=1)
        assert out.void.tolist() == [[False, True, True]]

    def test_none_distributions_cast_no_vote(self):
        dims = ImageDims(1, 2)
        masks = MaskSet(dims, [RegionMask(dims, [0, 2]), RegionMask(dims, [0, 2])])
        out = predict_pixels(masks, [None, np.array([0.0, 1.0])], num_classes=2)
        assert (out.labels == 1).all()
        only_none = predict_pixels(masks, [None, None], num_classes=2)
        assert only_none.void.all()
        inferred = predict_pixels(masks, [None, None])
        assert inferred.void.all()
        assert inferred.probs is None

    def test_argmax_tie_goes_to_lowest_class(self):
        dims = ImageDims(1, 1)
        masks = MaskSet(dims, [RegionMask(dims, [0, 1])])
        out = predict_pixels(masks, [np.array([0.5, 0.5])], num_classes=2)
        assert out.labels[0, 0] == 0

    def test_mask_count_mismatch(self):
        dims = ImageDims(1, 1)
        masks = MaskSet(dims, [RegionMask(dims, [0, 1])])
        with pytest.raises(DimsMismatchError):
            predict_pixels(masks, [], num_classes=1)


class TestMiou:
    def test_hand_worked_case(self):
        # gt [0 0 1 1], pred [0 1 1 1]:
        # class 0: inter 1, union 2 -> 1/2; class 1: inter 2, union 3 -> 2/3
        gt = label_map([[0, 0, 1, 1]], 2)
        pred = PixelPrediction(
            dims=gt.dims,
            labels=np.array([[0, 1, 1, 1]], dtype=np.int64),
            void=np.zeros((1, 4), dtype=bool),
        )
        report = miou(pred, gt)
        assert report.miou == pytest.approx(7.0 / 12.0, abs=1e-9)
        assert report.class_ids == (0, 1)
        assert report.ious[0] == pytest.approx(0.5, abs=1e-12)
        assert report.ious[1] == pytest.approx(2.0 / 3.0, abs=1e-12)

    def test_perfect_prediction(self):
        gt = label_map([[0, 1], [2, 1]], 3)
        pred = PixelPrediction(
            dims=gt.dims, labels=gt.labels.astype(np.int64), void=np.zeros((2, 2), bool)
        )
        assert miou(pred, gt).miou == 1.0

    def test_void_counts_against_the_gt_class(self):
        gt = label_map([[0, 0, 0, 0]], 1)
        full = PixelPrediction(
            dims=gt.dims, labels=np.zeros((1, 4), np.int64), void=np.zeros((1, 4), bool)
        )
        holey = PixelPrediction(
            dims=gt.dims,
            labels=np.zeros((1, 4), np.int64),
            void=np.array([[False, False, False, True]]),
        )
        assert miou(full, gt).miou == 1.0
        assert miou(holey, gt).miou == pytest.approx(0.75)

    def test_ignore_pixels_not_scored(self):
        gt = label_map([[0, IGNORE_LABEL]], 1)
        pred = PixelPrediction(
            dims=gt.dims,
            labels=np.array([[0, 0]], dtype=np.int64),
            void=np.zeros((1, 2), bool),
        )
        rep = miou(pred, gt)
        assert rep.miou == 1.0
        assert rep.confusion.sum() == 1

    def test_all_ignore_gives_none(self):
        gt = label_map([[IGNORE_LABEL]], 1)
        pred = PixelPrediction(
            dims=gt.dims, labels=np.zeros((1, 1), np.int64), void=np.zeros((1, 1), bool)
        )
        rep = miou(pred, gt)
        assert rep.miou is None
        assert rep.class_ids == ()

    def test_class_permutation_symmetry(self, rng):
        labels = rng.integers(0, 3, size=(6, 6)).astype(np.uint16)
        gt = label_map(labels.tolist(), 3)
        pred_labels = rng.integers(0, 3, size=(6, 6)).astype(np.int64)
        pred = PixelPrediction(dims=gt.dims, labels=pred_labels, void=np.zeros((6, 6), bool))
        base = miou(pred, gt).miou
        perm = np.array([2, 0, 1])
        gt_p = label_map(perm[labels].tolist(), 3)
        pred_p = PixelPrediction(
            dims=gt.dims, labels=perm[pred_labels], void=np.zeros((6, 6), bool)
        )
        assert miou(pred_p, gt_p).miou == pytest.approx(base, abs=1e-12)

    def test_confusion_matches_brute_force_random(self, rng):
        for _ in range(30):
            h, w = int(rng.integers(1, 8)), int(rng.integers(1, 8))
            c = int(rng.integers(1, 5))
            labels = rng.integers(0, c, size=(h, w)).astype(np.uint16)
            labels[rng.random((h, w)) < 0.15] = IGNORE_LABEL
            gt = LabelMap(labels, num_classes=c)
            pred = PixelPrediction(
                dims=gt.dims,
                labels=rng.integers(0, c, size=(h, w)).astype(np.int64),
                void=rng.random((h, w)) < 0.2,
            )
            rep = miou(pred, gt)
            conf = brute_force_confusion(pred, gt)
            assert np.array_equal(rep.confusion, conf)
            ious = brute_force_miou(conf, gt.labels, pred)
            if not ious:
                assert rep.miou is None
                continue
            assert rep.miou == pytest.approx(np.mean(list(ious.values())), abs=1e-12)
            assert rep.class_ids == tuple(sorted(ious))

    def test_dims_mismatch(self):
        gt = label_map([[0]], 1)
        pred = PixelPrediction(
            dims=ImageDims(1, 2),
            labels=np.zeros((1, 2), np.int64),
            void=np.zeros((1, 2), bool),
        )
        with pytest.raises(DimsMismatchError):
            miou(pred, gt)


class TestOracleEval:
    def test_aligned_partition_scores_one(self, rng):
        labels = rng.integers(0, 4, size=(16, 16)).astype(np.uint16)
        gt = LabelMap(labels, num_classes=4)
        masks = MaskSet(
            gt.dims,
            [rle_encode(labels == k) for k in range(4)],
        )
        assert oracle_eval(masks, gt).miou == 1.0

    def test_coarser_masks_score_below_one(self, rng):
        # one mask covering everything cannot express a 2-class map
        labels = np.zeros((4, 4), dtype=np.uint16)
        labels[:, 2:] = 1
        gt = LabelMap(labels, num_classes=2)
        whole = MaskSet(gt.dims, [RegionMask(gt.dims, [0, 16])])
        rep = oracle_eval(whole, gt)
        assert rep.miou < 1.0

    def test_empty_mask_set_scores_zero(self):
        gt = label_map([[0, 1]], 2)
        assert oracle_eval(MaskSet(gt.dims), gt).miou == 0.0

    def test_matches_composition_of_probs_and_prediction(self, rng):
        labels = rng.integers(0, 3, size=(12, 12)).astype(np.uint16)
        gt = LabelMap(labels, num_classes=3)
        masks = random_partition(rng, gt.dims, 5)
        composed = predict_pixels(
            masks,
            [oracle_region_probs(m, gt) for m in masks.masks],
            num_classes=3,
        )
        assert oracle_eval(masks, gt).miou == pytest.approx(
            miou(composed, gt).miou, abs=1e-12
        )

    def test_finer_partition_never_hurts(self, rng):
        # splitting regions can only improve the oracle score
        labels = rng.integers(0, 3, size=(16, 16)).astype(np.uint16)
        gt = LabelMap(labels, num_classes=3)
        coarse = random_partition(rng, gt.dims, 4)
        fine_masks = []
        for m in coarse.masks:
            bitmap = m.to_bitmap()
            left = bitmap.copy()
            left[:, 8:] = False
            right = bitmap.copy()
            right[:, :8] = False
            for part in (left, right):
                if part.any():
                    fine_masks.append(rle_encode(part))
        fine = MaskSet(gt.dims, fine_masks)
        assert oracle_eval(fine, gt).miou >= oracle_eval(coarse, gt).miou - 1e-12
