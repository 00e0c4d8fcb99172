import itertools
import json
import math

import numpy as np
import pytest

from segtta import metrics
from segtta.metrics import (
    CASE_CSV_FIELDS,
    MetricSet,
    aggregate,
    case_rows_csv,
    dice,
    hd95,
    holm_bonferroni,
    precision,
    summary_json,
    surface_voxels,
    wilcoxon_holm,
)
from segtta.volume import Mask

SP = (1.0, 1.0, 1.0)


def mask(arr, spacing=SP):
    return Mask(np.asarray(arr, dtype=bool), spacing)


def box(dims, lo, hi, spacing=SP):
    arr = np.zeros(dims, dtype=bool)
    arr[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = True
    return mask(arr, spacing)


def random_mask(seed, dims, p=0.3, spacing=SP):
    rng = np.random.default_rng(seed)
    return mask(rng.uniform(size=dims) < p, spacing)


import oracles


# ---------------------------------------------------------------------------


class TestDice:
    def test_identical(self):
        m = box((6, 6, 6), (1, 1, 1), (4, 4, 4))
        assert dice(m, m) == 1.0

    def test_disjoint(self):
        a = box((8, 4, 4), (0, 0, 0), (2, 4, 4))
        b = box((8, 4, 4), (5, 0, 0), (8, 4, 4))
        assert dice(a, b) == 0.0

    def test_half_overlap(self):
        a = box((10, 5, 4), (0, 0, 0), (5, 5, 4))   # 100 voxels
        b = box((10, 5, 4), (2, 0, 0), (7, 5, 4))   # 100 voxels  # noqa: E501  overlap rows 2..4 = 60?  adjust below
        inter = int(np.count_nonzero(a.data & b.data))
        expected = 2 * inter / (a.count + b.count)
        assert dice(a, b) == pytest.approx(expected)

    def test_exact_formula_case(self):
        arr_a = np.zeros((10, 10, 2), dtype=bool)
        arr_b = np.zeros((10, 10, 2), dtype=bool)
        arr_a.ravel()[:100] = True
        arr_b.ravel()[50:150] = True
        assert dice(mask(arr_a), mask(arr_b)) == pytest.approx(0.5)

    def test_both_empty(self):
        e = mask(np.zeros((3, 3, 3), dtype=bool))
        assert dice(e, e) == 1.0

    def test_symmetry(self):
        a = random_mask(1, (6, 6, 6))
        b = random_mask(2, (6, 6, 6))
        assert dice(a, b) == dice(b, a)

    def test_dims_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            dice(random_mask(1, (4, 4, 4)), random_mask(1, (4, 4, 5)))


class TestPrecision:
    def test_subset_prediction(self):
        gt = box((8, 8, 8), (1, 1, 1), (7, 7, 7))
        pred = box((8, 8, 8), (2, 2, 2), (5, 5, 5))
        assert precision(pred, gt) == 1.0

    def test_disjoint(self):
        a = box((8, 4, 4), (0, 0, 0), (2, 4, 4))
        b = box((8, 4, 4), (5, 0, 0), (8, 4, 4))
        assert precision(a, b) == 0.0

    def test_tp80_fp20(self):
        arr_pred = np.zeros((10, 10, 1), dtype=bool)
        arr_gt = np.zeros((10, 10, 1), dtype=bool)
        arr_pred.ravel()[:100] = True
        arr_gt.ravel()[:80] = True
        assert precision(mask(arr_pred), mask(arr_gt)) == pytest.approx(0.8)

    def test_empty_prediction_conventions(self):
        empty = mask(np.zeros((3, 3, 3), dtype=bool))
        full = mask(np.ones((3, 3, 3), dtype=bool))
        assert precision(empty, empty) == 1.0
        assert precision(empty, full) == 0.0

    def test_asymmetry_witness(self):
        pred = box((8, 4, 4), (0, 0, 0), (4, 4, 4))
        gt = box((8, 4, 4), (0, 0, 0), (2, 4, 4))
        assert precision(pred, gt) != precision(gt, pred)


class TestHd95:
    def test_identical_masks(self):
        m = box((8, 8, 8), (2, 2, 2), (6, 6, 6))
        assert hd95(m, m) == 0.0

    def test_two_voxels_four_mm(self):
        a = np.zeros((10, 3, 3), dtype=bool)
        b = np.zeros((10, 3, 3), dtype=bool)
        a[2, 1, 1] = True
        b[6, 1, 1] = True
        assert hd95(mask(a), mask(b)) == pytest.approx(4.0)

    def test_one_layer_dilation_is_one_mm(self):
        gt = box((12, 12, 12), (4, 4, 4), (8, 8, 8))
        dilated = gt.data.copy()
        for axis, step in itertools.product(range(3), (-1, 1)):
            dilated |= np.roll(gt.data, step, axis=axis)
        pred = mask(dilated)
        assert hd95(pred, gt) == pytest.approx(1.0)
        assert hd95(pred, gt) == pytest.approx(oracles.hd95(pred, gt), abs=1e-9)

    def test_empty_conventions(self):
        empty = mask(np.zeros((4, 4, 4), dtype=bool), spacing=(1, 2, 2))
        full = box((4, 4, 4), (1, 1, 1), (3, 3, 3), spacing=(1, 2, 2))
        assert hd95(empty, empty) == 0.0
        diagonal = math.sqrt(4**2 + 8**2 + 8**2)
        assert hd95(full, empty) == pytest.approx(diagonal)
        assert hd95(empty, full, empty_penalty_mm=7.5) == 7.5

    def test_pooled_symmetry(self):
        a = random_mask(3, (7, 7, 7), p=0.2)
        b = random_mask(4, (7, 7, 7), p=0.2)
        assert hd95(a, b) == pytest.approx(hd95(b, a), abs=1e-12)

    def test_spacing_scaling(self):
        a_arr = random_mask(5, (6, 6, 6), p=0.25).data
        b_arr = random_mask(6, (6, 6, 6), p=0.25).data
        base = hd95(mask(a_arr), mask(b_arr))
        doubled = hd95(mask(a_arr, (2, 2, 2)), mask(b_arr, (2, 2, 2)))
        assert doubled == pytest.approx(2 * base, rel=1e-12)

    def test_matches_bruteforce_on_random_pairs(self):
        for seed in range(8):
            a = random_mask(seed, (5, 6, 4), p=0.3, spacing=(1.0, 0.7, 1.4))
            b = random_mask(seed + 100, (5, 6, 4), p=0.3, spacing=(1.0, 0.7, 1.4))
            assert hd95(a, b) == pytest.approx(oracles.hd95(a, b), abs=1e-9)

    def test_max_directional_variant(self):
        a = random_mask(9, (6, 6, 6), p=0.3)
        b = random_mask(10, (6, 6, 6), p=0.3)
        pooled = hd95(a, b, method="pooled")
        directional = hd95(a, b, method="max_directional")
        assert directional >= 0.0 and pooled >= 0.0
        with pytest.raises(ValueError, match="method"):
            hd95(a, b, method="average")

    def test_surface_extraction_matches_oracle(self):
        m = random_mask(11, (6, 5, 7), p=0.4)
        got = np.argwhere(surface_voxels(m)) * np.asarray(m.spacing)
        expected = oracles.surface_points_mm(m)
        assert np.array_equal(np.sort(got, axis=0), np.sort(expected, axis=0))


class TestWilcoxon:
    def test_all_positive_n10_exact(self):
        diffs = list(range(1, 11))
        res = wilcoxon_holm({"dice": diffs}, {"dice": "greater"})["dice"]
        assert res.method == "exact"
        assert res.p_raw == pytest.approx(1.0 / 1024.0)

    def test_symmetric_pattern_is_null(self):
        diffs = [1, -1, 2, -2, 3, -3, 4, -4]
        res = wilcoxon_holm({"m": diffs}, {"m": "greater"})["m"]
        assert res.p_raw == pytest.approx(0.5, abs=0.08)

    def test_direction_flip(self):
        diffs = [-x for x in range(1, 11)]
        res = wilcoxon_holm({"hd95": diffs}, {"hd95": "less"})["hd95"]
        assert res.p_raw == pytest.approx(1.0 / 1024.0)

    def test_exact_matches_enumeration(self):
        rng = np.random.default_rng(17)
        for n in (6, 8, 10, 12):
            diffs = rng.normal(size=n).round(1).tolist()  # rounding forces ties
            if not any(d != 0 for d in diffs):
                continue
            if sum(1 for d in diffs if d != 0) < 6:
                continue
            res = wilcoxon_holm({"x": diffs}, {"x": "greater"})["x"]
            assert res.p_raw == pytest.approx(oracles.wilcoxon_exact(diffs, "greater"), abs=1e-12)

    def test_exact_and_normal_agree_at_n25(self):
        rng = np.random.default_rng(23)
        for trial in range(5):
            diffs = (rng.normal(0.2, 1.0, size=25)).tolist()
            exact = wilcoxon_holm({"x": diffs}, {"x": "greater"}, method="exact")["x"]
            approx = wilcoxon_holm({"x": diffs}, {"x": "greater"}, method="normal")["x"]
            assert approx.p_raw == pytest.approx(exact.p_raw, abs=0.01)

    def test_all_zero_is_degenerate(self):
        res = wilcoxon_holm({"x": [0.0] * 8}, {"x": "greater"})["x"]
        assert res.degenerate and res.p_raw == 1.0

    def test_too_few_nonzero_raises(self):
        with pytest.raises(ValueError, match="nonzero"):
            wilcoxon_holm({"x": [1.0, -2.0, 0.0, 0.0, 3.0, 0, 0, 0]}, {"x": "greater"})

    def test_holm_two_hypotheses(self):
        assert holm_bonferroni([0.01, 0.04]) == [0.02, 0.04]

    def test_holm_three_hypotheses(self):
        assert holm_bonferroni([0.01, 0.02, 0.03]) == [0.03, 0.04, 0.04]

    def test_holm_preserves_input_order(self):
        assert holm_bonferroni([0.2, 0.01, 0.04]) == [0.2, 0.03, 0.08]

    def test_family_adjustment_applied(self):
        up = list(range(1, 11))
        down = [-x for x in up]
        res = wilcoxon_holm(
            {"dice": up, "hd95": down, "precision": up},
            {"dice": "greater", "hd95": "less", "precision": "greater"},
        )
        for r in res.values():
            assert r.p_adjusted >= r.p_raw
        assert max(r.p_adjusted for r in res.values()) <= 1.0


class TestAggregate:
    def test_single_case(self):
        stats = aggregate([MetricSet(0.9, 1.5, 0.8)])
        assert stats.n == 1 and stats.degenerate
        assert stats.dice_std == stats.hd95_std == stats.precision_std == 0.0

    def test_two_values_sample_std(self):
        stats = aggregate([MetricSet(0.8, 1.0, 0.5), MetricSet(0.9, 3.0, 0.7)])
        assert stats.dice_mean == pytest.approx(0.85)
        assert stats.dice_std == pytest.approx(0.07071067811865477)

    def test_identical_sets_zero_std(self):
        stats = aggregate([MetricSet(0.5, 2.0, 0.25)] * 7)
        assert stats.dice_std == 0.0 and stats.n == 7

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            aggregate([])


class TestEmitters:
    def test_case_csv_golden(self):
        rows = [
            {"case_id": "a", "dice": 1.0, "hd95_mm": 0.0, "precision": 1.0,
             "flagged": True, "source": "baseline"},
        ]
        text = case_rows_csv(rows)
        assert text.splitlines()[0] == ",".join(CASE_CSV_FIELDS)
        assert text.splitlines()[1] == "a,1.0,0.0,1.0,True,baseline"

    def test_summary_json_shape(self):
        stats = aggregate([MetricSet(0.8, 1.0, 0.5), MetricSet(0.9, 3.0, 0.7)])
        payload = json.loads(summary_json(stats))
        assert payload["n"] == 2
        assert payload["dice"]["mean"] == pytest.approx(0.85)
        assert set(payload) == {"n", "dice", "hd95_mm", "precision", "degenerate"}
