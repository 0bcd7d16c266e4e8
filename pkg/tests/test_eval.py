import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fogbridge.detector import FusionDetector, FusionDetectorConfig, save_checkpoint
from fogbridge.eval import (
    IOU_THRESHOLDS,
    EvalReport,
    average_precision,
    class_aps,
    evaluate,
    evaluate_model,
    interpolated_ap,
    iou,
    match_detections,
)
from fogbridge.synthdata import DatasetConfig, generate_dataset, load_split

from oracles import brute_force_ap, enumerated_instance


class TestIoU:
    def test_identical(self):
        assert iou([1, 2, 5, 7], [1, 2, 5, 7]) == 1.0

    def test_disjoint(self):
        assert iou([0, 0, 1, 1], [2, 2, 3, 3]) == 0.0

    def test_analytic_third(self):
        assert iou([0, 0, 2, 2], [1, 0, 3, 2]) == pytest.approx(1 / 3)

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            iou([0, 0, 0, 2], [0, 0, 1, 1])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0, 50), min_size=4, max_size=4), st.lists(st.floats(0, 50), min_size=4, max_size=4))
    def test_symmetric_and_bounded(self, a, b):
        a = [a[0], a[1], a[0] + a[2] + 0.5, a[1] + a[3] + 0.5]
        b = [b[0], b[1], b[0] + b[2] + 0.5, b[1] + b[3] + 0.5]
        v = iou(a, b)
        assert 0.0 <= v <= 1.0 and v == pytest.approx(iou(b, a))


class TestAveragePrecision:
    def test_perfect_detections(self):
        gts = [(0, (0, 0, 10, 10)), (1, (5, 5, 9, 9))]
        dets = [(0, 0.9, (0, 0, 10, 10)), (1, 0.8, (5, 5, 9, 9))]
        assert average_precision(dets, gts, 0.5) == 1.0

    def test_no_detections(self):
        assert average_precision([], [(0, (0, 0, 1, 1))], 0.5) == 0.0

    def test_no_ground_truth_is_nan(self):
        assert math.isnan(average_precision([(0, 0.5, (0, 0, 1, 1))], [], 0.5))

    def test_three_gt_five_det_oracle(self):
        gts = [(0, (0, 0, 10, 10)), (0, (20, 20, 30, 30)), (0, (40, 0, 50, 8))]
        dets = [(0, 0.95, (0, 0, 10, 10)), (0, 0.9, (60, 60, 70, 70)), (0, 0.8, (21, 21, 31, 31)),
                (0, 0.6, (1, 1, 10, 10)), (0, 0.3, (40, 0, 50, 9))]
        assert average_precision(dets, gts, 0.5) == pytest.approx(brute_force_ap(dets, gts, 0.5), abs=1e-6)

    def test_hand_computed_curve(self):
        # TP, FP, TP over 2 GT: precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1
        gts = [(0, (0, 0, 4, 4)), (0, (10, 10, 14, 14))]
        dets = [(0, 0.9, (0, 0, 4, 4)), (0, 0.8, (30, 30, 34, 34)), (0, 0.7, (10, 10, 14, 14))]
        assert average_precision(dets, gts, 0.5) == pytest.approx((20 * 1.0 + 20 * 2 / 3) / 40)

    @pytest.mark.parametrize("seed", range(60))
    def test_enumerated_against_brute_force(self, seed):
        dets, gts = enumerated_instance(seed)
        for thr in (0.5, 0.7):
            assert average_precision(dets, gts, thr) == pytest.approx(brute_force_ap(dets, gts, thr), abs=1e-6)

    def test_each_gt_matched_once(self):
        gts = [(0, (0, 0, 10, 10))]
        dets = [(0, 0.9, (0, 0, 10, 10)), (0, 0.8, (0, 0, 10, 10))]
        _, tp, n_gt = match_detections(dets, gts, 0.5)
        assert tp.tolist() == [True, False] and n_gt == 1

    def test_matching_respects_images(self):
        gts = [(0, (0, 0, 10, 10))]
        assert average_precision([(1, 0.9, (0, 0, 10, 10))], gts, 0.5) == 0.0

    def test_threshold_inclusive(self):
        gts = [(0, (0, 0, 2, 2))]
        assert average_precision([(0, 0.9, (1, 0, 3, 2))], gts, 1 / 3) == 1.0

    def test_interpolated_ap_empty(self):
        assert interpolated_ap(np.zeros(0, bool), 3) == 0.0


class TestAPProperties:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from(["exp", "cube", "affine"]))
    def test_monotone_score_transform_invariance(self, seed, kind):
        dets, gts = enumerated_instance(seed)
        f = {"exp": np.exp, "cube": lambda s: s ** 3, "affine": lambda s: 3 * s - 7}[kind]
        moved = [(i, float(f(s)), b) for i, s, b in dets]
        assert average_precision(moved, gts, 0.5) == pytest.approx(average_precision(dets, gts, 0.5), abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.001, 0.999))
    def test_duplicate_never_increases(self, seed, score):
        dets, gts = enumerated_instance(seed)
        scores = {s for _, s, _ in dets}
        if score in scores:
            return
        img, box = gts[0]
        dets_dup = [(img, 1.5, box)] + [(i, s, b) for i, s, b in dets]
        base = average_precision(dets_dup, gts, 0.5)
        assert average_precision(dets_dup + [(img, score, box)], gts, 0.5) <= base + 1e-12

    @pytest.mark.parametrize("seed", range(40))
    def test_more_true_positives_never_lower(self, seed):
        dets, gts = enumerated_instance(seed)
        # turn one false positive into an exact hit on an unmatched GT, keeping its score
        order = sorted(dets, key=lambda d: -d[1])
        matched = match_detections(dets, gts, 0.5)
        fps = [d for d, t in zip(order, matched[1]) if not t]
        if not fps:
            return
        free = [g for g in gts if not any(iou(d[2], g[1]) >= 0.5 and d[0] == g[0] for d in dets)]
        if not free:
            return
        img, box = free[0]
        victim = fps[0]
        upgraded = [d if d is not victim else (img, victim[1], box) for d in dets]
        before = brute_force_ap(dets, gts, 0.5)
        after = average_precision(upgraded, gts, 0.5)
        assert after >= before - 1e-12
        assert after == pytest.approx(brute_force_ap(upgraded, gts, 0.5), abs=1e-6)


class TestReport:
    def report(self):
        ap = {"clear_day": {"car": 80.0, "pedestrian": 60.0, "ridable": None},
              "dense_fog": {"car": 10.0, "pedestrian": 20.0, "ridable": 30.0},
              "night": {"car": 40.0, "pedestrian": None, "ridable": 50.0}}
        return EvalReport(ap=ap, target_domains=["dense_fog", "night"], meta={"k": 1})

    def test_means(self):
        r = self.report()
        assert r.domain_mean("clear_day") == 70.0
        assert r.overall_mean == pytest.approx((10 + 20 + 30 + 40 + 50) / 5)

    def test_json_round_trip(self, tmp_path):
        r = self.report()
        jp, tp = r.write(tmp_path)
        d = json.loads(jp.read_text())
        assert d["overall_target_mean"] == 30.0 and d["ap"]["night"]["pedestrian"] is None
        assert EvalReport.from_json(d).overall_mean == r.overall_mean
        assert "mean" in tp.read_text()

    def test_json_bytes_stable(self, tmp_path):
        a, _ = self.report().write(tmp_path / "a")
        b, _ = self.report().write(tmp_path / "b")
        assert a.read_bytes() == b.read_bytes()

    def test_table_columns_align(self):
        head, row = self.report().table().splitlines()
        assert len(head) == len(row)


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    cfg = DatasetConfig(source_train=6, source_test=4, target_train={"dense_fog": 4}, target_test=4)
    return generate_dataset(root, cfg, seed=3)


SMALL = FusionDetectorConfig(widths=(4, 8, 8, 8), stem_width=4, head_widths=(4, 4, 4))


class TestEvaluate:
    def test_thresholds_per_class(self):
        assert IOU_THRESHOLDS == (0.7, 0.5, 0.5)

    def test_ground_truth_passes_through_as_perfect(self, tiny_data):
        from fogbridge.detector import Detection
        split = load_split(tiny_data, "clear_day", "test")
        preds = [[Detection(tuple(b), int(c), 0.9) for b, c in zip(split.boxes[i], split.classes[i])]
                 for i in range(len(split))]
        for v in class_aps(preds, split).values():
            assert v is None or v == 100.0

    def test_absent_class_skipped(self, tiny_data):
        split = load_split(tiny_data, "clear_day", "test")
        present = {int(c) for cs in split.classes for c in cs}
        aps = class_aps([[] for _ in range(len(split))], split)
        for c, name in enumerate(("car", "pedestrian", "ridable")):
            assert (aps[name] is None) == (c not in present)

    def test_checkpoint_twice_identical(self, tiny_data, tmp_path):
        det = FusionDetector(SMALL)
        save_checkpoint(tmp_path, {"detector": det}, {"detector": SMALL.to_dict(), "dataset_hash": tiny_data.config_hash})
        a = evaluate(tmp_path, tiny_data, ["clear_day", "dense_fog"])
        b = evaluate(tmp_path, tiny_data, ["clear_day", "dense_fog"])
        assert json.dumps(a.to_json(), sort_keys=True) == json.dumps(b.to_json(), sort_keys=True)
        assert a.target_domains == ["dense_fog"]

    def test_missing_split_rejected(self, tiny_data, tmp_path):
        save_checkpoint(tmp_path, {"detector": FusionDetector(SMALL)}, {"detector": SMALL.to_dict()})
        with pytest.raises(FileNotFoundError):
            evaluate(tmp_path, tiny_data, ["snow"])

    def test_dataset_hash_mismatch(self, tiny_data, tmp_path):
        save_checkpoint(tmp_path, {"detector": FusionDetector(SMALL)},
                        {"detector": SMALL.to_dict(), "dataset_hash": "0" * 16})
        with pytest.raises(ValueError, match="dataset"):
            evaluate(tmp_path, tiny_data, ["clear_day"])
        evaluate(tmp_path, tiny_data, ["clear_day"], allow_hash_mismatch=True)

    def test_values_in_range(self, tiny_data):
        splits = {d: load_split(tiny_data, d, "test") for d in ("clear_day", "dense_fog")}
        rep = evaluate_model(FusionDetector(SMALL), splits)
        for per in rep.ap.values():
            for v in per.values():
                assert v is None or 0.0 <= v <= 100.0
