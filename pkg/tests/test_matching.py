import itertools

import numpy as np
import pytest

from fsdetr.harness.matching import evaluate_ap, greedy_match, interpolated_ap, iou_matrix
from fsdetr.harness.scenes import Detection
from fsdetr.losses import Box, iou


def det(cx, cy, w, h, score=1.0):
    return Detection(0, score, Box(cx, cy, w, h))


def random_dets(rng, n, scores=True):
    return [
        det(*rng.uniform(0.3, 0.7, 2), *rng.uniform(0.1, 0.4, 2), score=float(rng.uniform()) if scores else 1.0)
        for _ in range(n)
    ]


def exhaustive_greedy(preds, gts, thr):
    """Lexicographically best IoU sequence in score order over every partial assignment."""
    order = sorted(range(len(preds)), key=lambda i: -preds[i].score)
    best, best_key = None, None
    options = list(range(len(gts))) + [None] * len(preds)
    for choice in set(itertools.permutations(options, len(preds))):
        key, pairs = [], []
        for rank, i in enumerate(order):
            j = choice[rank]
            if j is None:
                key.append(-1.0)
                continue
            v = iou(preds[i].box, gts[j].box)
            if v < thr:
                break
            key.append(v)
            pairs.append((i, j))
        else:
            if best_key is None or key > best_key:
                best, best_key = pairs, key
    return sorted(best)


class TestIouMatrix:
    def test_matches_scalar_iou(self):
        rng = np.random.default_rng(0)
        a, b = random_dets(rng, 4), random_dets(rng, 3)
        m = iou_matrix([tuple(d.box) for d in a], [tuple(d.box) for d in b])
        for i, j in np.ndindex(m.shape):
            assert m[i, j] == pytest.approx(iou(a[i].box, b[j].box), abs=1e-14)


class TestGreedyMatch:
    def test_exact_overlap(self):
        g = det(0.5, 0.5, 0.2, 0.2)
        assert greedy_match([g], [g], 0.5) == [(0, 0)]

    def test_single_claim(self):
        g = det(0.5, 0.5, 0.2, 0.2)
        preds = [det(0.5, 0.5, 0.2, 0.2, 0.3), det(0.51, 0.5, 0.2, 0.2, 0.9)]
        assert greedy_match(preds, [g], 0.5) == [(1, 0)]

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_exhaustive_oracle(self, seed):
        rng = np.random.default_rng(seed)
        preds, gts = random_dets(rng, 5), random_dets(rng, 5)
        thr = 0.2
        assert sorted(greedy_match(preds, gts, thr)) == exhaustive_greedy(preds, gts, thr)

    @pytest.mark.parametrize("seed", range(20))
    def test_threshold_and_uniqueness(self, seed):
        rng = np.random.default_rng(100 + seed)
        preds, gts = random_dets(rng, 8), random_dets(rng, 6)
        thr = float(rng.uniform(0.05, 0.9))
        pairs = greedy_match(preds, gts, thr)
        assert len({j for _, j in pairs}) == len(pairs)
        assert len({i for i, _ in pairs}) == len(pairs)
        assert all(iou(preds[i].box, gts[j].box) >= thr for i, j in pairs)

    def test_empty_inputs(self):
        assert greedy_match([], [det(0.5, 0.5, 0.1, 0.1)], 0.5) == []
        assert greedy_match([det(0.5, 0.5, 0.1, 0.1)], [], 0.5) == []

    @pytest.mark.parametrize("thr", [0.0, -0.1, 1.5])
    def test_threshold_domain(self, thr):
        with pytest.raises(ValueError):
            greedy_match([], [], thr)


class TestEvaluateAp:
    def test_perfect(self):
        rng = np.random.default_rng(1)
        gts = [random_dets(rng, 3, scores=False) for _ in range(2)]
        assert evaluate_ap(gts, gts) == 1.0

    def test_no_predictions(self):
        assert evaluate_ap([[], []], [[det(0.5, 0.5, 0.1, 0.1)], []]) == 0.0

    def test_no_gts(self):
        assert evaluate_ap([[], []], [[], []]) == 1.0
        assert evaluate_ap([[det(0.5, 0.5, 0.1, 0.1)]], [[]]) == 0.0

    def test_half_recall_full_precision(self):
        g = [[det(0.2, 0.2, 0.1, 0.1), det(0.7, 0.7, 0.1, 0.1)], [det(0.3, 0.6, 0.1, 0.1), det(0.8, 0.2, 0.1, 0.1)]]
        preds = [[det(0.2, 0.2, 0.1, 0.1, 0.9)], [det(0.3, 0.6, 0.1, 0.1, 0.8)]]
        # recall 0.25 then 0.5 at precision 1; the 51 levels r <= 0.5 score 1
        assert evaluate_ap(preds, g) == pytest.approx(51 / 101, abs=1e-15)

    def test_hand_pr_curve(self):
        g = [[det(0.2, 0.2, 0.1, 0.1), det(0.7, 0.7, 0.1, 0.1)], [det(0.3, 0.6, 0.1, 0.1)]]
        preds = [
            [det(0.2, 0.2, 0.1, 0.1, 0.9), det(0.5, 0.5, 0.1, 0.1, 0.7)],
            [det(0.3, 0.6, 0.1, 0.1, 0.6), det(0.9, 0.9, 0.1, 0.1, 0.8)],
        ]
        # ranked: TP(0.9) FP(0.8) FP(0.7) TP(0.6) -> recall 1/3,1/3,1/3,2/3; precision 1,1/2,1/3,1/2
        levels = np.linspace(0, 1, 101)
        expected = sum(1.0 if r <= 1 / 3 + 1e-12 else (0.5 if r <= 2 / 3 + 1e-12 else 0.0) for r in levels) / 101
        assert evaluate_ap(preds, g) == pytest.approx(expected, abs=1e-15)

    def test_interpolation_envelope(self):
        recall = np.array([0.5, 0.5, 1.0])
        precision = np.array([1.0, 0.5, 0.75])
        levels = np.linspace(0, 1, 101)
        expected = sum(1.0 if r <= 0.5 + 1e-12 else 0.75 for r in levels) / 101
        assert interpolated_ap(recall, precision) == pytest.approx(expected)

    @pytest.mark.parametrize("seed", range(15))
    def test_monotonicity(self, seed):
        rng = np.random.default_rng(seed)
        gts = [random_dets(rng, 3, scores=False) for _ in range(3)]
        preds = [[det(*d.box, score=float(rng.uniform())) for d in g[:1]] + random_dets(rng, 2) for g in gts]
        base = evaluate_ap(preds, gts)
        # a correct detection on a still-missed gt
        extra = [list(p) for p in preds]
        extra[0].append(det(*gts[0][2].box, score=float(rng.uniform())))
        assert evaluate_ap(extra, gts) >= base - 1e-15
        # a false positive far from every gt
        fp = [list(p) for p in preds]
        fp[1].append(det(0.02, 0.02, 0.01, 0.01, score=float(rng.uniform())))
        assert evaluate_ap(fp, gts) <= base + 1e-15

    def test_scene_count_mismatch(self):
        with pytest.raises(ValueError):
            evaluate_ap([[]], [[], []])
