import numpy as np
import pytest

from fsdetr.harness.config import RunConfig
from fsdetr.harness.pipeline import build_pipeline
from fsdetr.harness.scenes import gen_synthetic_scene
from fsdetr.harness.train import AdamW, assign_targets, read_curve, scene_loss, train_toy, write_curve
from fsdetr.tensor import Tensor

SMALL = RunConfig(
    shab=True, da_aifi=True, fsfpn_cfsb=True, widths="4,8,8,16,16", hidden=8, heads=2, points=2,
    repc3_depth=1, n_scenes=2, batch=2, steps=3,
)


class TestAdamW:
    def test_first_step_moves_by_lr(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        p.grad = np.array([0.5, -3.0])
        opt = AdamW([p], lr=0.1, weight_decay=0.0)
        opt.step()
        np.testing.assert_allclose(p.data, [0.9, -1.9], atol=1e-7)

    def test_decoupled_decay(self):
        p = Tensor(np.array([2.0]), requires_grad=True)
        p.grad = np.array([0.0])
        AdamW([p], lr=0.1, weight_decay=0.5).step()
        assert p.data[0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)

    def test_minimizes_quadratic(self):
        p = Tensor(np.array([3.0, -4.0]), requires_grad=True)
        opt = AdamW([p], lr=0.05, weight_decay=0.0)
        for _ in range(500):
            p.grad = 2 * p.data
            opt.step()
        assert np.abs(p.data).max() < 0.05


class TestTargets:
    def test_every_gt_gets_one_query(self):
        cfg = SMALL
        model = build_pipeline(cfg)
        scene = gen_synthetic_scene(4, 5)
        pairs = assign_targets(model(scene.image), scene, cfg.match_iou)
        assert sorted(g for _, g in pairs) == list(range(scene.placed))
        assert len({q for q, _ in pairs}) == len(pairs)

    def test_empty_scene_loss_is_classification_only(self):
        model = build_pipeline(SMALL)
        scene = gen_synthetic_scene(0, 0)
        terms = scene_loss(model(scene.image), scene, SMALL)
        assert float(terms.l1.data) == 0.0 and float(terms.iou.data) == 0.0
        assert float(terms.total.data) == pytest.approx(2.0 * float(terms.cls.data))


class TestTrainToy:
    def test_single_step(self):
        _, res = train_toy(SMALL.replace(steps=1))
        assert len(res.curve) == 1

    def test_zero_lr_constant(self):
        _, res = train_toy(SMALL.replace(lr=0.0, weight_decay=0.0))
        assert np.all(res.losses == res.losses[0])

    def test_deterministic(self):
        _, a = train_toy(SMALL)
        _, b = train_toy(SMALL)
        assert a.curve == b.curve
        for k in a.state:
            np.testing.assert_array_equal(a.state[k], b.state[k])

    def test_loss_decreases(self):
        _, res = train_toy(SMALL.replace(steps=15))
        assert res.losses[-1] < res.losses[0]

    def test_nan_aborts_with_term_name(self):
        model = build_pipeline(SMALL)
        model.head.bias.data[0] = np.nan
        with pytest.raises(FloatingPointError, match="cls"):
            train_toy(SMALL, model=model)

    def test_smoothed(self):
        _, res = train_toy(SMALL.replace(steps=4))
        first, last = res.smoothed(2)
        assert first == pytest.approx(res.losses[:2].mean()) and last == pytest.approx(res.losses[2:].mean())


def test_curve_csv_round_trip(tmp_path):
    curve = [{"step": 0, "loss": 1.25, "cls": 0.5, "l1": 0.1, "iou": 0.0625}, {"step": 1, "loss": 1 / 3, "cls": 0.0, "l1": 0.0, "iou": 0.0}]
    write_curve(tmp_path / "loss.csv", curve)
    assert (tmp_path / "loss.csv").read_text().splitlines()[0] == "step,loss,cls,l1,iou"
    assert read_curve(tmp_path / "loss.csv") == curve
