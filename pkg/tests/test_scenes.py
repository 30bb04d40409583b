import numpy as np
import pytest

from fsdetr.harness.scenes import Detection, gen_synthetic_scene, make_dataset
from fsdetr.losses import Box


class TestGenSyntheticScene:
    def test_empty(self):
        s = gen_synthetic_scene(3, 0)
        assert s.gt == [] and s.image.shape == (3, 64, 64)
        assert s.image.data.max() < 0.75

    def test_deterministic(self):
        a, b = gen_synthetic_scene(11, 4), gen_synthetic_scene(11, 4)
        np.testing.assert_array_equal(a.image.data, b.image.data)
        assert a.gt == b.gt
        assert not np.array_equal(a.image.data, gen_synthetic_scene(12, 4).image.data)

    @pytest.mark.parametrize("seed", range(10))
    def test_boxes_inside_canvas(self, seed):
        s = gen_synthetic_scene(seed, 5, canvas=128)
        assert s.placed == 5
        b = s.box_array()
        assert np.all(b[:, :2] - b[:, 2:] / 2 >= 0) and np.all(b[:, :2] + b[:, 2:] / 2 <= 1)

    @pytest.mark.parametrize("seed", range(5))
    def test_footprints_match_boxes(self, seed):
        s = gen_synthetic_scene(seed, 4, (4, 10), canvas=64)
        bright = s.image.data.min(axis=0) > 0.6
        mask = np.zeros_like(bright)
        for d in s.gt:
            x1, y1, x2, y2 = (np.array(d.box.corners()) * 64).round().astype(int)
            assert 4 <= x2 - x1 <= 10 and 4 <= y2 - y1 <= 10
            mask[y1:y2, x1:x2] = True
        np.testing.assert_array_equal(bright, mask)

    def test_crowded_scene_reports_shortfall(self):
        s = gen_synthetic_scene(0, 200, (10, 12), canvas=32, max_tries=50)
        assert s.requested == 200 and 0 < s.placed < 200

    @pytest.mark.parametrize("kw", [dict(n_objects=-1), dict(n_objects=1, size_range_px=(0, 4)), dict(n_objects=1, size_range_px=(8, 100))])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            gen_synthetic_scene(0, **kw)


class TestDataset:
    def test_distinct_deterministic_scenes(self):
        a = make_dataset(5, 3, 2, (4, 8), 64)
        b = make_dataset(5, 3, 2, (4, 8), 64)
        assert [s.seed for s in a] == [s.seed for s in b]
        assert len({s.seed for s in a}) == 3


def test_detection_rows():
    d = Detection(0, 0.5, Box(0.1, 0.2, 0.3, 0.4))
    assert Detection.from_list(d.as_list()) == d
    with pytest.raises(ValueError):
        Detection.from_list([0, 0.5, 0.1])
