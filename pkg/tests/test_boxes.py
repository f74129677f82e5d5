import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segstitch.boxes import (
    BoundingBox,
    ProposalSet,
    SafParams,
    nms,
    overlap,
    saf_transform,
    select_top_k,
)
from segstitch.errors import ParameterError
from segstitch.grids import GridSpec


GRID = GridSpec(80, 80, 20, 40)


def logit(t):
    t = np.asarray(t, dtype=np.float64)
    return np.log(t / (1 - t))


def random_proposals(rng, grid=GRID):
    boxes = []
    for iy in range(grid.coarse_h):
        for ix in range(grid.coarse_w):
            boxes.append(saf_transform(rng.normal(size=4), _spread_params(), (ix, iy), grid))
    probs = rng.random(grid.coarse_shape)
    provisional = (rng.random(grid.coarse_shape) < 0.5).astype(np.int8)
    return ProposalSet(boxes=boxes, probs=probs, provisional=provisional, grid=grid)


def _spread_params():
    # Non-trivial affine map so fuzzed latents explore the whole box range.
    return SafParams(bias=np.array([0.0, 0.0, -1.0, 1.0]), weight=np.eye(4) * 2.0)


class TestSafTransform:
    def test_zero_params_center_cell(self):
        box = saf_transform(np.array([3.0, -2.0, 1.0, 0.0]), SafParams.identity(), (0, 0), GRID)
        assert box.cx == pytest.approx(10.0)  # middle of first 20px cell
        assert box.cy == pytest.approx(10.0)
        assert box.w == pytest.approx(30.0)  # (20 + 40) / 2
        assert box.h == pytest.approx(30.0)

    def test_sigmoid_saturation_floor(self):
        params = SafParams(bias=np.zeros(4), weight=np.eye(4))
        box = saf_transform(np.array([0.0, 0.0, -50.0, 0.0]), params, (0, 0), GRID)
        assert box.w == pytest.approx(GRID.min_obj_px, abs=1e-12)

    def test_hand_evaluated_case(self):
        params = SafParams(bias=logit([0.25, 0.5, 0.1, 0.9]), weight=np.zeros((4, 4)))
        box = saf_transform(np.zeros(4), params, (1, 2), GRID)
        assert box.cx == pytest.approx(25.0)
        assert box.cy == pytest.approx(50.0)
        assert box.w == pytest.approx(22.0)
        assert box.h == pytest.approx(38.0)

    def test_rejects_out_of_grid_index(self):
        with pytest.raises(ParameterError):
            saf_transform(np.zeros(4), SafParams.identity(), (4, 0), GRID)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-40, 40), min_size=4, max_size=4))
    def test_box_invariants_under_fuzz(self, v):
        box = saf_transform(np.array(v), _spread_params(), (2, 3), GRID)
        assert GRID.min_obj_px <= box.w <= GRID.max_obj_px
        assert GRID.min_obj_px <= box.h <= GRID.max_obj_px
        assert 0 <= box.cx <= GRID.width_px
        assert 0 <= box.cy <= GRID.height_px


class TestOverlap:
    def test_identical(self):
        a = BoundingBox(10, 10, 4, 4)
        assert overlap(a, a) == (1.0, 1.0)

    def test_engulfed_double_size(self):
        small = BoundingBox(0, 0, 2, 2)
        big = BoundingBox(0, 0, 4, 4)
        iomin, iou = overlap(small, big)
        assert iomin == pytest.approx(1.0)
        assert iou == pytest.approx(0.25)

    def test_disjoint(self):
        assert overlap(BoundingBox(0, 0, 2, 2), BoundingBox(10, 0, 2, 2)) == (0.0, 0.0)

    def test_zero_area_rejected(self):
        with pytest.raises(ParameterError):
            overlap(BoundingBox(0, 0, 0, 2), BoundingBox(0, 0, 2, 2))

    @settings(max_examples=80, deadline=None)
    @given(
        st.tuples(*[st.floats(-10, 10) for _ in range(2)], *[st.floats(0.5, 8) for _ in range(2)]),
        st.tuples(*[st.floats(-10, 10) for _ in range(2)], *[st.floats(0.5, 8) for _ in range(2)]),
    )
    def test_symmetry_and_ordering(self, ta, tb):
        a, b = BoundingBox(*ta), BoundingBox(*tb)
        ab = overlap(a, b)
        ba = overlap(b, a)
        assert ab == pytest.approx(ba)
        iomin, iou = ab
        assert 0 <= iou <= iomin <= 1


class TestNms:
    def test_coincident_pair_keeps_higher(self):
        grid = GridSpec(40, 40, 20, 40)  # coarse 2x2
        box = BoundingBox(20, 20, 25, 25)
        far = BoundingBox(5, 5, 20, 20)
        boxes = [box, box, far, far]
        probs = np.array([[0.9, 0.8], [0.1, 0.2]])
        provisional = np.array([[1, 1], [0, 0]])
        out = nms(ProposalSet(boxes, probs, provisional, grid), alpha=0.3)
        assert out.tolist() == [[1, 0], [0, 0]]

    def test_no_conflicts_is_identity(self):
        rng = np.random.default_rng(0)
        prop = random_proposals(rng)
        # Shrink every box far below the cell spacing: no overlaps at all.
        tiny = [BoundingBox(b.cx, b.cy, 1.0, 1.0) for b in prop.boxes]
        prop = ProposalSet(tiny, prop.probs, prop.provisional, prop.grid)
        out = nms(prop, alpha=0.3)
        assert np.array_equal(out, prop.provisional)

    def test_rejects_bad_alpha(self):
        rng = np.random.default_rng(1)
        with pytest.raises(ParameterError):
            nms(random_proposals(rng), alpha=0.0)

    def test_survivor_pairwise_iomin_bound(self):
        rng = np.random.default_rng(2)
        for trial in range(100):
            prop = random_proposals(rng)
            alpha = rng.choice([0.3, 0.5])
            out = nms(prop, alpha=alpha).ravel()
            kept = np.flatnonzero(out)
            for i, a in enumerate(kept):
                for b in kept[i + 1 :]:
                    iomin, _ = overlap(prop.boxes[a], prop.boxes[b])
                    assert iomin <= alpha + 1e-12

    def test_idempotence(self):
        rng = np.random.default_rng(3)
        for trial in range(50):
            prop = random_proposals(rng)
            once = nms(prop, alpha=0.3)
            again = nms(ProposalSet(prop.boxes, prop.probs, once, prop.grid), alpha=0.3)
            assert np.array_equal(once, again)

    def test_on_points_take_precedence(self):
        # A provisional-off proposal can never displace an overlapping
        # provisional-on one, whatever the probabilities.
        grid = GridSpec(40, 40, 20, 40)
        box = BoundingBox(20, 20, 30, 30)
        far = BoundingBox(5, 5, 20, 20)
        boxes = [box, box, far, far]
        probs = np.array([[0.99, 0.01], [0.5, 0.5]])
        provisional = np.array([[0, 1], [0, 0]])
        out = nms(ProposalSet(boxes, probs, provisional, grid), alpha=0.3)
        assert out.tolist() == [[0, 1], [0, 0]]


class TestSelectTopK:
    def test_padding_with_zero_coefficients(self):
        c = np.array([[1, 0, 1], [0, 0, 1]])
        scores = c + np.array([[0.9, 0.5, 0.8], [0.2, 0.1, 0.7]])
        indices, coeffs = select_top_k(c, scores, k_max=10)
        assert len(indices) == len(coeffs) == 10
        assert coeffs[:3] == [1, 1, 1]
        assert sum(coeffs) == 3
        assert indices[:3] == [0, 2, 5]  # descending score among present points
        assert indices[6:] == [-1] * 4

    def test_descending_order_and_tiebreak(self):
        c = np.zeros((1, 4), dtype=np.int8)
        scores = np.array([[0.5, 0.7, 0.5, 0.2]])
        indices, coeffs = select_top_k(c, scores, k_max=4)
        assert indices == [1, 0, 2, 3]
        assert coeffs == [0, 0, 0, 0]

    def test_k_max_below_survivor_count(self):
        c = np.ones((1, 4), dtype=np.int8)
        scores = np.array([[1.1, 1.9, 1.5, 1.3]])
        indices, coeffs = select_top_k(c, scores, k_max=2)
        assert indices == [1, 2]
        assert coeffs == [1, 1]
