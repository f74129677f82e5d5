import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segstitch.boxes import BoundingBox, ProposalSet, SafParams, saf_transform
from segstitch.errors import ParameterError
from segstitch.grids import GridSpec
from segstitch.objective import (
    Constraint,
    NGridState,
    QValues,
    SaprState,
    estimate_sigma,
    gaussian_kl,
    kl_total,
    overlap_penalty,
    q_values,
    recon_loss,
    sapr_step,
    warmup_blend,
)


class TestReconLoss:
    def test_perfect_reconstruction(self):
        x = np.random.default_rng(0).random((4, 4, 1))
        pi = np.ones((1, 4, 4))
        assert recon_loss(x, pi, [x], sigma=0.05) == 0.0

    def test_constant_offset_closed_form(self):
        delta, sigma = 0.2, 0.05
        x = np.full((6, 6, 1), 0.5)
        y0 = x - delta
        pi = np.ones((1, 6, 6))
        assert recon_loss(x, pi, [y0], sigma) == pytest.approx(delta**2 / (2 * sigma**2))

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.random((4, 4, 2))
        raw = rng.random((3, 4, 4))
        pi = raw / raw.sum(axis=0)
        layers = [rng.random((4, 4, 2)) for _ in range(3)]
        sigma = 0.1
        expected = 0.0
        for r in range(4):
            for c in range(4):
                for k in range(3):
                    diff = x[r, c] - layers[k][r, c]
                    expected += pi[k, r, c] * float(diff @ diff)
        expected /= 2 * sigma**2 * 16
        assert recon_loss(x, pi, layers, sigma) == pytest.approx(expected)

    def test_tiling_invariance(self):
        rng = np.random.default_rng(2)
        x = rng.random((5, 5, 1))
        raw = rng.random((2, 5, 5))
        pi = raw / raw.sum(axis=0)
        layers = [rng.random((5, 5, 1)) for _ in range(2)]
        tiled_x = np.tile(x, (2, 2, 1))
        tiled_pi = np.tile(pi, (1, 2, 2))
        tiled_layers = [np.tile(l, (2, 2, 1)) for l in layers]
        assert recon_loss(tiled_x, tiled_pi, tiled_layers, 0.05) == pytest.approx(
            recon_loss(x, pi, layers, 0.05)
        )


class TestGaussianKl:
    def test_prior_equals_posterior(self):
        assert gaussian_kl(np.zeros(5), np.ones(5)) == 0.0

    def test_unit_mean_closed_form(self):
        assert gaussian_kl([1.0], [1.0]) == pytest.approx(0.5)

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(3)
        mu = rng.normal(size=20)
        sd = rng.uniform(0.3, 2.0, size=20)
        expected = sum(
            0.5 * (s**2 + m**2 - 1 - math.log(s**2)) for m, s in zip(mu, sd)
        )
        assert gaussian_kl(mu, sd) == pytest.approx(expected)

    def test_rejects_nonpositive_sigma(self):
        with pytest.raises(ParameterError):
            gaussian_kl([0.0], [0.0])

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.floats(-3, 3), min_size=1, max_size=8),
        st.lists(st.floats(0.1, 3), min_size=1, max_size=8),
    )
    def test_nonnegative(self, mu, sd):
        n = min(len(mu), len(sd))
        assert gaussian_kl(mu[:n], sd[:n]) >= -1e-12


class TestKlTotal:
    def test_all_at_prior(self):
        state = NGridState()
        terms, state = kl_total(
            bg=(np.zeros(20), np.ones(20)),
            fg=[(np.zeros(20), np.ones(20))],
            box=[(np.zeros(4), np.ones(4))],
            grid_kl_value=0.0,
            dims=(20, 20, 1),
            state=state,
        )
        assert terms.total_kl == 0.0

    def test_prefactors(self):
        state = NGridState()
        mu = np.ones(20)
        sd = np.ones(20)
        per_dim = 0.5  # KL of (mu=1, sigma=1) per dimension
        terms, state = kl_total(
            bg=(mu, sd),
            fg=[(mu, sd)] * 2,
            box=[(np.ones(4), np.ones(4))] * 2,
            grid_kl_value=3.0,
            dims=(20, 20, 2),
            state=state,
        )
        assert terms.kl_bg == pytest.approx(20 * per_dim / 20)
        assert terms.kl_fg == pytest.approx(2 * 20 * per_dim / (20 * 2))
        assert terms.kl_box == pytest.approx(2 * 4 * per_dim / (4 * 2))
        # first observation: the EMA equals |value|, so the term is +-1
        assert terms.kl_grid == pytest.approx(1.0)
        assert state.ema == pytest.approx(3.0)

    def test_ema_decay(self):
        state = NGridState(decay=0.9).update(2.0)
        state = state.update(4.0)
        assert state.ema == pytest.approx(0.9 * 2.0 + 0.1 * 4.0)

    def test_no_instances(self):
        terms, _ = kl_total(
            bg=(np.zeros(20), np.ones(20)),
            fg=[], box=[], grid_kl_value=1.0, dims=(20, 20, 0), state=NGridState(),
        )
        assert terms.kl_fg == 0.0
        assert terms.kl_box == 0.0


class TestQValues:
    def test_empty_scene(self):
        grid = GridSpec(80, 80, 20, 40)
        q = q_values(np.zeros(grid.coarse_shape), np.ones((1, 80, 80)), [], grid, rec=0.0)
        assert q.density == 0.0
        assert q.area == 0.0

    def test_saturated_full_canvas(self):
        grid = GridSpec(80, 80, 20, 80)
        c = np.zeros(grid.coarse_shape)
        c[0, 0] = 1
        pi = np.zeros((2, 80, 80))
        pi[1] = 1.0
        box = BoundingBox(40, 40, 80, 80)
        q = q_values(c, pi, [box], grid, rec=0.5)
        assert q.area == pytest.approx(1.0)
        assert q.rec == 0.5

    def test_matches_direct_sums(self):
        rng = np.random.default_rng(4)
        grid = GridSpec(40, 40, 10, 20)
        c = (rng.random(grid.coarse_shape) < 0.4).astype(int)
        raw = rng.random((4, 40, 40)) * 0.2
        pi = np.concatenate([1 - raw.sum(axis=0, keepdims=True), raw])
        boxes = [BoundingBox(20, 20, rng.uniform(10, 20), rng.uniform(10, 20)) for _ in range(3)]
        q = q_values(c, pi, boxes, grid, rec=1.2)
        expected_area = 0.5 * raw.sum() / 1600 + 0.5 * sum(b.w * b.h for b in boxes) / 1600
        assert q.density == pytest.approx(c.mean())
        assert q.area == pytest.approx(expected_area)


class TestSaprStep:
    def make_state(self, lam=1.0, q_lo=0.1, q_hi=0.5, step=0.1):
        con = Constraint(lam=lam, q_lo=q_lo, q_hi=q_hi, step=step)
        return SaprState(rec=con, density=con, area=con)

    def test_satisfied_decays_lambda(self):
        state = self.make_state()
        q = QValues(density=0.3, area=0.3, rec=0.3)
        loss, new = sapr_step(q, state, kl=0.0)
        for name in ("rec", "density", "area"):
            assert getattr(new, name).lam < getattr(state, name).lam

    def test_sustained_violation_reaches_ceiling(self):
        # Dyadic step and violation make the closed-form step count exact.
        state = self.make_state(q_lo=0.0, q_hi=0.5, step=0.125)
        q = QValues(density=1.0, area=1.0, rec=1.0)  # v = -0.5
        bound = math.ceil((10 - 1.0) / (0.125 * 0.5))
        steps = 0
        while state.density.lam < 10 and steps <= bound:
            _, state = sapr_step(q, state, kl=0.0)
            steps += 1
        assert state.density.lam == 10.0
        assert steps <= bound

    def test_sustained_satisfaction_reaches_floor(self):
        state = self.make_state()
        q = QValues(density=0.3, area=0.3, rec=0.3)
        for _ in range(200):
            _, state = sapr_step(q, state, kl=0.0)
        assert state.density.lam == pytest.approx(0.1)

    def test_lambda_never_leaves_bounds(self):
        rng = np.random.default_rng(5)
        state = self.make_state()
        for _ in range(300):
            q = QValues(density=rng.random(), area=rng.random() * 2, rec=rng.random() * 2)
            _, state = sapr_step(q, state, kl=rng.random())
            for name in ("rec", "density", "area"):
                assert 0.1 <= getattr(state, name).lam <= 10.0

    def test_update_sign_matches_violation(self):
        state = self.make_state(lam=5.0)
        inside = QValues(density=0.3, area=0.3, rec=0.3)
        _, dec = sapr_step(inside, state, kl=0.0)
        assert dec.density.lam < 5.0
        below = QValues(density=0.0, area=0.0, rec=0.0)
        _, inc = sapr_step(below, state, kl=0.0)
        assert inc.density.lam > 5.0
        # rec has q_lo = 0.1 here; at exactly q_lo the u term vanishes
        edge = QValues(density=0.1, area=0.1, rec=0.1)
        loss_edge, _ = sapr_step(edge, self.make_state(), kl=0.0)
        assert loss_edge == pytest.approx(3 * 1.0 * 0.0)  # u = 0, v = 0 at the corner

    def test_loss_value_formula(self):
        state = self.make_state(lam=2.0, q_lo=0.1, q_hi=0.5)
        q = QValues(density=0.2, area=0.6, rec=0.05)
        loss, _ = sapr_step(q, state, kl=1.5)
        expected = 1.5
        for q_hat in (0.05, 0.2, 0.6):
            u = q_hat * math.copysign(1, q_hat - 0.1)
            v = min(q_hat - 0.1, 0.5 - q_hat)
            expected += 2.0 * u + 2.0 * v
        assert loss == pytest.approx(expected)


class TestOverlapPenalty:
    def test_disjoint_supports(self):
        w = np.zeros((2, 4, 4))
        w[0, :, :2] = 0.8
        w[1, :, 2:] = 0.8
        assert overlap_penalty(w, 1.0) == 0.0

    def test_identical_masks_ordered_pairs(self):
        w = np.zeros((2, 4, 4))
        w[:, 1:3, 1:3] = 1.0  # A = 4 pixels
        assert overlap_penalty(w, 1.0) == pytest.approx(8.0)

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(6)
        w = rng.random((3, 5, 5))
        lam = 0.7
        expected = 0.0
        for k in range(3):
            for kp in range(3):
                if k != kp:
                    expected += (w[k] * w[kp]).sum()
        assert overlap_penalty(w, lam) == pytest.approx(lam * expected)

    def test_zero_iff_disjoint(self):
        rng = np.random.default_rng(7)
        w = rng.random((3, 4, 4)) * (rng.random((3, 4, 4)) < 0.3)
        pen = overlap_penalty(w, 1.0)
        overlapping = ((w > 0).sum(axis=0) > 1).any()
        assert (pen > 0) == bool(overlapping)


def grid_proposals(grid):
    boxes = []
    for iy in range(grid.coarse_h):
        for ix in range(grid.coarse_w):
            boxes.append(saf_transform(np.zeros(4), SafParams.identity(), (ix, iy), grid))
    probs = np.full(grid.coarse_shape, 0.5)
    provisional = np.zeros(grid.coarse_shape, dtype=np.int8)
    return ProposalSet(boxes, probs, provisional, grid)


class TestWarmupBlend:
    def test_zero_fraction_identity(self):
        grid = GridSpec(40, 40, 20, 40)
        props = grid_proposals(grid)
        p = np.random.default_rng(8).random(grid.coarse_shape)
        out = warmup_blend(p, np.zeros(grid.native_shape), props, f_t=0.0)
        assert np.array_equal(out, p)

    def test_bright_blob_gets_larger_probability(self):
        grid = GridSpec(40, 40, 20, 40)
        props = grid_proposals(grid)
        delta = np.zeros(grid.native_shape)
        delta[5:15, 25:35] = 4.0  # residual blob under the (0, 1) cell proposal
        p = np.full(grid.coarse_shape, 0.5)
        out = warmup_blend(p, delta, props, f_t=0.4)
        assert out[0, 1] == out.max()
        assert out[0, 1] == pytest.approx(0.6 * 0.5 + 0.4 * 1.0)

    def test_output_is_valid_prob_field(self):
        rng = np.random.default_rng(9)
        grid = GridSpec(40, 40, 10, 20)
        props = grid_proposals(grid)
        for _ in range(20):
            out = warmup_blend(
                rng.random(grid.coarse_shape), rng.random(grid.native_shape) * 3,
                props, f_t=rng.random(),
            )
            assert (out >= 0).all() and (out <= 1).all()


class TestEstimateSigma:
    def test_two_region_mixture(self):
        rng = np.random.default_rng(10)
        s = 0.05
        img = np.zeros((64, 64))
        img[:, 32:] = 1.0
        img += rng.normal(0, s, img.shape)
        est = estimate_sigma(img)
        assert est.method == "em"
        assert est.value == pytest.approx(s, rel=0.10)

    def test_constant_image_rejected(self):
        with pytest.raises(ParameterError):
            estimate_sigma(np.full((8, 8), 0.3))

    def test_degenerate_falls_back_to_otsu(self):
        # Two spikes with zero within-class variance degenerate the EM fit.
        img = np.zeros((8, 8))
        img[:, 4:] = 1.0
        est = estimate_sigma(img)
        assert est.method in ("em", "otsu")
        assert est.value < 0.5
