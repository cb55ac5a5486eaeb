"""Tests for spotlight statistics, CSP losses, and the inner descent loop."""

import numpy as np
import pytest

from slp.autodiff import ContractError, Tensor, softmax_axis, stop_gradient, sum_, mul
from slp.spatial_prior import (
    BiasState,
    PositionGrid,
    SpotlightStats,
    anneal_lr,
    compose_bias,
    compute_distribution,
    csp_total_loss,
    descend_bias,
    loss_distinct,
    loss_norm,
    meta_defaults,
    normalized_init,
    run_csp,
)

from helpers import check_gradients, finite_difference, rng_for


class TestPositionGrid:
    def test_row_major_enumeration(self):
        grid = PositionGrid(gx=3, gy=2)
        expected = [(0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (2, 1)]
        np.testing.assert_array_equal(grid.positions(), expected)

    def test_rejects_empty(self):
        with pytest.raises(ContractError):
            PositionGrid(gx=0, gy=3)


class TestComputeDistribution:
    def test_point_mass(self):
        grid = PositionGrid(gx=5, gy=4)
        attention = np.zeros((1, grid.n))
        attention[0, 2 * 5 + 3] = 1.0  # position (x=3, y=2)
        stats = compute_distribution(Tensor(attention), grid)
        np.testing.assert_allclose(stats.means.data, [[3.0, 2.0]], atol=1e-12)
        np.testing.assert_allclose(stats.variances.data, [0.0], atol=1e-12)

    def test_uniform_gives_centroid(self):
        grid = PositionGrid(gx=5, gy=3)
        attention = Tensor(np.full((2, grid.n), 1.0 / grid.n))
        stats = compute_distribution(attention, grid)
        np.testing.assert_allclose(stats.means.data, [[2.0, 1.0]] * 2, atol=1e-12)

    def test_two_point_mass(self):
        grid = PositionGrid(gx=4, gy=4)
        attention = np.zeros((1, grid.n))
        attention[0, 0] = 0.5  # (0, 0)
        attention[0, 2] = 0.5  # (2, 0)
        stats = compute_distribution(Tensor(attention), grid)
        np.testing.assert_allclose(stats.means.data, [[1.0, 0.0]], atol=1e-12)
        np.testing.assert_allclose(stats.variances.data, [1.0], atol=1e-12)

    def test_zero_row_rejected(self):
        grid = PositionGrid(gx=2, gy=2)
        with pytest.raises(ContractError):
            compute_distribution(Tensor(np.zeros((1, 4))), grid)

    def test_means_stay_in_hull_and_variances_nonneg(self):
        grid = PositionGrid(gx=6, gy=5)
        rng = rng_for(30)
        attention = softmax_axis(Tensor(rng.uniform(-3, 3, (4, grid.n))), 0)
        stats = compute_distribution(attention, grid)
        assert (stats.means.data[:, 0] >= 0).all() and (stats.means.data[:, 0] <= 5).all()
        assert (stats.means.data[:, 1] >= 0).all() and (stats.means.data[:, 1] <= 4).all()
        assert (stats.variances.data >= 0).all()

    def test_differentiable(self):
        grid = PositionGrid(gx=3, gy=3)
        rng = rng_for(31)
        logits = Tensor(rng.uniform(-1, 1, (2, grid.n)), requires_grad=True)

        def build():
            att = softmax_axis(logits, 0)
            stats = compute_distribution(att, grid)
            return sum_(stats.variances) + sum_(mul(stats.means, stats.means))

        check_gradients(build, [logits])


class TestLossDistinct:
    def test_single_slot_is_zero(self):
        stats = SpotlightStats(means=Tensor([[1.0, 2.0]]), variances=Tensor([0.5]))
        assert loss_distinct(stats).item() == 0.0

    def test_coincident_means_score_one_per_pair(self):
        stats = SpotlightStats(
            means=Tensor([[1.0, 1.0]] * 3), variances=Tensor([0.3, 0.7, 0.1])
        )
        assert loss_distinct(stats).item() == pytest.approx(3.0, rel=1e-12)

    def test_hand_value(self):
        stats = SpotlightStats(
            means=Tensor([[0.0, 0.0], [2.0, 0.0]]), variances=Tensor([1.0, 1.0])
        )
        assert loss_distinct(stats).item() == pytest.approx(np.exp(-2.0), rel=1e-6)

    def test_translation_invariance(self):
        rng = rng_for(32)
        means = rng.uniform(0, 7, (5, 2))
        variances = rng.uniform(0.1, 3, 5)
        base = loss_distinct(SpotlightStats(Tensor(means), Tensor(variances))).item()
        for shift in ((3.0, -2.0), (117.0, 55.0)):
            moved = loss_distinct(
                SpotlightStats(Tensor(means + np.array(shift)), Tensor(variances))
            ).item()
            assert abs(moved - base) < 1e-12

    def test_slot_permutation_invariance(self):
        rng = rng_for(33)
        means = rng.uniform(0, 5, (4, 2))
        variances = rng.uniform(0.1, 2, 4)
        perm = rng.permutation(4)
        a = loss_distinct(SpotlightStats(Tensor(means), Tensor(variances))).item()
        b = loss_distinct(SpotlightStats(Tensor(means[perm]), Tensor(variances[perm]))).item()
        assert a == pytest.approx(b, rel=1e-12)


class TestLossNorm:
    def test_zero(self):
        assert loss_norm(Tensor(np.zeros((3, 5)))).item() == 0.0

    def test_hand_value(self):
        assert loss_norm(Tensor(np.full((2, 4), 0.1))).item() == pytest.approx(0.08, rel=1e-12)

    def test_quadratic_homogeneity(self):
        rng = rng_for(34)
        b = rng.uniform(-1, 1, (3, 4))
        base = loss_norm(Tensor(b)).item()
        assert loss_norm(Tensor(3.0 * b)).item() == pytest.approx(9.0 * base, rel=1e-12)


class TestCspTotalLoss:
    def test_single_slot_lambda_zero(self):
        grid = PositionGrid(gx=3, gy=3)
        rng = rng_for(35)
        logits = Tensor(rng.uniform(-1, 1, (1, grid.n)))
        bias = Tensor(rng.uniform(-1, 1, (1, grid.n)))
        assert csp_total_loss(logits, bias, grid, 0.0).item() == 0.0

    def test_zero_bias_reduces_to_distinct(self):
        grid = PositionGrid(gx=4, gy=3)
        rng = rng_for(36)
        logits = Tensor(rng.uniform(-1, 1, (3, grid.n)))
        total = csp_total_loss(logits, Tensor(np.zeros((3, grid.n))), grid, 0.1).item()
        unbiased = loss_distinct(
            compute_distribution(softmax_axis(logits, 0), grid)
        ).item()
        assert total == pytest.approx(unbiased, rel=1e-12)

    def test_gradient_matches_finite_differences(self):
        grid = PositionGrid(gx=4, gy=4)
        rng = rng_for(37)
        logits = Tensor(rng.uniform(-1, 1, (3, grid.n)))
        bias = Tensor(rng.uniform(-0.5, 0.5, (3, grid.n)), requires_grad=True)
        check_gradients(lambda: csp_total_loss(logits, bias, grid, 0.1), [bias])

    def test_shape_mismatch(self):
        grid = PositionGrid(gx=2, gy=2)
        with pytest.raises(ContractError):
            csp_total_loss(Tensor(np.zeros((2, 4))), Tensor(np.zeros((3, 4))), grid, 0.1)


class TestAnnealLr:
    def test_first_step_full(self):
        assert anneal_lr(0.7, 0, 5) == pytest.approx(0.7)

    def test_schedule_value(self):
        assert anneal_lr(1.0, 4, 5) == pytest.approx(0.2)

    def test_single_step(self):
        assert anneal_lr(1.0, 0, 1) == pytest.approx(1.0)

    def test_out_of_range(self):
        with pytest.raises(ContractError):
            anneal_lr(1.0, 5, 5)
        with pytest.raises(ContractError):
            anneal_lr(1.0, -1, 5)


def test_meta_defaults_match_sweep_table():
    alpha_lr, lambda_norm, t_spat_candidates = meta_defaults()
    assert alpha_lr == 1.0
    assert lambda_norm == 0.1
    assert t_spat_candidates == (1, 5, 10, 20, 25)
    assert 1 in t_spat_candidates  # a single inner iteration is a valid setting


def _state(init, alpha_lr=0.1, t_spat=3, lambda_norm=0.1):
    return BiasState(init=init, alpha_lr=alpha_lr, t_spat=t_spat, lambda_norm=lambda_norm)


class TestRunCsp:
    def test_zero_steps_returns_normalized_init(self):
        grid = PositionGrid(gx=3, gy=3)
        rng = rng_for(38)
        init = Tensor(rng.normal(0, 1, (2, grid.n)), requires_grad=True)
        state = _state(init, t_spat=0)
        out = run_csp(Tensor(rng.uniform(-1, 1, (2, grid.n))), grid, state)
        expected = init.data / np.sqrt((init.data ** 2).sum())
        np.testing.assert_allclose(out.data, expected, rtol=1e-12)
        assert state.loss_trace == []

    def test_zero_init_stays_zero(self):
        grid = PositionGrid(gx=3, gy=3)
        init = Tensor(np.zeros((2, grid.n)), requires_grad=True)
        out = run_csp(Tensor(np.ones((2, grid.n))), grid, _state(init, t_spat=0))
        np.testing.assert_array_equal(out.data, np.zeros((2, grid.n)))

    def test_trace_has_t_spat_entries(self):
        grid = PositionGrid(gx=4, gy=4)
        rng = rng_for(39)
        init = Tensor(rng.normal(0, 0.02, (3, grid.n)), requires_grad=True)
        state = _state(init, t_spat=5)
        run_csp(Tensor(rng.uniform(-1, 1, (3, grid.n))), grid, state)
        assert len(state.loss_trace) == 5
        for ld, ln, total in state.loss_trace:
            assert total == pytest.approx(ld + state.lambda_norm * ln, rel=1e-9)

    def test_descent_property_small_lr(self):
        grid = PositionGrid(gx=8, gy=8)
        good = 0
        for trial in range(20):
            rng = rng_for(40, trial)
            init = Tensor(rng.normal(0, 0.02, (4, grid.n)), requires_grad=True)
            state = _state(init, alpha_lr=0.01, t_spat=10)
            run_csp(Tensor(rng.uniform(-2, 2, (4, grid.n))), grid, state)
            totals = [t for _, _, t in state.loss_trace]
            if all(b <= a + 1e-12 for a, b in zip(totals, totals[1:])):
                good += 1
        assert good >= 19

    def test_straight_through_is_value_identity(self):
        # the returned bias must equal the plain numeric descent trajectory
        grid = PositionGrid(gx=5, gy=4)
        rng = rng_for(41)
        init = Tensor(rng.normal(0, 0.5, (3, grid.n)), requires_grad=True)
        logits = Tensor(rng.uniform(-1, 1, (3, grid.n)))
        state = _state(init, alpha_lr=0.5, t_spat=4)
        out = run_csp(logits, grid, state)
        plain = normalized_init(init).data
        increments = descend_bias(logits.data, plain, grid, _state(init, alpha_lr=0.5, t_spat=4))
        for inc in increments:  # same evaluation order as the composed graph
            plain = plain - inc
        np.testing.assert_array_equal(out.data, plain)

    def test_outer_gradient_reaches_init_param(self):
        grid = PositionGrid(gx=3, gy=3)
        rng = rng_for(42)
        init = Tensor(rng.normal(0, 0.5, (2, grid.n)), requires_grad=True)
        logits = Tensor(rng.uniform(-1, 1, (2, grid.n)))
        weights = Tensor(rng.uniform(-1, 1, (2, grid.n)))
        state = _state(init, alpha_lr=1.0, t_spat=1)
        out = run_csp(logits, grid, state)
        downstream = sum_(mul(softmax_axis(out + logits, 0), weights))
        downstream.backward()
        assert init.grad is not None
        assert np.abs(init.grad).max() > 0

    @pytest.mark.parametrize("t_spat", [0, 1, 3])
    def test_outer_gradient_matches_surrogate_fd(self, t_spat):
        """FD oracle on the straight-through surrogate: every value that
        crossed a stop_gradient (and every descent increment) is frozen at its
        forward value, so for t_spat >= 1 the returned bias acts on the init
        parameter as (frozen constant + init)."""
        grid = PositionGrid(gx=3, gy=3)
        rng = rng_for(43, t_spat)
        init = Tensor(rng.normal(0, 0.5, (2, grid.n)), requires_grad=True)
        logits = Tensor(rng.uniform(-1, 1, (2, grid.n)))
        weights = Tensor(rng.uniform(-1, 1, (2, grid.n)))
        state = _state(init, alpha_lr=0.3, t_spat=t_spat)

        def downstream_from(bias):
            return sum_(mul(softmax_axis(bias + logits, 0), weights))

        out = run_csp(logits, grid, state)
        init.zero_grad()
        downstream_from(out).backward()

        if t_spat == 0:
            # no stop_gradient in play: the init-normalization path is the
            # true function, so plain FD applies
            surrogate = lambda: downstream_from(normalized_init(init)).item()
        else:
            frozen = Tensor(out.data - init.data)
            surrogate = lambda: downstream_from(frozen + init).item()
        numeric = finite_difference(surrogate, init.data)
        np.testing.assert_allclose(init.grad, numeric, rtol=1e-3, atol=1e-8)

    def test_slot_permutation_equivariance(self):
        grid = PositionGrid(gx=4, gy=4)
        rng = rng_for(44)
        init_v = rng.normal(0, 0.3, (4, grid.n))
        logits_v = rng.uniform(-1, 1, (4, grid.n))
        perm = rng.permutation(4)
        out = run_csp(Tensor(logits_v), grid, _state(Tensor(init_v, requires_grad=True), t_spat=3))
        out_p = run_csp(
            Tensor(logits_v[perm]), grid, _state(Tensor(init_v[perm], requires_grad=True), t_spat=3)
        )
        np.testing.assert_allclose(out_p.data, out.data[perm], rtol=1e-9, atol=1e-12)

    def test_shape_validation(self):
        grid = PositionGrid(gx=2, gy=2)
        init = Tensor(np.zeros((2, 4)), requires_grad=True)
        with pytest.raises(ContractError):
            run_csp(Tensor(np.zeros((3, 4))), grid, _state(init))


class TestBiasStateValidation:
    def test_rejects_bad_settings(self):
        init = Tensor(np.zeros((2, 4)))
        with pytest.raises(ContractError):
            BiasState(init=init, alpha_lr=0.0, t_spat=1, lambda_norm=0.1)
        with pytest.raises(ContractError):
            BiasState(init=init, alpha_lr=1.0, t_spat=-1, lambda_norm=0.1)
        with pytest.raises(ContractError):
            BiasState(init=init, alpha_lr=1.0, t_spat=1, lambda_norm=-0.5)


def test_normalized_init_gradient():
    rng = rng_for(45)
    init = Tensor(rng.normal(0, 1, (2, 6)), requires_grad=True)
    w = Tensor(rng.uniform(-1, 1, (2, 6)))
    check_gradients(lambda: sum_(mul(normalized_init(init), w)), [init])
