"""Tests for the joint and sequential distal workflows."""

import math

import numpy as np
import pytest
from scipy.special import logit

from dyad_irt.design import make_round_robin
from dyad_irt.inference import PosteriorDraws
from dyad_irt.model_spec import DistalMode, ModelSpec
from dyad_irt.utils.errors import InvalidArgumentError, InvalidStateError
from dyad_irt.workflows import fit_joint, fit_sequential_mi, imputation_indices, pool_imputations, rubin_pool

from .conftest import create_data, create_fast_mcmc

SLOPES_PINNED = {f"b{j}": 0.0 for j in range(1, 10)}


def measurement_with_latents(
    n_latents: int, *, chains: int = 2, retained: int = 5, seed: int = 0, scale: float = 1.0
) -> PosteriorDraws:
    """Bare measurement draws that only carry retained latent draws."""
    rng = np.random.default_rng(seed)
    return PosteriorDraws(
        names=(),
        draws=np.zeros((chains, retained, 0)),
        iterations=np.arange(retained),
        latent_draws=scale * rng.normal(size=(chains, retained, n_latents)),
    )


class TestRubinPool:
    """Test Rubin's rules."""

    def test_two_imputations(self) -> None:
        """Test pooled estimate, variance components and degrees of freedom."""
        pooled = rubin_pool(("b0",), np.array([[1.0], [3.0]]), np.array([[0.5], [1.5]]))
        row = pooled["b0"]
        assert row["estimate"] == pytest.approx(2.0)
        assert row["within"] == pytest.approx(1.0)
        assert row["between"] == pytest.approx(2.0)
        assert row["total"] == pytest.approx(4.0)
        assert row["df"] == pytest.approx(1.0 / 0.75**2)
        assert row["lower"] < 2.0 < row["upper"]
        assert pooled.n_imputations == 2

    def test_no_between_variance(self) -> None:
        """Test that identical imputations give the complete-data degrees of freedom."""
        pooled = rubin_pool(("b0",), np.ones((4, 1)), np.full((4, 1), 0.25), complete_df=29.0)
        assert pooled["b0"]["between"] == 0.0
        assert pooled["b0"]["total"] == pytest.approx(0.25)
        assert pooled["b0"]["df"] == pytest.approx(30.0 / 32.0 * 29.0)

    def test_needs_two_imputations(self) -> None:
        """Test that a single imputation cannot be pooled."""
        with pytest.raises(InvalidArgumentError, match="at least 2"):
            rubin_pool(("b0",), np.array([[1.0]]), np.array([[0.5]]))

    def test_frame_columns(self) -> None:
        """Test the pooled table layout."""
        frame = rubin_pool(("b0", "b1"), np.ones((3, 2)), np.ones((3, 2))).to_frame()
        assert list(frame.columns) == ["parameter", "estimate", "within", "between", "total", "df", "lower", "upper"]
        assert frame["parameter"].tolist() == ["b0", "b1"]


class TestImputationIndices:
    """Test the choice of imputed latent draws."""

    def test_equally_spaced(self) -> None:
        """Test positions spread evenly over the chain-major draws."""
        assert imputation_indices(2, 5, 4) == [(0, 1), (0, 3), (1, 1), (1, 3)]
        assert len(set(imputation_indices(4, 1000, 20))) == 20

    def test_too_many_imputations(self) -> None:
        """Test that more imputations than draws are rejected."""
        with pytest.raises(InvalidArgumentError):
            imputation_indices(2, 3, 7)


class TestPoolImputations:
    """Test the second stage of the sequential fit."""

    def test_intercept_only_is_logit_of_base_rate(self) -> None:
        """Test that with every slope pinned at 0 the intercept is the logit of the outcome mean."""
        data = create_data(make_round_robin(6), distal=True)
        spec = ModelSpec(distal=DistalMode.SEQUENTIAL, fixed=SLOPES_PINNED)
        measurement = measurement_with_latents(2 * 6 + 2 * 15)
        pooled = pool_imputations(spec, data, measurement, 4)
        assert data.distal is not None
        rate = data.distal.outcome.mean()
        n = data.distal.outcome.size
        assert pooled.names == ("b0",)
        assert pooled["b0"]["estimate"] == pytest.approx(logit(rate), abs=1e-6)
        assert pooled["b0"]["between"] == pytest.approx(0.0, abs=1e-12)
        assert pooled["b0"]["within"] == pytest.approx(1.0 / (n * rate * (1 - rate)), rel=1e-4)
        assert pooled.n_dropped == 0

    @pytest.mark.parametrize("scale", [0.0, 1e-9])
    def test_uninformative_latents_give_zero_slopes(self, scale: float) -> None:
        """Test that free slopes on latents without spread stay at 0 and b0 is the logit of the outcome mean."""
        data = create_data(make_round_robin(6), distal=True)
        spec = ModelSpec(distal=DistalMode.SEQUENTIAL)
        measurement = measurement_with_latents(2 * 6 + 2 * 15, scale=scale)
        pooled = pool_imputations(spec, data, measurement, 4)
        assert data.distal is not None
        assert pooled.names == tuple(f"b{j}" for j in range(10))
        assert pooled["b0"]["estimate"] == pytest.approx(logit(data.distal.outcome.mean()), abs=1e-6)
        np.testing.assert_array_equal(pooled.estimate[1:], 0.0)
        assert pooled.n_dropped == 0

    def test_needs_latent_draws(self) -> None:
        """Test that the measurement fit must have kept its latent draws."""
        data = create_data(distal=True)
        measurement = PosteriorDraws(names=(), draws=np.zeros((2, 3, 0)), iterations=np.arange(3))
        with pytest.raises(InvalidStateError):
            pool_imputations(ModelSpec(distal=DistalMode.SEQUENTIAL), data, measurement, 2)

    def test_needs_distal_outcomes(self) -> None:
        """Test that the sequential fit needs distal outcomes."""
        with pytest.raises(InvalidArgumentError, match="distal"):
            fit_sequential_mi(ModelSpec(distal=DistalMode.SEQUENTIAL), create_data(), create_fast_mcmc())

    @pytest.mark.slow
    def test_sequential_fit(self) -> None:
        """Test a short measurement fit followed by pooled regressions."""
        data = create_data(make_round_robin(8), distal=True)
        spec = ModelSpec(distal=DistalMode.SEQUENTIAL, distal_interactions=False, exchangeable_distal=True)
        pooled = fit_sequential_mi(spec, data, create_fast_mcmc(), imputations=4)
        assert pooled.names == ("b0", "b1=b2", "b3=b4", "b5=b6")
        assert pooled.n_imputations + pooled.n_dropped == 4
        assert np.all(np.isfinite(pooled.estimate))
        assert np.all(pooled.total >= pooled.within)


class TestFitJoint:
    """Test the joint workflow guards."""

    def test_needs_joint_mode(self) -> None:
        """Test that fit_joint refuses a measurement-only spec."""
        with pytest.raises(InvalidArgumentError, match="joint"):
            fit_joint(ModelSpec(), create_data(distal=True), create_fast_mcmc())

    def test_needs_distal_outcomes(self) -> None:
        """Test that fit_joint needs distal outcomes."""
        with pytest.raises(InvalidArgumentError, match="distal"):
            fit_joint(ModelSpec(distal=DistalMode.JOINT), create_data(), create_fast_mcmc())

    @pytest.mark.slow
    def test_joint_fit(self) -> None:
        """Test that a short joint fit reports every distal coefficient."""
        spec = ModelSpec(distal=DistalMode.JOINT, distal_interactions=False)
        result = fit_joint(spec, create_data(make_round_robin(5), distal=True), create_fast_mcmc())
        for j in range(7):
            assert math.isfinite(result.summary[f"b{j}"].mean)
        assert "b7" not in result.summary
