"""Tests for the link functions and model types."""

import math
import pickle

import numpy as np
import pytest

from dyad_irt.model import (
    INDETERMINATE,
    DistalCoefficients,
    Hyperparameters,
    ItemBank,
    composite_theta,
    distal_basis,
    distal_success_prob,
    pcm_category_probs,
    pcm_log_likelihood,
    pcm_log_probs,
    pcm_tail_probs,
    variance_partition,
)
from dyad_irt.simulate import DESK_DISTAL, DESK_HYPERPARAMETERS
from dyad_irt.utils.errors import InvalidArgumentError


class TestCompositeTheta:
    """Test the composite trait of a directed dyad."""

    def test_sums_components(self) -> None:
        """Test that the composite is the plain sum of its parts."""
        assert composite_theta(0.0, 0.0, 0.0, 0.0) == 0.0
        assert composite_theta(1.0, 0.5, -0.3) == pytest.approx(1.2)

    def test_male_mean_shift(self) -> None:
        """Test that the male mean shift adds to the actor side."""
        assert composite_theta(0.2, 0.1, 0.0, 0.08) == pytest.approx(0.38)

    def test_non_finite_input(self) -> None:
        """Test that non-finite input is rejected."""
        with pytest.raises(InvalidArgumentError):
            composite_theta(math.nan, 0.0, 0.0)
        with pytest.raises(InvalidArgumentError):
            composite_theta(0.0, math.inf, 0.0)


class TestPartialCredit:
    """Test the partial credit model."""

    def test_uniform_when_steps_equal_theta(self) -> None:
        """Test equal probabilities when every adjacent log-odds is 0."""
        np.testing.assert_allclose(pcm_category_probs(0.0, (0.0, 0.0, 0.0)), [0.25] * 4)
        np.testing.assert_allclose(pcm_category_probs(0.7, (0.7,)), [0.5, 0.5])

    def test_known_values(self) -> None:
        """Test probabilities against direct evaluation of the cumulative sums."""
        probs = pcm_category_probs(1.0, (0.5, -0.2))
        np.testing.assert_allclose(probs, [0.12311, 0.20298, 0.67391], atol=1e-5)
        assert probs.sum() == pytest.approx(1.0)

    def test_adjacent_log_odds(self) -> None:
        """Test that log(p_j / p_j-1) equals theta - delta_j."""
        theta = 0.4
        delta = np.array([-1.2, 0.3, 0.9, 2.0])
        probs = pcm_category_probs(theta, delta)
        np.testing.assert_allclose(np.log(probs[1:] / probs[:-1]), theta - delta)

    def test_translation_invariance(self) -> None:
        """Test that shifting theta and every step together leaves probabilities unchanged."""
        delta = np.array([-0.5, 0.1, 0.8])
        np.testing.assert_allclose(pcm_category_probs(0.3, delta), pcm_category_probs(2.3, delta + 2.0))

    def test_needs_two_categories(self) -> None:
        """Test that an empty step vector is rejected."""
        with pytest.raises(InvalidArgumentError):
            pcm_category_probs(0.0, ())

    def test_extreme_theta_stays_inside_unit_interval(self) -> None:
        """Test that no category probability reaches 0 or 1 at extreme traits."""
        for theta in (800.0, -800.0):
            probs = pcm_category_probs(theta, (0.0, 0.0))
            assert np.all(probs > 0.0)
            assert np.all(probs < 1.0)
            assert probs.sum() == pytest.approx(1.0)

    def test_log_likelihood(self) -> None:
        """Test log-likelihood values and the response range check."""
        assert pcm_log_likelihood(0, 0.0, (0.0,)) == pytest.approx(math.log(0.5))
        assert pcm_log_likelihood(2, 1.0, (0.5, -0.2)) == pytest.approx(math.log(0.67391), abs=1e-4)
        assert pcm_log_likelihood(1, 0.0, (0.0, 0.0, 0.0)) == pytest.approx(math.log(0.25))
        with pytest.raises(InvalidArgumentError):
            pcm_log_likelihood(3, 0.0, (0.0, 0.0))
        with pytest.raises(InvalidArgumentError):
            pcm_log_likelihood(-1, 0.0, (0.0,))

    def test_vectorized_matches_scalar_with_padding(self) -> None:
        """Test that padded, masked steps give the scalar probabilities and -inf beyond an item's range."""
        bank = ItemBank.from_rows([[0.5, -0.2, 1.0], [0.3]])
        deltas, mask = bank.padded()
        theta = np.array([1.0, -0.4])
        log_probs = pcm_log_probs(theta, deltas, mask)
        np.testing.assert_allclose(np.exp(log_probs[0]), pcm_category_probs(1.0, (0.5, -0.2, 1.0)))
        np.testing.assert_allclose(np.exp(log_probs[1, :2]), pcm_category_probs(-0.4, (0.3,)))
        assert np.all(np.isneginf(log_probs[1, 2:]))

    def test_tail_probabilities(self) -> None:
        """Test that P(Y >= k) sums the upper categories."""
        bank = ItemBank.from_rows([[0.5, -0.2]])
        deltas, mask = bank.padded()
        probs = pcm_category_probs(1.0, (0.5, -0.2))
        tails = pcm_tail_probs(np.array([1.0]), deltas, mask)[0]
        np.testing.assert_allclose(tails, [probs[1] + probs[2], probs[2]])


class TestItemBank:
    """Test item step bookkeeping."""

    def test_shifted_and_names(self) -> None:
        """Test that shifted items carry default ids and delta names."""
        bank = ItemBank.shifted((-1.0, 1.0), (0.0, 0.5))
        assert bank.item_ids == ("1", "2")
        assert bank.categories.tolist() == [3, 3]
        assert bank.steps[1] == (-0.5, 1.5)
        assert bank.step_names() == ["delta[1,1]", "delta[1,2]", "delta[2,1]", "delta[2,2]"]

    def test_rejects_single_category_item(self) -> None:
        """Test that an item needs at least one step."""
        with pytest.raises(InvalidArgumentError):
            ItemBank(((0.0,), ()))


class TestDistal:
    """Test the distal regression link."""

    def test_zero_coefficients(self) -> None:
        """Test that a zero linear predictor gives even odds."""
        coeffs = DistalCoefficients(np.zeros(10))
        assert distal_success_prob(coeffs, 1.0, -2.0, 0.3, 0.4, 1.5, -0.7) == pytest.approx(0.5)

    def test_intercept_only(self) -> None:
        """Test the inverse logit of the intercept at zero traits."""
        coeffs = DistalCoefficients(np.array([-0.88, 0, 0, 0, 0, 0, 0]), interactions=False)
        assert distal_success_prob(coeffs, 0, 0, 0, 0, 0, 0) == pytest.approx(0.293, abs=5e-4)

    def test_actor_slope(self) -> None:
        """Test a single actor slope."""
        b = np.zeros(10)
        b[1] = 1.0
        assert distal_success_prob(DistalCoefficients(b), 2.0, 0, 0, 0, 0, 0) == pytest.approx(0.8808, abs=1e-4)

    def test_exchangeable_swap_symmetry(self) -> None:
        """Test that exchangeable coefficients give the same probability with the roles swapped."""
        coeffs = DistalCoefficients(
            np.array([-0.5, 0.3, 0.3, -1.0, -1.0, 0.8, 0.8, 0.1, 0.2, -0.3]), exchangeable=True
        )
        forward = distal_success_prob(coeffs, 0.4, -0.2, 1.1, 0.6, -0.9, 0.5)
        swapped = distal_success_prob(coeffs, -0.2, 0.4, 0.6, 1.1, 0.5, -0.9)
        assert forward == pytest.approx(swapped)

    def test_extreme_linear_predictor(self) -> None:
        """Test that the success probability stays strictly between 0 and 1."""
        b = np.zeros(10)
        b[1] = 1.0
        assert 0.0 < distal_success_prob(DistalCoefficients(b), 900.0, 0, 0, 0, 0, 0) < 1.0
        assert 0.0 < distal_success_prob(DistalCoefficients(b), -900.0, 0, 0, 0, 0, 0) < 1.0

    def test_exchangeable_needs_equal_pairs(self) -> None:
        """Test that exchangeable coefficients must come in equal pairs."""
        with pytest.raises(InvalidArgumentError, match="b1 == b2"):
            DistalCoefficients(np.array(DESK_DISTAL), exchangeable=True)

    def test_interactions_off_needs_zero_products(self) -> None:
        """Test that nonzero b7..b9 are rejected without interactions."""
        with pytest.raises(InvalidArgumentError):
            DistalCoefficients(np.array(DESK_DISTAL), interactions=False)
        padded = DistalCoefficients(np.array(DESK_DISTAL[:7]), interactions=False)
        assert padded.b[7:].tolist() == [0.0, 0.0, 0.0]

    def test_basis_names(self) -> None:
        """Test free coefficient names for each distal variant."""
        assert distal_basis()[1] == tuple(f"b{j}" for j in range(10))
        assert distal_basis(interactions=False)[1] == tuple(f"b{j}" for j in range(7))
        basis, names = distal_basis(exchangeable=True)
        assert names == ("b0", "b1=b2", "b3=b4", "b5=b6", "b7", "b8", "b9")
        assert basis.shape == (10, 7)

    def test_free_values_round_trip(self) -> None:
        """Test that free values rebuild the full coefficient vector."""
        coeffs = DistalCoefficients(np.array([0.1, 0.2, 0.2, 0.3, 0.3, 0.4, 0.4, 0, 0, 0]), exchangeable=True)
        free = coeffs.free_values()
        assert free["b3=b4"] == pytest.approx(0.3)
        rebuilt = DistalCoefficients.from_free(np.array(list(free.values())), exchangeable=True)
        np.testing.assert_allclose(rebuilt.b, coeffs.b)


class TestHyperparameters:
    """Test hyperparameter validation and the variance partition."""

    def test_validate(self) -> None:
        """Test that out-of-range values are rejected."""
        DESK_HYPERPARAMETERS.validate()
        with pytest.raises(InvalidArgumentError, match="rho_gamma"):
            Hyperparameters(1.0, 1.0, 1.0, 0.0, 1.5).validate()
        with pytest.raises(InvalidArgumentError, match="sigma_beta"):
            Hyperparameters(1.0, -0.1, 1.0, 0.0, 0.0).validate()

    def test_variance_partition(self) -> None:
        """Test the actor, partner and dyad shares of the composite variance."""
        partition = DESK_HYPERPARAMETERS.variance_partition()
        assert partition.total == pytest.approx(1.0)
        assert partition.actor == pytest.approx(1.0609 / 2.4182)
        with pytest.raises(InvalidArgumentError):
            variance_partition(0.0, 0.0, 0.0)

    def test_indeterminate_is_a_singleton(self) -> None:
        """Test that the indeterminate marker survives pickling as the same object."""
        assert pickle.loads(pickle.dumps(INDETERMINATE)) is INDETERMINATE
        assert str(INDETERMINATE) == "indeterminate"
