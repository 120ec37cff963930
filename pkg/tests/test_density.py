"""Tests for the joint log-density, its gradient and the latent mean structure."""

import math

import numpy as np
import pandas as pd
import pytest

from dyad_irt.density import DyadData, DyadModel, joint_log_density, joint_log_density_grad
from dyad_irt.design import DyadDesign, make_block, make_k_group, make_round_robin
from dyad_irt.mean_terms import build_mean_terms
from dyad_irt.model import LatentState, ResponseSet, bivariate_normal_logpdf, pcm_log_likelihood
from dyad_irt.model_spec import DistalMode, ModelSpec
from dyad_irt.utils.errors import InvalidArgumentError, SpecificationError

from .conftest import create_data

HYPER_VALUES = {
    "sigma_alpha": 1.2,
    "sigma_beta": 0.7,
    "rho_alpha_beta": -0.3,
    "sigma_gamma": 0.9,
    "rho_gamma": 0.4,
}


def single_dyad_data() -> DyadData:
    design = DyadDesign.from_edges(["a", "b"], [("a", "b")])
    return DyadData(design, ResponseSet([0], [0], [1]), categories=[3])


def random_latents(model: DyadModel, seed: int = 3) -> LatentState:
    rng = np.random.default_rng(seed)
    return LatentState(
        rng.normal(size=model.n_individuals),
        rng.normal(size=model.n_individuals),
        rng.normal(size=(model.n_pairs, 2)),
        rng.normal(size=model.n_clusters),
    )


class TestJointLogDensity:
    """Test the unnormalized log posterior."""

    def test_single_response_term_by_term(self) -> None:
        """Test that one response adds its PCM term to the trait densities."""
        model = DyadModel(single_dyad_data())
        params = model.parameters(**HYPER_VALUES, **{"delta[1,1]": -0.4, "delta[1,2]": 0.6})
        latents = LatentState(np.array([0.3, -0.2]), np.array([0.1, 0.4]), np.array([[0.5, -0.1]]))
        expected = pcm_log_likelihood(1, 0.3 + 0.4 + 0.5, (-0.4, 0.6))
        expected += float(np.sum(bivariate_normal_logpdf(latents.alpha, latents.beta, 1.2, 0.7, -0.3)))
        expected += float(bivariate_normal_logpdf(0.5, -0.1, 0.9, 0.9, 0.4))
        assert joint_log_density(params, latents, model) == pytest.approx(expected)

    def test_empty_data_is_the_trait_density(self) -> None:
        """Test that without responses only the latent-trait log-densities remain."""
        design = make_round_robin(3)
        model = DyadModel(DyadData(design, ResponseSet.empty(), categories=[2]))
        params = model.parameters(**HYPER_VALUES)
        latents = random_latents(model)
        expected = float(np.sum(bivariate_normal_logpdf(latents.alpha, latents.beta, 1.2, 0.7, -0.3)))
        expected += float(np.sum(bivariate_normal_logpdf(latents.gamma[:, 0], latents.gamma[:, 1], 0.9, 0.9, 0.4)))
        assert joint_log_density(params, latents, model) == pytest.approx(expected)

    def test_outside_support_is_minus_infinity(self) -> None:
        """Test that parameters outside the prior support give -inf instead of an error."""
        model = DyadModel(single_dyad_data())
        latents = model.zero_latents()
        assert joint_log_density(model.parameters(rho_gamma=1.5), latents, model) == -math.inf
        assert joint_log_density(model.parameters(sigma_alpha=-0.1), latents, model) == -math.inf

    def test_upper_sd_bound(self) -> None:
        """Test that an SD above the configured bound is outside the support."""
        spec = ModelSpec.from_sections(prior={"sd_upper": 2.0})
        model = DyadModel(single_dyad_data(), spec)
        assert joint_log_density(model.parameters(sigma_beta=2.5), model.zero_latents(), model) == -math.inf

    def test_shape_mismatch(self) -> None:
        """Test that latents of the wrong shape are rejected."""
        model = DyadModel(single_dyad_data())
        latents = LatentState(np.zeros(3), np.zeros(2), np.zeros((1, 2)))
        with pytest.raises(InvalidArgumentError, match="alpha"):
            joint_log_density(model.default_parameters(), latents, model)

    def test_parameters_from_other_model(self) -> None:
        """Test that parameters built for another layout are rejected."""
        model = DyadModel(single_dyad_data())
        other = DyadModel(create_data())
        with pytest.raises(InvalidArgumentError):
            joint_log_density(other.default_parameters(), model.zero_latents(), model)

    def test_joint_distal_needs_outcomes(self) -> None:
        """Test that a joint distal model needs distal data."""
        with pytest.raises(InvalidArgumentError):
            DyadModel(single_dyad_data(), ModelSpec(distal=DistalMode.JOINT))


class TestGradient:
    """Test the analytic gradient against central differences."""

    @pytest.mark.parametrize(
        "spec",
        [
            ModelSpec(),
            ModelSpec(distal=DistalMode.JOINT),
            ModelSpec(distal=DistalMode.JOINT, exchangeable_distal=True, distal_interactions=False),
        ],
    )
    def test_matches_finite_differences(self, spec: ModelSpec) -> None:
        """Test every partial derivative of the joint log-density."""
        model = DyadModel(create_data(make_round_robin(4), distal=True), spec)
        rng = np.random.default_rng(11)
        params = model.parameters(**HYPER_VALUES)
        free = [name for name in model.layout.free_names if name not in HYPER_VALUES]
        params = params.replace(**{name: float(rng.normal(scale=0.5)) for name in free})
        latents = random_latents(model)

        value, gradient = joint_log_density_grad(params, latents, model)
        vector = model.pack(params, latents)
        assert value == pytest.approx(joint_log_density(*model.unpack(vector), model))

        step = 1e-6
        numeric = np.empty_like(vector)
        for k in range(vector.size):
            up, down = vector.copy(), vector.copy()
            up[k] += step
            down[k] -= step
            numeric[k] = (
                joint_log_density(*model.unpack(up), model) - joint_log_density(*model.unpack(down), model)
            ) / (2 * step)
        np.testing.assert_allclose(gradient, numeric, rtol=1e-4, atol=1e-5)
        assert len(model.unknown_names()) == vector.size

    def test_cluster_intercept_gradient(self) -> None:
        """Test the gradient with cluster intercepts and a gender mean."""
        design = make_k_group("block", [(2, 2), (2, 2)], genders=("F", "M"), clusters_by_group=True)
        spec = ModelSpec(cluster_intercept=True, gender_mean=True)
        model = DyadModel(create_data(design), spec)
        assert model.n_clusters == 2
        params = model.parameters(**HYPER_VALUES, sigma_u=0.6, mu_male=0.2)
        latents = random_latents(model)
        _, gradient = joint_log_density_grad(params, latents, model)
        vector = model.pack(params, latents)
        step = 1e-6
        for k in range(vector.size):
            up, down = vector.copy(), vector.copy()
            up[k] += step
            down[k] -= step
            numeric = (
                joint_log_density(*model.unpack(up), model) - joint_log_density(*model.unpack(down), model)
            ) / (2 * step)
            assert gradient[k] == pytest.approx(numeric, rel=1e-4, abs=1e-5)


class TestLayout:
    """Test parameter layouts and pinned values."""

    def test_layout_names(self) -> None:
        """Test parameter names of a joint model without interactions."""
        spec = ModelSpec(distal=DistalMode.JOINT, distal_interactions=False)
        model = DyadModel(create_data(distal=True), spec)
        names = model.layout.names
        assert names[:5] == ("sigma_alpha", "sigma_beta", "rho_alpha_beta", "sigma_gamma", "rho_gamma")
        assert "b6" in names
        assert "b7" not in names
        assert names[-1] == "delta[2,2]"

    def test_pinned_parameters_are_not_free(self) -> None:
        """Test that pinned parameters keep their value and leave the free set."""
        spec = ModelSpec(fixed={"sigma_gamma": 0.5, "rho_gamma": 0.0})
        model = DyadModel(create_data(), spec)
        assert "sigma_gamma" not in model.layout.free_names
        assert model.default_parameters()["sigma_gamma"] == 0.5

    def test_pinned_outside_support(self) -> None:
        """Test that pinned values must lie in their support."""
        with pytest.raises(SpecificationError, match="support"):
            DyadModel(create_data(), ModelSpec(fixed={"sigma_alpha": 0.0}))
        with pytest.raises(SpecificationError, match="not in this model"):
            DyadModel(create_data(), ModelSpec(fixed={"mu_male": 0.1}))

    def test_zero_cluster_sd_switches_intercept_off(self) -> None:
        """Test that pinning sigma_u at 0 removes the cluster intercepts."""
        design = make_k_group("round_robin", [3, 3], clusters_by_group=True)
        model = DyadModel(create_data(design), ModelSpec(cluster_intercept=True, fixed={"sigma_u": 0.0}))
        assert model.n_clusters == 0
        assert not model.cluster_active


class TestMeanTerms:
    """Test the gender, covariate and cluster extensions of the latent means."""

    def test_zero_male_mean_matches_no_gender(self) -> None:
        """Test that mu_male pinned at 0 leaves the density of the plain model unchanged."""
        design = make_k_group("block", [(2, 2), (2, 2)], genders=("F", "M"))
        data = create_data(design)
        plain = DyadModel(data)
        gendered = DyadModel(data, ModelSpec(gender_mean=True, fixed={"mu_male": 0.0}))
        latents = random_latents(plain)
        a = joint_log_density(plain.parameters(**HYPER_VALUES), latents, plain)
        b = joint_log_density(gendered.parameters(**HYPER_VALUES), latents, gendered)
        assert a == pytest.approx(b)

    def test_gender_needs_labels(self) -> None:
        """Test that the gender mean needs a gender per individual."""
        with pytest.raises(SpecificationError, match="gender"):
            DyadModel(create_data(), ModelSpec(gender_mean=True))

    def test_collinear_difference_covariate(self) -> None:
        """Test that z_a - z_p in the dyad mean is rejected next to z_a and z_p."""
        design = make_round_robin(4)
        z = pd.DataFrame({"z": [0.3, -1.2, 0.8, 0.1]}, index=pd.Index(design.ids, name="id"))
        dz = pd.DataFrame({"dz": z["z"].to_numpy()[design.actors] - z["z"].to_numpy()[design.partners]})
        spec = ModelSpec(covariates_alpha=("z",), covariates_beta=("z",), covariates_gamma=("dz",))
        with pytest.raises(SpecificationError, match="linearly dependent"):
            build_mean_terms(spec, design, individual_covariates=z, dyad_covariates=dz)

    def test_independent_covariates_accepted(self) -> None:
        """Test that a single actor covariate builds its column."""
        design = make_round_robin(4)
        z = pd.DataFrame({"z": [0.3, -1.2, 0.8, 0.1]}, index=pd.Index(design.ids, name="id"))
        terms = build_mean_terms(ModelSpec(covariates_alpha=("z",)), design, individual_covariates=z)
        assert terms.names_alpha == ("z",)
        assert terms.x_alpha.shape == (4, 1)

    def test_cross_cluster_dyads_rejected(self) -> None:
        """Test that cluster intercepts need within-cluster dyads."""
        design = make_block(2, 2)
        crossed = DyadDesign.from_edges(
            design.ids,
            [(design.ids[a], design.ids[p]) for a, p in zip(design.actors, design.partners)],
            clusters=design.blocks,
        )
        with pytest.raises(SpecificationError, match="spans clusters"):
            build_mean_terms(ModelSpec(cluster_intercept=True), crossed)
