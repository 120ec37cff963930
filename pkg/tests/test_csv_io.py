"""Tests for reading and writing the CSV tables."""

from pathlib import Path

import numpy as np
import pytest

from dyad_irt.design import DyadDesign, make_round_robin
from dyad_irt.inference import PosteriorDraws, eap_latent_scores
from dyad_irt.utils.csv_io import (
    latent_table,
    read_category_map,
    read_design,
    read_distal,
    read_latent_moments,
    read_responses,
    write_latent_moments,
    write_responses,
)
from dyad_irt.utils.errors import IngestionError

from .conftest import create_simulated_data, write_csv, write_round_robin_edges


@pytest.fixture
def design(tmp_path: Path) -> DyadDesign:
    return read_design(write_round_robin_edges(tmp_path / "edges.csv")).design


class TestReadDesign:
    """Test edge lists and individuals tables."""

    def test_round_robin_edges(self, tmp_path: Path) -> None:
        """Test that ids come from the edge list in first-seen order."""
        files = read_design(write_round_robin_edges(tmp_path / "edges.csv", n=5))
        assert files.design.ids == ("p1", "p2", "p3", "p4", "p5")
        assert files.design.n_dyads == 20
        assert files.individual_covariates is None

    def test_duplicate_dyad_line(self, tmp_path: Path) -> None:
        """Test that a duplicate dyad is reported at its file line."""
        path = write_csv(tmp_path / "edges.csv", "actor_id,partner_id", ["a,b", "b,a", "a,b"])
        with pytest.raises(IngestionError, match="duplicate dyad") as excinfo:
            read_design(path)
        assert excinfo.value.line == 4
        assert str(excinfo.value).startswith(f"{path}:4: ")

    def test_self_dyad(self, tmp_path: Path) -> None:
        """Test that an individual cannot rate itself."""
        path = write_csv(tmp_path / "edges.csv", "actor_id,partner_id", ["a,b", "c,c"])
        with pytest.raises(IngestionError, match="self-dyad") as excinfo:
            read_design(path)
        assert excinfo.value.line == 3

    def test_missing_column(self, tmp_path: Path) -> None:
        """Test that a missing required column is reported on the header line."""
        path = write_csv(tmp_path / "edges.csv", "actor,partner_id", ["a,b"])
        with pytest.raises(IngestionError, match="actor_id") as excinfo:
            read_design(path)
        assert excinfo.value.line == 1

    def test_individuals_table(self, tmp_path: Path) -> None:
        """Test that labels attach to the design and extra columns become covariates."""
        edges = write_csv(tmp_path / "edges.csv", "actor_id,partner_id", ["a,b", "b,a", "a,c"])
        individuals = write_csv(tmp_path / "ind.csv", "id,gender,z", ["a,F,0.5", "b,M,-1", "c,M,2.25"])
        files = read_design(edges, individuals)
        assert files.design.ids == ("a", "b", "c")
        assert files.design.genders == ("F", "M", "M")
        assert files.individual_covariates is not None
        assert files.individual_covariates.loc["c", "z"] == 2.25

    def test_unknown_individual(self, tmp_path: Path) -> None:
        """Test that edges must name listed individuals."""
        edges = write_csv(tmp_path / "edges.csv", "actor_id,partner_id", ["a,b", "a,x"])
        individuals = write_csv(tmp_path / "ind.csv", "id", ["a", "b"])
        with pytest.raises(IngestionError, match="unknown individual 'x'") as excinfo:
            read_design(edges, individuals)
        assert excinfo.value.line == 3


class TestReadResponses:
    """Test response tables."""

    header = "actor_id,partner_id,item_id,response"

    def test_undeclared_categories(self, tmp_path: Path, design: DyadDesign) -> None:
        """Test that undeclared items take the largest response plus one."""
        path = write_csv(tmp_path / "r.csv", self.header, ["p1,p2,q1,0", "p2,p1,q1,3", "p1,p3,q2,0"])
        result = read_responses(path, design)
        assert result.item_ids == ("q1", "q2")
        assert result.categories.tolist() == [4, 2]
        assert result.responses.item.tolist() == [0, 0, 1]
        assert result.dropped == 0

    def test_declared_categories(self, tmp_path: Path, design: DyadDesign) -> None:
        """Test a response outside the declared range, reported at its line."""
        path = write_csv(tmp_path / "r.csv", self.header, ["p1,p2,q1,0", "p2,p1,q1,3"])
        with pytest.raises(IngestionError, match="outside 0..2") as excinfo:
            read_responses(path, design, categories=3)
        assert excinfo.value.line == 3
        result = read_responses(path, design, categories={"q0": 2, "q1": 5})
        assert result.item_ids == ("q0", "q1")
        assert result.categories.tolist() == [2, 5]

    def test_empty_rating_dropped(self, tmp_path: Path, design: DyadDesign) -> None:
        """Test that empty ratings are dropped, with the counterpart on request."""
        rows = ["p1,p2,q1,", "p2,p1,q1,1", "p2,p1,q2,0", "p1,p3,q1,2"]
        path = write_csv(tmp_path / "r.csv", self.header, rows)
        kept = read_responses(path, design)
        assert len(kept.responses) == 3
        assert kept.dropped == 1
        paired = read_responses(path, design, drop_counterpart=True)
        assert len(paired.responses) == 2
        assert paired.dropped == 2
        assert paired.responses.response.tolist() == [0, 2]

    def test_category_map(self, tmp_path: Path, design: DyadDesign) -> None:
        """Test that raw codes are remapped before the range check."""
        remap = read_category_map(write_csv(tmp_path / "map.csv", "from,to", ["1,0", "2,1", "5,2"]))
        path = write_csv(tmp_path / "r.csv", self.header, ["p1,p2,q1,5", "p2,p1,q1,1"])
        result = read_responses(path, design, category_map=remap)
        assert result.responses.response.tolist() == [2, 0]
        assert result.category_map == {1: 0, 2: 1, 5: 2}
        unmapped = write_csv(tmp_path / "r2.csv", self.header, ["p1,p2,q1,5", "p2,p1,q1,4"])
        with pytest.raises(IngestionError, match="no category mapping") as excinfo:
            read_responses(unmapped, design, category_map=remap)
        assert excinfo.value.line == 3

    def test_dyad_not_in_design(self, tmp_path: Path, design: DyadDesign) -> None:
        """Test that responses must belong to a design dyad."""
        path = write_csv(tmp_path / "r.csv", self.header, ["p1,p2,q1,0", "p1,p9,q1,0"])
        with pytest.raises(IngestionError, match=r"p1>p9") as excinfo:
            read_responses(path, design)
        assert excinfo.value.line == 3

    def test_non_integer_response(self, tmp_path: Path, design: DyadDesign) -> None:
        """Test that a non-integer response is reported at its line."""
        path = write_csv(tmp_path / "r.csv", self.header, ["p1,p2,q1,0", "p1,p3,q1,", "p1,p4,q1,1.5"])
        with pytest.raises(IngestionError, match="integer") as excinfo:
            read_responses(path, design)
        assert excinfo.value.line == 4

    def test_written_responses_read_back(self, tmp_path: Path) -> None:
        """Test that simulated responses survive a write and read."""
        simulated = create_simulated_data(make_round_robin(3))
        path = tmp_path / "r.csv"
        write_responses(path, simulated.config.design, simulated.responses, simulated.config.item_bank.item_ids)
        result = read_responses(path, simulated.config.design, categories=3)
        np.testing.assert_array_equal(result.responses.response, simulated.responses.response)
        np.testing.assert_array_equal(result.responses.dyad, simulated.responses.dyad)


class TestReadDistal:
    """Test distal outcome tables."""

    header = "actor_id,partner_id,outcome"

    def test_binary_outcomes(self, tmp_path: Path, design: DyadDesign) -> None:
        """Test that outcomes must be 0 or 1."""
        path = write_csv(tmp_path / "d.csv", self.header, ["p1,p2,1", "p2,p1,0", "p3,p1,2"])
        with pytest.raises(IngestionError, match="0 or 1") as excinfo:
            read_distal(path, design)
        assert excinfo.value.line == 4

    def test_one_outcome_per_dyad(self, tmp_path: Path, design: DyadDesign) -> None:
        """Test that a dyad cannot have two outcomes."""
        path = write_csv(tmp_path / "d.csv", self.header, ["p1,p2,1", "p1,p2,0"])
        with pytest.raises(IngestionError, match="second outcome"):
            read_distal(path, design)


class TestLatentTables:
    """Test the latent truth and moment tables."""

    def test_latent_truth_layout(self) -> None:
        """Test one row per individual and role, then one per directed dyad."""
        simulated = create_simulated_data(make_round_robin(3))
        table = latent_table(simulated.config.design, simulated.latents)
        assert table["role"].value_counts().to_dict() == {"gamma": 6, "alpha": 3, "beta": 3}
        assert table["id"].iloc[-1] == simulated.config.design.dyad_labels()[-1]

    def test_moments_survive_the_file(self, tmp_path: Path) -> None:
        """Test that scores pooled from the moments file equal scores from the fit."""
        rng = np.random.default_rng(0)
        draws = PosteriorDraws(
            names=(),
            draws=np.zeros((2, 0, 0)),
            iterations=np.zeros(0, dtype=np.int64),
            latent_mean=rng.normal(size=(2, 4)),
            latent_m2=rng.uniform(1.0, 2.0, size=(2, 4)),
            latent_count=np.array([10, 10]),
            score_rows=(("a", "alpha", 0), ("b", "alpha", 1), ("a", "beta", 2), ("a>b", "gamma", 3)),
        )
        path = tmp_path / "latent_moments.csv"
        write_latent_moments(path, draws)
        restored = read_latent_moments(path)
        expected = eap_latent_scores(draws).to_frame()
        actual = eap_latent_scores(restored).to_frame()
        assert actual["id"].tolist() == expected["id"].tolist()
        np.testing.assert_allclose(actual["mean"], expected["mean"])
        np.testing.assert_allclose(actual["sd"], expected["sd"])
