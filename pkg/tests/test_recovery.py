"""Tests for recovery studies and their report."""

from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from dyad_irt.design import make_round_robin
from dyad_irt.model_spec import ModelSpec
from dyad_irt.recovery import (
    ESTIMATE_COLUMNS,
    REPORT_COLUMNS,
    RecoveryConfig,
    build_report,
    load_replications,
    render_report,
    run_calibration,
    run_replications,
)
from dyad_irt.simulate import SimulationPlan
from dyad_irt.utils.errors import InvalidArgumentError

from .conftest import create_fast_mcmc, create_item_bank


def small_plan(n_items: int = 2, categories: int = 3) -> SimulationPlan:
    return SimulationPlan(design=make_round_robin(4), item_bank=create_item_bank(n_items, categories))


def self_test_config(replications: int, parameters: tuple[str, ...] = ()) -> RecoveryConfig:
    return RecoveryConfig(
        plan=small_plan(10, 4), replications=replications, self_test=True, seed=11, parameters=parameters
    )


def estimates_table(values: dict[str, list[float]], truth: dict[str, float], sd: float = 0.1) -> pd.DataFrame:
    rows = []
    for name, estimates in values.items():
        for r, estimate in enumerate(estimates):
            rows.append((r, r, name, truth[name], estimate, sd, estimate - 0.2, estimate + 0.2, 1.0))
    return pd.DataFrame(rows, columns=list(ESTIMATE_COLUMNS))


class TestBuildReport:
    """Test the reduction of per-replication estimates."""

    def test_known_values(self) -> None:
        """Test bias, MC error, relative SE bias and coverage on hand-made estimates."""
        estimates = estimates_table({"x": [0.9, 1.1, 1.3, 0.7]}, {"x": 1.0})
        row = build_report(estimates)["x"]
        empirical_sd = float(np.std([0.9, 1.1, 1.3, 0.7], ddof=1))
        assert row["bias"] == pytest.approx(0.0, abs=1e-12)
        assert row["bias_mc_error"] == pytest.approx(empirical_sd / 2.0)
        assert row["relative_se_bias"] == pytest.approx(0.1 / empirical_sd - 1.0)
        assert row["relative_se_bias_mc_error"] == pytest.approx(0.1 / empirical_sd * np.sqrt(1.0 / 6.0))
        assert row["coverage"] == pytest.approx(0.5)
        assert row["coverage_mc_error"] == pytest.approx(0.25)
        assert row["n"] == 4

    def test_replication_order_does_not_matter(self) -> None:
        """Test that shuffling replications leaves the report unchanged."""
        estimates = estimates_table({"a": [0.1, 0.4, -0.2], "b": [2.0, 2.5, 1.5]}, {"a": 0.0, "b": 2.0})
        shuffled = estimates.iloc[[2, 5, 0, 3, 1, 4]]
        pd.testing.assert_frame_equal(build_report(estimates).table, build_report(shuffled).table)

    def test_columns(self) -> None:
        """Test the report table layout."""
        report = build_report(estimates_table({"x": [1.0, 2.0]}, {"x": 1.5}), n_failed=1)
        assert list(report.table.columns) == list(REPORT_COLUMNS)
        assert report.n_replications == 2
        assert report.n_failed == 1


class TestReplications:
    """Test replicated recovery studies."""

    def test_self_test_bias_within_mc_error(self) -> None:
        """Test that unbiased iid estimates show bias within 1.96 MC errors and nominal coverage."""
        report = run_replications(self_test_config(20))
        table = report.table
        assert report.n_replications == 20
        assert len(table) == 5 + 30
        within = (table["bias"].abs() <= 1.96 * table["bias_mc_error"]).mean()
        assert within >= 0.8
        assert 0.85 <= table["coverage"].mean() <= 1.0
        np.testing.assert_allclose(table["mean_sd"], 1.0 / np.sqrt(50))

    def test_two_replications(self) -> None:
        """Test that the smallest study runs."""
        report = run_replications(self_test_config(2))
        assert report.n_replications == 2
        assert report.table["n"].eq(2).all()

    def test_one_replication_rejected(self) -> None:
        """Test that a single replication is not a study."""
        with pytest.raises(InvalidArgumentError, match="at least 2"):
            run_replications(self_test_config(1))

    def test_same_seed_same_report(self) -> None:
        """Test that a study depends only on its seed."""
        first = run_replications(self_test_config(3)).table
        second = run_replications(self_test_config(3)).table
        pd.testing.assert_frame_equal(first, second)

    def test_parameter_filter(self) -> None:
        """Test that only the selected parameters are reported."""
        report = run_replications(self_test_config(2, parameters=("sigma_*",)))
        assert report.table["parameter"].tolist() == ["sigma_alpha", "sigma_beta", "sigma_gamma"]

    def test_persisted_replications_rebuild_the_report(self, tmp_path: Path) -> None:
        """Test that the report rebuilt from disk matches the original."""
        report = run_replications(self_test_config(3), output_dir=tmp_path)
        assert sorted(p.name for p in (tmp_path / "replications").iterdir()) == [
            "rep-0000.csv",
            "rep-0001.csv",
            "rep-0002.csv",
        ]
        estimates, n_failed = load_replications(tmp_path)
        rebuilt = build_report(estimates, n_failed=n_failed)
        pd.testing.assert_frame_equal(report.table, rebuilt.table, check_dtype=False)
        assert n_failed == 0

    def test_load_without_replications(self, tmp_path: Path) -> None:
        """Test that an empty directory cannot be loaded."""
        with pytest.raises(InvalidArgumentError):
            load_replications(tmp_path)

    @pytest.mark.slow
    def test_fitted_replications(self, tmp_path: Path) -> None:
        """Test two short simulate-then-fit replications."""
        config = RecoveryConfig(plan=small_plan(), mcmc=create_fast_mcmc(), replications=2, seed=5)
        report = run_replications(config, output_dir=tmp_path)
        assert report.n_replications + report.n_failed == 2
        assert (tmp_path / "failures.csv").exists()


class TestCalibration:
    """Test the single-run calibration check."""

    @pytest.mark.slow
    def test_calibration_table(self) -> None:
        """Test that every reported parameter gets an interval and a coverage flag."""
        config = RecoveryConfig(plan=small_plan(), model_spec=ModelSpec(), mcmc=create_fast_mcmc(), seed=2)
        table = run_calibration(config)
        assert "sigma_alpha" in table["parameter"].tolist()
        assert (table["lower"] <= table["upper"]).all()
        assert table["covered"].dtype == bool


class TestRenderReport:
    """Test the text report."""

    def test_filters(self) -> None:
        """Test that an empty filter keeps every row and a single pattern keeps one."""
        report = run_replications(self_test_config(2))
        text, series = render_report(report)
        assert "# Recovery report" in text
        assert set(series["parameter"]) == set(report.table["parameter"])
        text, series = render_report(report, ["rho_gamma"])
        assert series["parameter"].unique().tolist() == ["rho_gamma"]
        assert len(series) == 2
        assert "sigma_alpha" not in text
