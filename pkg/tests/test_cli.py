"""Tests for the command-line interface."""

from pathlib import Path
from unittest.mock import MagicMock, patch

import numpy as np
import pandas as pd
import pytest
from typer.testing import CliRunner

from dyad_irt.cli import EXIT_DIAGNOSTIC_FAILURE, EXIT_INPUT_ERROR, app
from dyad_irt.design import PATTERN_DESCRIPTIONS
from dyad_irt.inference import PosteriorDraws
from dyad_irt.utils.manifest import Manifest

from .conftest import write_csv, write_round_robin_edges

runner = CliRunner()

SMALL_SIMULATION = [
    "--set",
    "design.kind=round_robin",
    "--set",
    "design.sizes=[4]",
    "--set",
    "simulation.n_items=2",
    "--set",
    "simulation.categories=3",
]
FAST_MCMC = [
    "--set",
    "mcmc.chains=2",
    "--set",
    "mcmc.iterations=60",
    "--set",
    "mcmc.burn_in=30",
    "--set",
    "mcmc.adaptation_window=10",
]


@pytest.fixture(autouse=True)
def isolated_cwd(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> Path:
    monkeypatch.chdir(tmp_path)
    return tmp_path


def simulate_into(directory: Path, *extra: str) -> Path:
    result = runner.invoke(app, ["simulate", *SMALL_SIMULATION, "-o", str(directory), *extra])
    assert result.exit_code == 0, result.output
    return directory


def fit_args(data_dir: Path, output: Path) -> list[str]:
    return [
        "fit",
        "--set",
        f"design.file={data_dir / 'edges.csv'}",
        "--set",
        f"data.responses={data_dir / 'responses.csv'}",
        *FAST_MCMC,
        "-o",
        str(output),
    ]


class TestCheckDesign:
    """Test the design identification command."""

    def test_round_robin(self, tmp_path: Path) -> None:
        """Test that a round robin passes."""
        result = runner.invoke(app, ["check-design", str(write_round_robin_edges(tmp_path / "edges.csv"))])
        assert result.exit_code == 0
        assert "identified" in result.output

    def test_single_dyad(self, tmp_path: Path) -> None:
        """Test that an unidentified design exits 2."""
        path = write_csv(tmp_path / "edges.csv", "actor_id,partner_id", ["a,b"])
        result = runner.invoke(app, ["check-design", str(path)])
        assert result.exit_code == EXIT_DIAGNOSTIC_FAILURE
        output = " ".join(result.output.split())
        for description in PATTERN_DESCRIPTIONS.values():
            assert description in output, description

    def test_rater_examinee(self, tmp_path: Path) -> None:
        """Test that raters who are never rated leave the correlations undefined."""
        rows = [f"r{i},e{j}" for i in range(1, 4) for j in range(1, 5)]
        path = write_csv(tmp_path / "edges.csv", "actor_id,partner_id", rows)
        result = runner.invoke(app, ["check-design", str(path)])
        assert result.exit_code == EXIT_DIAGNOSTIC_FAILURE
        output = " ".join(result.output.split())
        assert "Undefined: rho_alpha_beta, rho_gamma" in output

    def test_malformed_edges(self, tmp_path: Path) -> None:
        """Test that a malformed edge list exits 1."""
        path = write_csv(tmp_path / "edges.csv", "actor_id,partner_id", ["a,b", "a,a"])
        result = runner.invoke(app, ["check-design", str(path)])
        assert result.exit_code == EXIT_INPUT_ERROR


class TestSimulate:
    """Test the simulate command."""

    def test_writes_outputs_and_manifest(self, tmp_path: Path) -> None:
        """Test the files written and the recorded seed."""
        out = simulate_into(tmp_path / "sim", "--seed", "4", "--distal", "joint")
        for name in ("edges.csv", "responses.csv", "distal.csv", "truth.csv", "latents.csv", "manifest.json"):
            assert (out / name).exists(), name
        manifest = Manifest.read(out / "manifest.json")
        assert manifest.command == "simulate"
        assert manifest.seeds == {"simulation": 4}
        assert len(pd.read_csv(out / "responses.csv")) == 12 * 2

    def test_same_config_same_files(self, tmp_path: Path) -> None:
        """Test that a rerun with the same configuration writes identical files."""
        first = simulate_into(tmp_path / "a")
        second = simulate_into(tmp_path / "b")
        for name in ("responses.csv", "truth.csv", "latents.csv", "manifest.json"):
            assert (first / name).read_bytes() == (second / name).read_bytes(), name

    def test_manifest_rerun(self, tmp_path: Path) -> None:
        """Test that a manifest reproduces its run."""
        first = simulate_into(tmp_path / "a", "--seed", "9")
        result = runner.invoke(app, ["simulate", "--manifest", str(first / "manifest.json"), "-o", str(tmp_path / "b")])
        assert result.exit_code == 0, result.output
        assert (first / "responses.csv").read_bytes() == (tmp_path / "b" / "responses.csv").read_bytes()

    def test_invalid_override(self, tmp_path: Path) -> None:
        """Test that an invalid configuration value exits 1."""
        result = runner.invoke(app, ["simulate", "--set", "mcmc.chains=1", "-o", str(tmp_path / "x")])
        assert result.exit_code == EXIT_INPUT_ERROR


class TestFit:
    """Test the fit, score and summarize commands."""

    def test_fit_score_summarize(self, tmp_path: Path) -> None:
        """Test a short fit followed by scoring and resummarizing its draws."""
        data_dir = simulate_into(tmp_path / "sim")
        fit_dir = tmp_path / "fit"
        result = runner.invoke(app, fit_args(data_dir, fit_dir))
        assert result.exit_code == 0, result.output
        summary = pd.read_csv(fit_dir / "summary.csv")
        assert list(summary.columns) == ["parameter", "mean", "sd", "q2.5", "q97.5", "rhat"]
        assert "sigma_alpha" in summary["parameter"].tolist()
        assert (fit_dir / "diagnostics.md").read_text(encoding="utf-8").startswith("# Fit diagnostics")

        result = runner.invoke(app, ["score", str(fit_dir), "--truth", str(data_dir / "latents.csv")])
        assert result.exit_code == 0, result.output
        scores = pd.read_csv(fit_dir / "scores.csv")
        assert len(scores) == 2 * 4 + 12
        assert set(scores["role"]) == {"alpha", "beta", "gamma"}

        target = tmp_path / "resummary.csv"
        result = runner.invoke(app, ["summarize", str(fit_dir / "draws.csv"), "-o", str(target), "-p", "sigma_*"])
        assert result.exit_code == 0, result.output
        resummary = pd.read_csv(target)
        assert resummary["parameter"].tolist() == ["sigma_alpha", "sigma_beta", "sigma_gamma"]
        expected = summary.set_index("parameter").loc[resummary["parameter"], "mean"].to_numpy()
        assert resummary["mean"].to_numpy() == pytest.approx(expected)

    def test_missing_responses(self, tmp_path: Path) -> None:
        """Test that fitting without data exits 1."""
        result = runner.invoke(app, ["fit", *FAST_MCMC, "-o", str(tmp_path / "fit")])
        assert result.exit_code == EXIT_INPUT_ERROR

    def test_unidentified_design(self, tmp_path: Path) -> None:
        """Test that freeing parameters the design cannot identify exits 2."""
        edges = write_csv(tmp_path / "edges.csv", "actor_id,partner_id", ["a,b", "a,c"])
        responses = write_csv(
            tmp_path / "responses.csv", "actor_id,partner_id,item_id,response", ["a,b,q1,0", "a,c,q1,1"]
        )
        result = runner.invoke(
            app,
            ["fit", "--set", f"design.file={edges}", "--set", f"data.responses={responses}", *FAST_MCMC],
        )
        assert result.exit_code == EXIT_DIAGNOSTIC_FAILURE

    @patch("dyad_irt.cli.fit")
    def test_strict_exits_on_flagged_rhat(self, mock_fit: MagicMock, tmp_path: Path) -> None:
        """Test that --strict turns a flagged R-hat into exit 2."""
        data_dir = simulate_into(tmp_path / "sim")
        draws = np.zeros((2, 5, 1))
        draws[1] += 1.0
        mock_fit.return_value = PosteriorDraws(names=("sigma_alpha",), draws=draws, iterations=np.arange(5))
        result = runner.invoke(app, fit_args(data_dir, tmp_path / "fit"))
        assert result.exit_code == 0, result.output
        result = runner.invoke(app, [*fit_args(data_dir, tmp_path / "fit2"), "--strict"])
        assert result.exit_code == EXIT_DIAGNOSTIC_FAILURE
        mock_fit.assert_called()

    def test_score_without_moments(self, tmp_path: Path) -> None:
        """Test that scoring a directory without latent moments exits 1."""
        (tmp_path / "empty").mkdir()
        result = runner.invoke(app, ["score", str(tmp_path / "empty")])
        assert result.exit_code == EXIT_INPUT_ERROR


class TestRecover:
    """Test the recover command."""

    def test_one_replication_rejected(self, tmp_path: Path) -> None:
        """Test that a single replication exits 1."""
        result = runner.invoke(app, ["recover", *SMALL_SIMULATION, "-r", "1", "-o", str(tmp_path / "rec")])
        assert result.exit_code == EXIT_INPUT_ERROR

    def test_self_test_and_report_only(self, tmp_path: Path) -> None:
        """Test a self-test study and rebuilding its report from disk."""
        out = tmp_path / "rec"
        result = runner.invoke(app, ["recover", *SMALL_SIMULATION, "--self-test", "-r", "3", "-o", str(out)])
        assert result.exit_code == 0, result.output
        report = (out / "report.md").read_text(encoding="utf-8")
        assert "# Recovery report" in report
        assert len(list((out / "replications").glob("rep-*.csv"))) == 3
        plot = pd.read_csv(out / "plot_data.csv")

        result = runner.invoke(app, ["recover", *SMALL_SIMULATION, "--report-only", "-o", str(out)])
        assert result.exit_code == 0, result.output
        assert (out / "report.md").read_text(encoding="utf-8") == report
        pd.testing.assert_frame_equal(pd.read_csv(out / "plot_data.csv"), plot)

    def test_parameter_filter(self, tmp_path: Path) -> None:
        """Test that -p restricts the report."""
        out = tmp_path / "rec"
        result = runner.invoke(
            app, ["recover", *SMALL_SIMULATION, "--self-test", "-r", "2", "-p", "rho_gamma", "-o", str(out)]
        )
        assert result.exit_code == 0, result.output
        assert pd.read_csv(out / "plot_data.csv")["parameter"].unique().tolist() == ["rho_gamma"]


class TestVersion:
    """Test the version flag."""

    def test_version(self) -> None:
        """Test that --version prints the package version."""
        result = runner.invoke(app, ["--version"])
        assert result.exit_code == 0
        assert "dyad-irt version" in result.output
