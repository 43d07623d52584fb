"""
CLI Tests
Subcommand chains through the output directory and exit codes
"""

import json

import numpy as np
import pandas as pd
import pytest

from casimir_cusp.artifacts import read_json, write_csv
from casimir_cusp.cli import COMMANDS, main
from casimir_cusp.cusp_map import cusp_map_from_dict
from casimir_cusp.inducing import return_time_stats, total_variation
from casimir_cusp.section import MaximaSeries, count_distribution, winding_counts


@pytest.fixture
def analytic_out(tmp_path):
    """Output directory holding the analytic map.json"""
    code = main(["build-map", "--representation", "analytic", "--out", str(tmp_path)])
    assert code == 0, "build-map failed"
    return tmp_path


def test_all_subcommands_registered():
    """Tests the subcommand table"""
    expected = {
        "integrate",
        "extract-maxima",
        "build-map",
        "fit-exponents",
        "lattice",
        "check-lemma1",
        "density",
        "fit-density",
        "return-times",
        "reconstruct",
        "stability-sweep",
        "reproduce-paper",
    }
    assert set(COMMANDS) == expected


def test_build_map_writes_manifest(analytic_out, capsys):
    """Tests map.json and its manifest"""
    assert (analytic_out / "map.json").exists()
    manifest = json.loads((analytic_out / "manifest_build-map.json").read_text())
    assert manifest["command"] == "build-map"
    assert manifest["config"]["map"]["representation"] == "analytic"
    assert "analytic map built" in capsys.readouterr().out


def test_lattice_then_expansion_check(analytic_out):
    """Tests lattice and check-lemma1 on the analytic map"""
    out = str(analytic_out)
    assert main(["lattice", "--depth", "20", "--out", out]) == 0
    lattice = pd.read_csv(analytic_out / "lattice.csv")
    assert len(lattice) == 21
    assert main(["check-lemma1", "--out", out]) == 0
    report = json.loads((analytic_out / "lemma1.json").read_text())
    assert report["passed"] is True
    assert report["p_star"] == 8


def test_ulam_density_command(analytic_out):
    """Tests the density subcommand with the Ulam estimator"""
    out = str(analytic_out)
    assert main(["density", "--method", "ulam", "--n-bins", "512", "--out", out]) == 0
    frame = pd.read_csv(analytic_out / "density.csv")
    assert len(frame) == 512
    assert (frame["value"].sum() / 512) == pytest.approx(1.0)
    report = json.loads((analytic_out / "density.json").read_text())
    assert report["method"] == "ulam"


def test_fit_exponents_command(analytic_out):
    """Tests exponent fitting from dense map samples"""
    assert main(["fit-exponents", "--out", str(analytic_out)]) == 0
    exps = json.loads((analytic_out / "exponents.json").read_text())["exponents"]
    assert exps["alpha_prime"] == pytest.approx(1.113, abs=0.02)


def test_tent_return_times(tmp_path):
    """Tests return times of the golden skew tent through the CLI"""
    out = str(tmp_path)
    build = ["build-map", "--representation", "piecewise_linear", "--x0", "0.6180339887498949"]
    assert main(build + ["--out", out]) == 0
    assert main(["return-times", "--n-samples", "10000", "--out", out]) == 0
    report = json.loads((tmp_path / "return_times.json").read_text())
    assert report["n_samples"] == 10_000
    assert "predicted_slope" not in report


def test_missing_upstream_exit_code(tmp_path, capsys):
    """Tests exit code 3 when map.json is missing"""
    assert main(["lattice", "--out", str(tmp_path)]) == 3
    assert "build-map" in capsys.readouterr().out


def test_config_error_exit_code(tmp_path):
    """Tests exit code 2 for a value outside the schema"""
    assert main(["lattice", "--depth", "2", "--out", str(tmp_path)]) == 2


def test_numeric_error_exit_code(analytic_out):
    """Tests exit code 4 when α″ exceeds α′"""
    code = main(["check-lemma1", "--alpha-double-prime", "1.5", "--out", str(analytic_out)])
    assert code == 4


def test_version_flag(capsys):
    """Tests --version"""
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "casimir-cusp" in capsys.readouterr().out


def test_winding_counts_compared_with_right_half(analytic_out):
    """Tests that return-times on I still compares winding counts with right-half returns"""
    rng = np.random.default_rng(5)
    n = 2_000
    lobe = np.where(rng.uniform(size=n) < 0.5, 1, -1)
    u = np.column_stack([lobe.astype(float), np.ones(n), np.zeros(n)])
    c = rng.uniform(10.0, 20.0, n)
    series = MaximaSeries(t=np.arange(n, dtype=float), u=u, c=c, lobe=lobe)
    write_csv(analytic_out / "maxima.csv", series.to_frame())

    out = str(analytic_out)
    assert main(["return-times", "--set", "I", "--n-samples", "10000", "--out", out]) == 0
    report = json.loads((analytic_out / "return_times.json").read_text())
    assert report["set"] == "I"

    cmap = cusp_map_from_dict(read_json(analytic_out / "map.json"))
    right = return_time_stats(cmap, 10_000, "right_half", 42)
    winding = count_distribution(winding_counts(series))
    expected = total_variation(winding, right.table)
    assert report["winding_tv"] == pytest.approx(expected, rel=1e-12), "compared with the wrong set"
