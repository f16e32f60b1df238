"""End-to-end tests of the command pipelines on short chains."""

import json
import re
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import pytest

from custom_components.ion_ising import commands
from custom_components.ion_ising.const import DEFAULT_NU_X
from custom_components.ion_ising.dynamics import NoiseModel
from custom_components.ion_ising.helpers import AcceptanceError, ConfigError
from custom_components.ion_ising.observables import OrderParamSeries
from custom_components.ion_ising.prepare_data import RunConfig, validate_config


def short_config(tmp_path: Path, **sections: Any) -> RunConfig:
    """Two ions, a short ramp and few trajectories, writing into tmp_path."""
    raw: dict[str, Any] = {
        "trap": {"n_ions": 2},
        "ramp": {"t_final_us": 200.0, "n_samples": 5},
        "ensemble": {"n_traj": 4, "seed": 3},
        "sweep": {"n_ions": [2]},
        "outputs": {"directory": str(tmp_path)},
    }
    raw.update(sections)
    return validate_config(raw)


def series(values: float, sem: float = 0.0) -> OrderParamSeries:
    """Constant order-parameter series over three sample times."""
    ones = np.ones(3)
    return OrderParamSeries(
        times=np.array([0.0, 10.0, 20.0]),
        b_over_j=np.array([5.0, 2.0, 1.0]),
        m_x=values * ones,
        m_x_sem=sem * ones,
        m_x_scaled=values * ones,
        m_x_scaled_sem=sem * ones,
        g=values * ones,
        g_sem=sem * ones,
        g_scaled=values * ones,
        g_scaled_sem=sem * ones,
        p_fm=values * ones,
        p_fm_sem=sem * ones,
    )


def test_cmd_modes(tmp_path: Path) -> None:
    """The mode table holds frequencies, vectors and Lamb-Dicke parameters."""
    df = commands.cmd_modes(short_config(tmp_path, trap={"n_ions": 3}))

    assert list(df.columns) == ["mode", "frequency_khz", "b_1", "b_2", "b_3", "eta_1", "eta_2", "eta_3"]
    assert df["frequency_khz"][0] == pytest.approx(DEFAULT_NU_X)
    text = (tmp_path / "modes_N3.csv").read_text(encoding="utf-8")
    assert text.startswith("# {")


def test_cmd_couplings(tmp_path: Path) -> None:
    """The coupling report carries the power-law exponent and the margins."""
    report = commands.cmd_couplings(short_config(tmp_path, trap={"n_ions": 5}))

    assert 0 < report["alpha"] < 3
    assert report["mean_J_khz"] > 0
    assert len(report["adiabatic_margin"]) == 5
    assert len(report["alpha_scan"]) == 2
    document = json.loads((tmp_path / "couplings_N5.json").read_text(encoding="utf-8"))
    assert document["alpha"] == pytest.approx(report["alpha"])
    assert document["config"]["trap"]["n_ions"] == 5


def test_cmd_couplings_per_ion_rabi(tmp_path: Path) -> None:
    """A Gaussian beam lowers the couplings of the outer ions."""
    flat = commands.cmd_couplings(short_config(tmp_path, trap={"n_ions": 3}))
    gaussian = commands.cmd_couplings(short_config(tmp_path, trap={"n_ions": 3}, omega_waist_ratio=3.0))

    assert gaussian["mean_J_khz"] < flat["mean_J_khz"]


def test_cmd_sweep_reproducible(tmp_path: Path) -> None:
    """Two runs with one seed write byte-identical files."""
    config = short_config(tmp_path)
    df = commands.cmd_sweep(config)
    first = (tmp_path / "sweep.csv").read_bytes()
    commands.cmd_sweep(config)

    assert (tmp_path / "sweep.csv").read_bytes() == first
    assert len(df) == 5
    assert df["g_scaled"][0] == pytest.approx(0.0, abs=1e-12)
    jumps = json.loads((tmp_path / "sweep.json").read_text(encoding="utf-8"))["jump_counts"]
    assert set(jumps["2"]) == {"dephasing", "emission_down", "emission_up", "leakage"}


def test_cmd_dicke(tmp_path: Path) -> None:
    """Reference curves sharpen with N and cross near B = |J| for long chains."""
    config = short_config(tmp_path, dicke={"n_ions": [2, 9, 100]})
    report = commands.cmd_dicke(config)

    slopes = report["max_slope"]
    assert slopes[2] < slopes[9] < slopes[100]
    assert 0.8 <= report["crossing_b_over_j"][100] <= 1.2
    assert commands.dicke_grid(config).size == 41
    assert (tmp_path / "dicke.csv").exists()


def test_cmd_oracle_noiseless(tmp_path: Path) -> None:
    """Without noise the trajectories reproduce the master equation."""
    config = short_config(tmp_path, noise={"gamma_se": 0.0, "gamma_deph": 0.0}, ensemble={"n_traj": 2})
    report = commands.cmd_oracle(config)

    assert report["passed"]
    assert report["failures"] == []
    assert (tmp_path / "oracle_N2.csv").exists()


def test_cmd_oracle_failure(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    """A reference that disagrees raises an acceptance error and is reported."""
    real_oracle = commands.lindblad_oracle

    def shifted_oracle(*args: Any) -> tuple[np.ndarray, OrderParamSeries]:
        p, exact = real_oracle(*args)
        exact.p_fm = exact.p_fm + 0.1
        return p, exact

    monkeypatch.setattr(commands, "lindblad_oracle", shifted_oracle)
    config = short_config(tmp_path, noise={"gamma_se": 0.0, "gamma_deph": 0.0}, ensemble={"n_traj": 2})

    with pytest.raises(AcceptanceError, match=re.escape("Trajectories disagree with the master equation at 5 point(s)")):
        commands.cmd_oracle(config)
    document = json.loads((tmp_path / "oracle_N2.json").read_text(encoding="utf-8"))
    assert document["passed"] is False


def test_compare_series() -> None:
    """Deviations beyond n_sigma combined standard errors are reported."""
    assert commands.compare_series(series(0.5, 0.01), series(0.52, 0.01), n_sigma=3) == []

    failures = commands.compare_series(series(0.5, 0.01), series(0.6, 0.01), n_sigma=3)
    assert len(failures) == 9
    assert {f["observable"] for f in failures} == {"m_x", "g_scaled", "p_fm"}

    assert len(commands.compare_series(series(0.5), series(0.5 + 2e-4), n_sigma=3)) == 9


def test_cmd_synthesize_and_fit(tmp_path: Path) -> None:
    """A synthesized GHZ histogram fits back to the GHZ mixture."""
    config = short_config(tmp_path, detection={"shots": 20_000, "n_resample": 20})
    hist = commands.cmd_synthesize(config)
    report = commands.cmd_fit(config, str(tmp_path / "histogram_N2.csv"))

    assert hist.total == 20_000
    np.testing.assert_allclose(report["p"], [0.5, 0.0, 0.5], atol=0.02)
    assert report["order_params"]["g_scaled"] == pytest.approx(1.0, abs=0.05)
    assert set(report["order_param_err"]) == {"m_x", "m_x_scaled", "g", "g_scaled", "p_fm"}
    assert (tmp_path / "fit_N2.json").exists()


def test_cmd_synthesize_custom_distribution(tmp_path: Path) -> None:
    """A configured distribution sets the chain length of the histogram."""
    config = short_config(tmp_path, detection={"shots": 1_000, "distribution": [0.25, 0.5, 0.25, 0.0]})
    commands.cmd_synthesize(config)

    assert (tmp_path / "histogram_N3.csv").exists()


def test_cmd_fit_without_histogram(tmp_path: Path) -> None:
    """The fit needs a histogram file."""
    with pytest.raises(ConfigError, match=re.escape("No histogram file given")):
        commands.cmd_fit(short_config(tmp_path))


def test_cmd_bench(tmp_path: Path) -> None:
    """Throughput is reported per worker count and results do not depend on it."""
    config = short_config(tmp_path, bench={"n_ions": [2], "n_traj": 4, "workers": [1, 2]})
    report = commands.cmd_bench(config)

    runs = report["results"][2]["runs"]
    assert [run["workers"] for run in runs] == [1, 2]
    assert all(run["identical"] for run in runs)
    assert runs[0]["efficiency"] == pytest.approx(1.0)
    assert report["results"][2]["reference_seconds_1e4"] == pytest.approx(60.0)
    assert report["results"][2]["extrapolated_seconds_1e4"] > 0


def test_cmd_modes_json(tmp_path: Path) -> None:
    """The mode document carries the trap, positions, vectors and Lamb-Dicke parameters."""
    commands.cmd_modes(short_config(tmp_path, trap={"n_ions": 3}))
    document = json.loads((tmp_path / "modes_N3.json").read_text(encoding="utf-8"))

    assert document["n_ions"] == 3
    assert document["nu_x_khz"] == pytest.approx(DEFAULT_NU_X)
    assert len(document["positions"]) == 3
    assert np.asarray(document["vectors"]).shape == (3, 3)
    assert np.asarray(document["lamb_dicke"]).shape == (3, 3)
    assert document["frequencies_khz"][0] == pytest.approx(DEFAULT_NU_X)


def test_cmd_couplings_matrix_csv(tmp_path: Path) -> None:
    """The coupling CSV holds one row per ion and one column per partner."""
    report = commands.cmd_couplings(short_config(tmp_path, trap={"n_ions": 4}))
    df = pd.read_csv(tmp_path / "couplings_N4.csv", comment="#")

    assert list(df.columns) == ["i", "J_1", "J_2", "J_3", "J_4"]
    assert list(df["i"]) == [1, 2, 3, 4]
    np.testing.assert_allclose(df[["J_1", "J_2", "J_3", "J_4"]].to_numpy(), report["J_khz"], rtol=1e-9)
    assert len(report["rabi_khz"]) == 4


def test_cmd_sweep_writes_distributions(tmp_path: Path) -> None:
    """Ensemble P(s) and standard errors are written per N and read back normalized."""
    commands.cmd_sweep(short_config(tmp_path))
    df = pd.read_csv(tmp_path / "ensemble_N2.csv", comment="#")

    assert list(df.columns) == ["time_us", "b_over_j", "p_0", "p_1", "p_2", "sem_0", "sem_1", "sem_2"]
    assert len(df) == 5
    np.testing.assert_allclose(df[["p_0", "p_1", "p_2"]].sum(axis=1), 1.0)
    np.testing.assert_allclose(df.loc[0, ["p_0", "p_1", "p_2"]].to_numpy(dtype=float), [0.25, 0.5, 0.25])
    assert (df[["sem_0", "sem_1", "sem_2"]] >= 0).all().all()


def test_cmd_oracle_writes_distributions(tmp_path: Path) -> None:
    """The exact and the trajectory P(s) are written side by side."""
    config = short_config(tmp_path, noise={"gamma_se": 0.0, "gamma_deph": 0.0}, ensemble={"n_traj": 2})
    commands.cmd_oracle(config)
    df = pd.read_csv(tmp_path / "oracle_distribution_N2.csv", comment="#")

    assert set(df["source"]) == {"master_equation", "trajectories"}
    exact = df[df["source"] == "master_equation"][["p_0", "p_1", "p_2"]].to_numpy()
    estimate = df[df["source"] == "trajectories"][["p_0", "p_1", "p_2"]].to_numpy()
    np.testing.assert_allclose(estimate, exact, atol=1e-5)
    assert (df[df["source"] == "master_equation"][["sem_0", "sem_1", "sem_2"]] == 0).all().all()


def test_breakdown_models() -> None:
    """Each partial model keeps only its own loss channel."""
    models = commands.breakdown_models(NoiseModel(gamma_se=0.1, gamma_deph=0.3, flip_error=0.01))

    assert models["noiseless"].gamma_se == models["noiseless"].gamma_deph == 0.0
    assert models["emission"].gamma_deph == 0.0
    assert models["emission"].gamma_se == pytest.approx(0.1)
    assert models["dephasing"].gamma_se == 0.0
    assert models["dephasing"].gamma_deph == pytest.approx(0.3)
    assert models["full"].flip_error == pytest.approx(0.01)
    assert models["emission"].flip_error == 0.0


def test_cmd_breakdown_two_ions(tmp_path: Path) -> None:
    """With the default ramp and rates two ions end near P(FM) = 0.9 with a few percent diabatic loss."""
    config = short_config(tmp_path, ramp={"n_samples": 3}, ensemble={"n_traj": 300, "seed": 3})
    report = commands.cmd_breakdown(config)

    full = report["final"]["full"]
    deficits = report["deficits"]
    assert 0.80 - 3 * full["p_fm_sem"] <= full["p_fm"] <= 0.95 + 3 * full["p_fm_sem"]
    assert 0.0 <= deficits["non_adiabatic"]["deficit"] <= 0.07
    assert deficits["total"]["deficit"] > deficits["non_adiabatic"]["deficit"]
    assert set(deficits) == {"non_adiabatic", "emission", "dephasing", "total"}
    document = json.loads((tmp_path / "breakdown_N2.json").read_text(encoding="utf-8"))
    assert document["deficits"]["total"]["deficit"] == pytest.approx(deficits["total"]["deficit"])


def test_cmd_sweep_ferromagnet_degrades_with_n(tmp_path: Path) -> None:
    """The final P(FM) of four ions lies below that of two."""
    config = short_config(tmp_path, ramp={"n_samples": 3}, ensemble={"n_traj": 200, "seed": 5}, sweep={"n_ions": [2, 4]})
    df = commands.cmd_sweep(config)

    final = df.groupby("n_ions").last()
    assert final.loc[4, "p_fm"] < final.loc[2, "p_fm"]
