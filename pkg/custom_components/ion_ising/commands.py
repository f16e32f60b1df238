"""End-to-end pipelines behind the command line and the Home Assistant services."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, replace
from typing import Any

import numpy as np
import pandas as pd

from custom_components.ion_ising import helpers, prepare_data
from custom_components.ion_ising.chain import (
    CouplingMatrix,
    ModeData,
    adiabatic_margin,
    coupling_matrix,
    coupling_range_scan,
    equilibrium_positions,
    fit_power_law,
    gaussian_rabi_profile,
    transverse_modes,
)
from custom_components.ion_ising.const import REFERENCE_BASELINE_SECONDS
from custom_components.ion_ising.detect import (
    CountHistogram,
    PhotonModel,
    fit_histogram,
    mc_error_bars,
    overlap,
    synthesize_histogram,
    tune_bright_leak,
)
from custom_components.ion_ising.dynamics import EnsembleStats, NoiseModel, SimulationConfig, run_ensemble
from custom_components.ion_ising.helpers import _LOGGER, AcceptanceError, ConfigError
from custom_components.ion_ising.observables import (
    OrderParamSeries,
    SpinDistribution,
    crossing_point,
    crossover_sharpness,
    dicke_sweep,
    ensemble_order_params,
    lindblad_oracle,
    scale_order_params,
)
from custom_components.ion_ising.prepare_data import RunConfig

SERIES_COLUMNS = (
    "m_x",
    "m_x_sem",
    "m_x_scaled",
    "m_x_scaled_sem",
    "g",
    "g_sem",
    "g_scaled",
    "g_scaled_sem",
    "p_fm",
    "p_fm_sem",
)


def chain_couplings(config: RunConfig, n_ions: int) -> tuple[ModeData, CouplingMatrix]:
    """Modes and couplings of an n_ions chain under the configured beams and detuning."""
    trap = config.trap(n_ions)
    geom = equilibrium_positions(n_ions)
    modes = transverse_modes(trap, geom)
    waist = config.data["omega_waist_ratio"]
    omega = config.data["omega"]
    if waist is not None:
        peak = omega if isinstance(omega, float) else max(omega)
        rabi = gaussian_rabi_profile(geom, peak, waist)
    else:
        rabi = np.asarray(omega, dtype=float)
    mu = float(modes.frequencies[0]) + config.mu_offset(n_ions)
    _LOGGER.debug("N=%d: mode frequencies %s kHz, mu=%.3f kHz", n_ions, modes.frequencies, mu)
    return modes, coupling_matrix(modes, rabi, mu)


def _series_frame(series: OrderParamSeries, **columns: Any) -> pd.DataFrame:
    data = dict(columns)
    data["time_us"] = series.times
    data["b_over_j"] = series.b_over_j
    for name in SERIES_COLUMNS:
        data[name] = getattr(series, name)
    return pd.DataFrame(data)


def _distribution_frame(
    times: np.ndarray, b_over_j: np.ndarray, p: np.ndarray, sem: np.ndarray | None = None, **columns: Any
) -> pd.DataFrame:
    """P(s) and its standard errors per sample time, one column per s."""
    data = dict(columns)
    data["time_us"] = times
    data["b_over_j"] = b_over_j
    sem = np.zeros_like(p) if sem is None else sem
    for s in range(p.shape[1]):
        data[f"p_{s}"] = p[:, s]
    for s in range(p.shape[1]):
        data[f"sem_{s}"] = sem[:, s]
    return pd.DataFrame(data)


def cmd_modes(config: RunConfig) -> pd.DataFrame:
    """Transverse mode frequencies, participation vectors and Lamb-Dicke parameters."""
    n = config.n_ions
    modes, _ = chain_couplings(config, n)
    data: dict[str, Any] = {"mode": np.arange(1, n + 1), "frequency_khz": modes.frequencies}
    for i in range(n):
        data[f"b_{i + 1}"] = modes.vectors[i]
    for i in range(n):
        data[f"eta_{i + 1}"] = modes.lamb_dicke[i]
    df = pd.DataFrame(data)
    prepare_data.write_csv(df, config.output_dir / f"modes_N{n}.csv", config)
    trap = config.trap(n)
    document = {
        "n_ions": n,
        "nu_x_khz": trap.nu_x,
        "nu_z_khz": trap.nu_z,
        "ion_mass_amu": trap.ion_mass,
        "delta_k_per_m": trap.delta_k,
        "positions": equilibrium_positions(n).positions,
        "frequencies_khz": modes.frequencies,
        "vectors": modes.vectors,
        "lamb_dicke": modes.lamb_dicke,
    }
    prepare_data.write_json(document, config.output_dir / f"modes_N{n}.json", config)
    return df


def cmd_couplings(config: RunConfig) -> dict[str, Any]:
    """Coupling matrix with its power-law fit and the adiabatic-elimination margins."""
    n = config.n_ions
    modes, coupling = chain_couplings(config, n)
    alpha, prefactor = fit_power_law(coupling.J)
    matrix = pd.DataFrame(coupling.J, columns=[f"J_{j + 1}" for j in range(n)])
    matrix.insert(0, "i", np.arange(1, n + 1))
    prepare_data.write_csv(matrix, config.output_dir / f"couplings_N{n}.csv", config)
    nu_1 = float(modes.frequencies[0])
    scan = coupling_range_scan(config.trap(n), coupling.rabi, [coupling.mu, 10 * nu_1])
    report = {
        "n_ions": n,
        "mu_khz": coupling.mu,
        "mean_J_khz": coupling.mean_J,
        "alpha": alpha,
        "prefactor_khz": prefactor,
        "rabi_khz": coupling.rabi,
        "J_khz": coupling.J,
        "adiabatic_margin": adiabatic_margin(modes, coupling.rabi, coupling.mu),
        "alpha_scan": [{"mu_khz": mu, "alpha": a} for mu, a in scan],
    }
    _LOGGER.info("N=%d couplings: |J|=%.4f kHz, alpha=%.3f", n, coupling.mean_J, alpha)
    prepare_data.write_json(report, config.output_dir / f"couplings_N{n}.json", config)
    return report


def _ensemble(
    config: RunConfig,
    n: int,
    workers: int | None = None,
    n_traj: int | None = None,
    noise: NoiseModel | None = None,
) -> EnsembleStats:
    _, coupling = chain_couplings(config, n)
    sim = SimulationConfig(coupling=coupling, ramp=config.ramp(coupling.mean_J), noise=noise if noise is not None else config.noise())
    return run_ensemble(sim, n_traj or config.n_traj, config.base_seed, workers or config.workers)


def cmd_sweep(config: RunConfig) -> pd.DataFrame:
    """Trajectory-averaged order parameters along the ramp for every configured N."""
    frames = []
    jumps = {}
    for n in config.data["sweep"]["n_ions"]:
        _LOGGER.info("Sweep for N=%d", n)
        ensemble = _ensemble(config, n)
        frames.append(_series_frame(ensemble_order_params(ensemble), n_ions=n))
        prepare_data.write_csv(
            _distribution_frame(ensemble.times, ensemble.b_over_j, ensemble.p, ensemble.sem),
            config.output_dir / f"ensemble_N{n}.csv",
            config,
        )
        jumps[n] = ensemble.jump_counts
    df = pd.concat(frames, ignore_index=True)
    prepare_data.write_csv(df, config.output_dir / "sweep.csv", config)
    prepare_data.write_json({"jump_counts": jumps}, config.output_dir / "sweep.json", config)
    return df


def breakdown_models(noise: NoiseModel) -> dict[str, NoiseModel]:
    """Noise models isolating each loss mechanism of the configured one."""
    return {
        "noiseless": replace(noise, gamma_se=0.0, gamma_deph=0.0, flip_error=0.0),
        "emission": replace(noise, gamma_deph=0.0, flip_error=0.0),
        "dephasing": replace(noise, gamma_se=0.0, flip_error=0.0),
        "full": noise,
    }


def cmd_breakdown(config: RunConfig) -> dict[str, Any]:
    """
    Split the loss of the final P(FM) of trap.n_ions into its mechanisms.

    The noiseless, emission-only, dephasing-only and full models run on the same
    seeds. The non-adiabatic deficit is 1 - P(FM) without noise; emission and
    dephasing deficits are measured against the noiseless result.
    """
    n = config.n_ions
    final = {}
    for name, noise in breakdown_models(config.noise()).items():
        _LOGGER.info("Breakdown for N=%d: %s", n, name)
        series = ensemble_order_params(_ensemble(config, n, noise=noise))
        final[name] = {"p_fm": series.p_fm[-1], "p_fm_sem": series.p_fm_sem[-1]}

    noiseless = final["noiseless"]
    deficits = {"non_adiabatic": {"deficit": 1.0 - noiseless["p_fm"], "sem": noiseless["p_fm_sem"]}}
    for name in ("emission", "dephasing"):
        deficits[name] = {
            "deficit": noiseless["p_fm"] - final[name]["p_fm"],
            "sem": math.hypot(noiseless["p_fm_sem"], final[name]["p_fm_sem"]),
        }
    deficits["total"] = {"deficit": 1.0 - final["full"]["p_fm"], "sem": final["full"]["p_fm_sem"]}
    report = {"n_ions": n, "n_traj": config.n_traj, "final": final, "deficits": deficits}
    _LOGGER.info(
        "N=%d P(FM) deficits: non-adiabatic %.3f, emission %.3f, dephasing %.3f, total %.3f",
        n,
        deficits["non_adiabatic"]["deficit"],
        deficits["emission"]["deficit"],
        deficits["dephasing"]["deficit"],
        deficits["total"]["deficit"],
    )
    prepare_data.write_json(report, config.output_dir / f"breakdown_N{n}.json", config)
    return report


def dicke_grid(config: RunConfig) -> np.ndarray:
    """Logarithmic B/|J| grid of the Dicke reference curves."""
    dicke = config.data["dicke"]
    decades = math.log10(dicke["b_over_j_max"] / dicke["b_over_j_min"])
    n_points = math.ceil(decades * dicke["points_per_decade"]) + 1
    return np.logspace(math.log10(dicke["b_over_j_min"]), math.log10(dicke["b_over_j_max"]), n_points)


def cmd_dicke(config: RunConfig) -> dict[str, Any]:
    """Adiabatic reference curves from the uniform-coupling ground state."""
    grid = dicke_grid(config)
    frames = []
    curves = {}
    crossings = {}
    for n in config.data["dicke"]["n_ions"]:
        rows = dicke_sweep(n, grid)
        frames.append(pd.DataFrame({"n_ions": n, **rows}))
        curves[n] = (grid, rows["g_scaled"])
        crossings[n] = crossing_point(grid, rows["g_scaled"])
        _LOGGER.info("Dicke N=%d: scaled Binder cumulant crosses 1/2 at B/|J|=%.4f", n, crossings[n])
    sharpness = crossover_sharpness(curves)
    prepare_data.write_csv(pd.concat(frames, ignore_index=True), config.output_dir / "dicke.csv", config)
    report = {"crossing_b_over_j": crossings, "max_slope": sharpness}
    prepare_data.write_json(report, config.output_dir / "dicke.json", config)
    return report


def compare_series(
    reference: OrderParamSeries, estimate: OrderParamSeries, n_sigma: float, floor: float = 1e-4
) -> list[dict[str, Any]]:
    """Sample points where the estimate misses the reference by more than n_sigma standard errors."""
    failures = []
    for name in ("m_x", "g_scaled", "p_fm"):
        ref = getattr(reference, name)
        est = getattr(estimate, name)
        sem = np.hypot(getattr(reference, f"{name}_sem"), getattr(estimate, f"{name}_sem"))
        tolerance = np.maximum(n_sigma * sem, floor)
        for k in np.flatnonzero(np.abs(est - ref) > tolerance):
            failures.append(
                {"observable": name, "time_us": reference.times[k], "reference": ref[k], "estimate": est[k], "tolerance": tolerance[k]}
            )
    return failures


def cmd_oracle(config: RunConfig) -> dict[str, Any]:
    """
    Compare the trajectory ensemble with the exact master equation.

    Raises
    ------
        AcceptanceError: If any observable misses the reference by more than oracle.n_sigma standard errors.

    """
    n = config.n_ions
    _, coupling = chain_couplings(config, n)
    sim = SimulationConfig(coupling=coupling, ramp=config.ramp(coupling.mean_J), noise=config.noise())
    exact_p, exact = lindblad_oracle(sim.coupling, sim.ramp, sim.noise)
    ensemble = run_ensemble(sim, config.n_traj, config.base_seed, config.workers)
    estimate = ensemble_order_params(ensemble)
    distributions = pd.concat(
        [
            _distribution_frame(exact.times, exact.b_over_j, exact_p, source="master_equation"),
            _distribution_frame(ensemble.times, ensemble.b_over_j, ensemble.p, ensemble.sem, source="trajectories"),
        ],
        ignore_index=True,
    )
    prepare_data.write_csv(distributions, config.output_dir / f"oracle_distribution_N{n}.csv", config)
    frame = pd.concat(
        [_series_frame(exact, source="master_equation"), _series_frame(estimate, source="trajectories")],
        ignore_index=True,
    )
    prepare_data.write_csv(frame, config.output_dir / f"oracle_N{n}.csv", config)
    n_sigma = config.data["oracle"]["n_sigma"]
    failures = compare_series(exact, estimate, n_sigma)
    report = {"n_ions": n, "n_traj": config.n_traj, "n_sigma": n_sigma, "passed": not failures, "failures": failures}
    prepare_data.write_json(report, config.output_dir / f"oracle_N{n}.json", config)
    if failures:
        helpers.handle_error(
            f"Trajectories disagree with the master equation at {len(failures)} point(s), first: {failures[0]}",
            AcceptanceError,
        )
    return report


def _detection_model(config: RunConfig) -> PhotonModel:
    model = config.photon_model()
    target = config.data["detection"]["overlap_target"]
    if target is not None:
        model = tune_bright_leak(model, target)
        _LOGGER.info("Bright leak tuned to %.5g for overlap %.4g", model.leak_bright_to_dark, target)
    return model


def cmd_fit(config: RunConfig, histogram_file: str | None = None) -> dict[str, Any]:
    """Fit P(s) to a measured histogram and attach Monte-Carlo error bars."""
    det = config.data["detection"]
    file_path = histogram_file or det["histogram_file"]
    if file_path is None:
        helpers.handle_error("No histogram file given (detection.histogram_file)", ConfigError)
    hist = prepare_data.read_histogram(file_path, det["delimiter"], det["decimal"])
    model = _detection_model(config)
    n = config.n_ions
    fit = fit_histogram(hist, n, model)
    errors = mc_error_bars(
        hist,
        fit,
        model,
        n_resample=det["n_resample"],
        seed=config.base_seed,
        jitter_values=det["jitter_values"],
        resample_counts=det["resample_counts"],
    )
    report = {
        "n_ions": n,
        "p": fit.distribution.p,
        "p_err": errors.p,
        "mean_dark": fit.mean_dark,
        "mean_dark_err": fit.mean_dark_err,
        "mean_bright": fit.mean_bright,
        "mean_bright_err": fit.mean_bright_err,
        "chi2": fit.chi2,
        "n_counts": fit.n_counts,
        "overlap": overlap(model.with_means(fit.mean_dark, fit.mean_bright)),
        "order_params": asdict(scale_order_params(fit.distribution)),
        "order_param_err": {k: v for k, v in asdict(errors).items() if k not in ("p", "n_failed")},
        "failed_draws": errors.n_failed,
    }
    prepare_data.write_json(report, config.output_dir / f"fit_N{n}.json", config)
    return report


def cmd_synthesize(config: RunConfig) -> CountHistogram:
    """Draw a histogram from a known P(s), by default the even GHZ mixture of trap.n_ions."""
    det = config.data["detection"]
    p = det["distribution"]
    distribution = SpinDistribution(n=len(p) - 1, p=p) if p is not None else SpinDistribution.ghz(config.n_ions)
    hist = synthesize_histogram(distribution.p, _detection_model(config), det["shots"], config.base_seed)
    df = pd.DataFrame({"count": np.arange(hist.counts.size), "occurrences": hist.counts})
    prepare_data.write_csv(df, config.output_dir / f"histogram_N{distribution.n}.csv", config)
    return hist


def cmd_bench(config: RunConfig) -> dict[str, Any]:
    """Trajectory throughput per worker count, parallel efficiency and bit-identity across worker counts."""
    bench = config.data["bench"]
    n_traj = bench["n_traj"]
    results = {}
    for n in bench["n_ions"]:
        runs = []
        reference = None
        for workers in bench["workers"]:
            start = time.perf_counter()
            ensemble = _ensemble(config, n, workers=workers, n_traj=n_traj)
            elapsed = time.perf_counter() - start
            if reference is None:
                reference = (workers, n_traj / elapsed, ensemble.p)
            identical = bool(np.array_equal(ensemble.p, reference[2]))
            if not identical:
                _LOGGER.warning("N=%d: results with %d workers differ from %d workers", n, workers, reference[0])
            rate = n_traj / elapsed
            runs.append(
                {
                    "workers": workers,
                    "seconds": elapsed,
                    "trajectories_per_second": rate,
                    "efficiency": (rate / reference[1]) / (workers / reference[0]),
                    "identical": identical,
                }
            )
            _LOGGER.info("N=%d, %d worker(s): %.2f trajectories/s", n, workers, rate)
        best = max(run["trajectories_per_second"] for run in runs)
        results[n] = {
            "runs": runs,
            "extrapolated_seconds_1e4": 1e4 / best,
            "reference_seconds_1e4": REFERENCE_BASELINE_SECONDS.get(n),
        }
    report = {"n_traj": n_traj, "results": results}
    prepare_data.write_json(report, config.output_dir / "bench.json", config)
    return report


COMMANDS = {
    "modes": cmd_modes,
    "couplings": cmd_couplings,
    "sweep": cmd_sweep,
    "breakdown": cmd_breakdown,
    "dicke": cmd_dicke,
    "oracle": cmd_oracle,
    "fit": cmd_fit,
    "synthesize": cmd_synthesize,
    "bench": cmd_bench,
}
