"""Run configuration, histogram input and CSV/JSON output for the ion_ising integration."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import voluptuous as vol
from homeassistant.helpers import config_validation as cv
from homeassistant.helpers.json import json_dumps_sorted
from homeassistant.util.yaml import load_yaml, parse_yaml

from custom_components.ion_ising import helpers
from custom_components.ion_ising.chain import TrapConfig
from custom_components.ion_ising.const import (
    DEFAULT_B0_OVER_J,
    DEFAULT_BEAM_PROFILE,
    DEFAULT_DELIMITER,
    DEFAULT_DELTA_K,
    DEFAULT_GAMMA_DEPH,
    DEFAULT_GAMMA_SE,
    DEFAULT_INTENSITY_JITTER,
    DEFAULT_MEAN_BRIGHT,
    DEFAULT_MEAN_DARK,
    DEFAULT_MU_OFFSET,
    DEFAULT_MU_OFFSETS,
    DEFAULT_N_RESAMPLE,
    DEFAULT_N_SAMPLES,
    DEFAULT_NU_X,
    DEFAULT_NU_Z,
    DEFAULT_OMEGA,
    DEFAULT_OUTPUT_DIR,
    DEFAULT_TAU_US,
    YB171_MASS_AMU,
)
from custom_components.ion_ising.detect import CountHistogram, PhotonModel
from custom_components.ion_ising.dynamics import NoiseModel, RampSchedule
from custom_components.ion_ising.helpers import _LOGGER, ConfigError

positive_float = vol.All(vol.Coerce(float), vol.Range(min=0, min_included=False))
non_negative_float = vol.All(vol.Coerce(float), vol.Range(min=0))
probability = vol.All(vol.Coerce(float), vol.Range(min=0, max=1))
ion_count = vol.All(vol.Coerce(int), vol.Range(min=1))
ion_counts = vol.All(cv.ensure_list, [ion_count])

TRAP_SCHEMA = vol.Schema(
    {
        vol.Optional("n_ions", default=9): ion_count,
        vol.Optional("nu_x", default=DEFAULT_NU_X): positive_float,
        vol.Optional("nu_z", default=DEFAULT_NU_Z): positive_float,
        vol.Optional("mass_amu", default=YB171_MASS_AMU): positive_float,
        vol.Optional("delta_k", default=DEFAULT_DELTA_K): positive_float,
    }
)

RAMP_SCHEMA = vol.Schema(
    {
        vol.Optional("b0_over_j", default=DEFAULT_B0_OVER_J): positive_float,
        vol.Optional("b_final_over_j", default=0.0): non_negative_float,
        vol.Optional("tau_us", default=DEFAULT_TAU_US): positive_float,
        vol.Optional("t_final_us", default=None): vol.Any(None, positive_float),
        vol.Optional("n_samples", default=DEFAULT_N_SAMPLES): vol.All(vol.Coerce(int), vol.Range(min=1)),
    }
)

NOISE_SCHEMA = vol.Schema(
    {
        vol.Optional("gamma_se", default=DEFAULT_GAMMA_SE): non_negative_float,
        vol.Optional("gamma_deph", default=DEFAULT_GAMMA_DEPH): non_negative_float,
        vol.Optional("branch", default=[1 / 3, 1 / 3, 1 / 3]): vol.All(
            [probability], vol.Length(min=3, max=3)
        ),
        vol.Optional("flip_error", default=0.0): probability,
    }
)

ENSEMBLE_SCHEMA = vol.Schema(
    {
        vol.Optional("n_traj", default=1000): ion_count,
        vol.Optional("seed", default=0): vol.All(vol.Coerce(int), vol.Range(min=0, max=2**64 - 1)),
        vol.Optional("workers", default=1): ion_count,
    }
)

SWEEP_SCHEMA = vol.Schema({vol.Optional("n_ions", default=list(range(2, 10))): ion_counts})

DICKE_SCHEMA = vol.Schema(
    {
        vol.Optional("n_ions", default=[100]): ion_counts,
        vol.Optional("b_over_j_min", default=0.1): positive_float,
        vol.Optional("b_over_j_max", default=10.0): positive_float,
        vol.Optional("points_per_decade", default=20): vol.All(vol.Coerce(int), vol.Range(min=1)),
    }
)

ORACLE_SCHEMA = vol.Schema({vol.Optional("n_sigma", default=3.0): positive_float})

DETECTION_SCHEMA = vol.Schema(
    {
        vol.Optional("mean_bright", default=DEFAULT_MEAN_BRIGHT): positive_float,
        vol.Optional("mean_dark", default=DEFAULT_MEAN_DARK): non_negative_float,
        vol.Optional("leak_bright_to_dark", default=0.0): probability,
        vol.Optional("leak_dark_to_bright", default=0.0): probability,
        vol.Optional("intensity_jitter", default=DEFAULT_INTENSITY_JITTER): non_negative_float,
        vol.Optional("beam_profile", default=[list(step) for step in DEFAULT_BEAM_PROFILE]): [
            vol.All([vol.Coerce(float)], vol.Length(min=2, max=2))
        ],
        vol.Optional("overlap_target", default=None): vol.Any(None, probability),
        vol.Optional("n_resample", default=DEFAULT_N_RESAMPLE): ion_count,
        vol.Optional("jitter_values", default=None): vol.Any(None, [non_negative_float]),
        vol.Optional("resample_counts", default=False): cv.boolean,
        vol.Optional("shots", default=100_000): ion_count,
        vol.Optional("distribution", default=None): vol.Any(None, [probability]),
        vol.Optional("histogram_file", default=None): vol.Any(None, cv.string),
        vol.Optional("delimiter", default=DEFAULT_DELIMITER): cv.string,
        vol.Optional("decimal", default="."): vol.In([".", ","]),
    }
)

BENCH_SCHEMA = vol.Schema(
    {
        vol.Optional("n_ions", default=[2, 9]): ion_counts,
        vol.Optional("n_traj", default=100): ion_count,
        vol.Optional("workers", default=[1, 2, 4, 8]): ion_counts,
    }
)

OUTPUTS_SCHEMA = vol.Schema(
    {
        vol.Optional("directory", default=DEFAULT_OUTPUT_DIR): cv.string,
        vol.Optional("delimiter", default=DEFAULT_DELIMITER): cv.string,
    }
)

RUN_CONFIG_SCHEMA = vol.Schema(
    {
        vol.Optional("trap", default={}): TRAP_SCHEMA,
        vol.Optional("omega", default=DEFAULT_OMEGA): vol.Any(positive_float, [positive_float]),
        vol.Optional("omega_waist_ratio", default=None): vol.Any(None, positive_float),
        vol.Optional("mu_offset", default=dict(DEFAULT_MU_OFFSETS)): vol.Any(
            vol.Coerce(float), {vol.Coerce(int): vol.Coerce(float)}
        ),
        vol.Optional("ramp", default={}): RAMP_SCHEMA,
        vol.Optional("noise", default={}): NOISE_SCHEMA,
        vol.Optional("ensemble", default={}): ENSEMBLE_SCHEMA,
        vol.Optional("sweep", default={}): SWEEP_SCHEMA,
        vol.Optional("dicke", default={}): DICKE_SCHEMA,
        vol.Optional("oracle", default={}): ORACLE_SCHEMA,
        vol.Optional("detection", default={}): DETECTION_SCHEMA,
        vol.Optional("bench", default={}): BENCH_SCHEMA,
        vol.Optional("outputs", default={}): OUTPUTS_SCHEMA,
    }
)


@dataclass
class RunConfig:
    """Validated run configuration with builders for the simulation objects."""

    data: dict[str, Any]

    @property
    def n_ions(self) -> int:
        """Chain length of single-N commands."""
        return self.data["trap"]["n_ions"]

    @property
    def n_traj(self) -> int:
        """Trajectories per ensemble."""
        return self.data["ensemble"]["n_traj"]

    @property
    def base_seed(self) -> int:
        """Seed of every ensemble and resampling stream."""
        return self.data["ensemble"]["seed"]

    @property
    def workers(self) -> int:
        """Process pool size."""
        return self.data["ensemble"]["workers"]

    @property
    def output_dir(self) -> Path:
        """Directory receiving all output files."""
        return Path(self.data["outputs"]["directory"])

    def trap(self, n_ions: int | None = None) -> TrapConfig:
        """Trap parameters for a chain of n_ions (default: trap.n_ions)."""
        trap = self.data["trap"]
        return TrapConfig(
            n_ions=n_ions or trap["n_ions"],
            nu_x=trap["nu_x"],
            nu_z=trap["nu_z"],
            ion_mass=trap["mass_amu"],
            delta_k=trap["delta_k"],
        )

    def mu_offset(self, n_ions: int) -> float:
        """Beatnote detuning above the COM mode for a chain of n_ions (kHz)."""
        offset = self.data["mu_offset"]
        if isinstance(offset, dict):
            return float(offset.get(n_ions, DEFAULT_MU_OFFSET))
        return float(offset)

    def ramp(self, mean_j: float) -> RampSchedule:
        """Ramp schedule with fields resolved against the mean coupling."""
        ramp = self.data["ramp"]
        return RampSchedule.from_ratios(
            mean_j,
            b0_over_j=ramp["b0_over_j"],
            tau=ramp["tau_us"],
            b_final_over_j=ramp["b_final_over_j"],
            t_final=ramp["t_final_us"],
            n_samples=ramp["n_samples"],
        )

    def noise(self) -> NoiseModel:
        """Jump rates, branching and preparation error."""
        noise = self.data["noise"]
        return NoiseModel(
            gamma_se=noise["gamma_se"],
            gamma_deph=noise["gamma_deph"],
            branch=tuple(noise["branch"]),
            flip_error=noise["flip_error"],
        )

    def photon_model(self) -> PhotonModel:
        """Photon statistics of the detection section."""
        det = self.data["detection"]
        return PhotonModel(
            mean_bright=det["mean_bright"],
            mean_dark=det["mean_dark"],
            leak_bright_to_dark=det["leak_bright_to_dark"],
            leak_dark_to_bright=det["leak_dark_to_bright"],
            intensity_jitter=det["intensity_jitter"],
            beam_profile=tuple(tuple(step) for step in det["beam_profile"]),
        )


def validate_config(raw: dict[str, Any] | None) -> RunConfig:
    """
    Validate a raw configuration dictionary and fill in defaults.

    Args:
    ----
        raw: Parsed YAML content; None is treated as an empty file.

    Returns:
    -------
        RunConfig: The validated configuration.

    Raises:
    ------
        ConfigError: If the schema or a cross-field check fails.

    """
    try:
        data = RUN_CONFIG_SCHEMA(raw or {})
    except vol.Invalid as err:
        helpers.handle_error(f"Invalid configuration: {err}", ConfigError)
    omega = data["omega"]
    if isinstance(omega, list) and len(omega) not in (1, data["trap"]["n_ions"]):
        helpers.handle_error(
            f"omega has {len(omega)} entries; expected 1 or trap.n_ions={data['trap']['n_ions']}", ConfigError
        )
    if isinstance(omega, list) and len(omega) > 1 and data["omega_waist_ratio"] is None:
        for section in ("sweep", "bench"):
            other = [n for n in data[section]["n_ions"] if n != len(omega)]
            if other:
                helpers.handle_error(
                    f"omega has {len(omega)} per-ion entries but {section}.n_ions includes {other}", ConfigError
                )
    if data["dicke"]["b_over_j_min"] >= data["dicke"]["b_over_j_max"]:
        helpers.handle_error("dicke.b_over_j_min must be below dicke.b_over_j_max", ConfigError)
    return RunConfig(data=data)


def parse_override(override: str) -> tuple[list[str], Any]:
    """
    Split a 'section.key=value' override; the value is parsed as YAML.

    Raises
    ------
        ConfigError: If the override has no '=' or an empty key.

    """
    key, sep, value = override.partition("=")
    path = [part for part in key.strip().split(".") if part]
    if not sep or not path:
        helpers.handle_error(f"Invalid override '{override}'. Expected section.key=value.", ConfigError)
    return path, parse_yaml(value) if value.strip() else None


def apply_overrides(raw: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    """Return a copy of raw with dotted-key overrides applied; overrides win."""
    merged = _deep_copy(raw or {})
    for key, value in overrides.items():
        path = key.split(".")
        node = merged
        for part in path[:-1]:
            if not isinstance(node.get(part), dict):
                node[part] = {}
            node = node[part]
        node[path[-1]] = value
        _LOGGER.debug("Override %s = %s", key, value)
    return merged


def _deep_copy(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _deep_copy(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_deep_copy(v) for v in value]
    return value


def load_run_config(file_path: str | None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """
    Load a YAML run configuration, apply overrides and validate it.

    Args:
    ----
        file_path: YAML file; None uses the defaults only.
        overrides: Dotted keys mapped to values.

    Returns:
    -------
        RunConfig: The validated configuration.

    Raises:
    ------
        ConfigError: If the file does not exist or is invalid.

    """
    raw: dict[str, Any] = {}
    if file_path is not None:
        if not os.path.exists(file_path):  # noqa: PTH110
            helpers.handle_error(f"path {file_path} does not exist.", ConfigError)
        _LOGGER.info("Loading run configuration from %s", file_path)
        loaded = load_yaml(file_path)
        if loaded is not None and not isinstance(loaded, dict):
            helpers.handle_error(f"Configuration file {file_path} must contain a mapping", ConfigError)
        raw = dict(loaded or {})
    return validate_config(apply_overrides(raw, overrides or {}))


def read_histogram(file_path: str, delimiter: str = DEFAULT_DELIMITER, decimal: str = ".") -> CountHistogram:
    """
    Read a photon-count histogram with columns 'count' and 'occurrences'.

    Missing counts between 0 and the largest listed count are zero.

    Raises
    ------
        ConfigError: If the file is missing, a column is absent or counts are invalid.

    """
    if not os.path.exists(file_path):  # noqa: PTH110
        helpers.handle_error(f"path {file_path} does not exist.", ConfigError)
    _LOGGER.info("Reading histogram from file: %s", file_path)
    _LOGGER.debug("Delimiter: %s", delimiter)
    _LOGGER.debug("Decimal separator: %s", decimal)
    my_df = pd.read_csv(file_path, sep=delimiter, decimal=decimal, comment="#", engine="python")
    missing = {"count", "occurrences"} - set(my_df.columns)
    if missing:
        helpers.handle_error(f"Histogram file {file_path} lacks column(s): {', '.join(sorted(missing))}", ConfigError)
    if my_df.empty:
        helpers.handle_error(f"Histogram file {file_path} has no rows", ConfigError)
    count = my_df["count"].to_numpy()
    if np.any(count < 0) or np.any(np.mod(count, 1) != 0) or len(set(count)) != len(count):
        helpers.handle_error("Histogram counts must be distinct nonnegative integers", ConfigError)
    occurrences = np.zeros(int(count.max()) + 1)
    occurrences[count.astype(int)] = my_df["occurrences"].to_numpy()
    return CountHistogram(counts=occurrences)


def to_builtin(value: Any) -> Any:
    """Convert numpy values inside nested containers to plain Python for JSON."""
    if isinstance(value, dict):
        return {str(k): to_builtin(v) for k, v in value.items()}
    if isinstance(value, list | tuple):
        return [to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_builtin(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    return value


def config_header(config: RunConfig) -> str:
    """Resolved configuration as sorted JSON."""
    return json_dumps_sorted(to_builtin(config.data))


def write_csv(df: pd.DataFrame, path: Path, config: RunConfig) -> Path:
    """Write a table preceded by '#' lines holding the resolved configuration."""
    path.parent.mkdir(parents=True, exist_ok=True)
    header = "".join(f"# {line}\n" for line in config_header(config).splitlines())
    with path.open("w", encoding="utf-8", newline="") as handle:
        handle.write(header)
        df.to_csv(handle, index=False, sep=config.data["outputs"]["delimiter"], lineterminator="\n", float_format="%.12g")
    _LOGGER.info("Wrote %s", path)
    return path


def write_json(document: dict[str, Any], path: Path, config: RunConfig) -> Path:
    """Write a JSON document with the resolved configuration under 'config'."""
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"config": to_builtin(config.data), **to_builtin(document)}
    path.write_text(json_dumps_sorted(payload) + "\n", encoding="utf-8")
    _LOGGER.info("Wrote %s", path)
    return path
