"""The ion_ising integration."""

from collections.abc import Callable
from pathlib import Path
from typing import Any

from homeassistant.core import HomeAssistant, ServiceCall
from homeassistant.helpers import config_validation as cv
from homeassistant.helpers.typing import ConfigType

from custom_components.ion_ising import commands, prepare_data
from custom_components.ion_ising.const import (
    ATTR_CONFIG_FILE,
    ATTR_DECIMAL,
    ATTR_DELIMITER,
    ATTR_HISTOGRAM_FILE,
    ATTR_N_IONS,
    ATTR_N_TRAJ,
    ATTR_OUTPUT_DIR,
    ATTR_SEED,
    ATTR_WORKERS,
    DEFAULT_OUTPUT_DIR,
    DOMAIN,
    SERVICES,
)
from custom_components.ion_ising.helpers import _LOGGER

# Use empty_config_schema because the component does not have any config options
CONFIG_SCHEMA = cv.empty_config_schema(DOMAIN)


def setup(hass: HomeAssistant, config: ConfigType) -> bool:  # pylint: disable=unused-argument  # noqa: ARG001
    """Set up is called when Home Assistant is loading our component."""
    for name in SERVICES:
        hass.services.register(DOMAIN, name, make_handler(hass, name))

    # Return boolean to indicate that initialization was successful.
    return True


def make_handler(hass: HomeAssistant, name: str) -> Callable[[ServiceCall], None]:
    """Create the service handler running one command."""

    def handle_command(call: ServiceCall) -> None:
        """
        Handle the service call.

        This method is the only method which needs the hass object, all other methods are independent of it.
        """
        _LOGGER.info("Service %s called", name)
        root = Path(hass.config.config_dir)
        config_file = call.data.get(ATTR_CONFIG_FILE)
        config_path = str(root / config_file) if config_file else None
        output_dir = root / call.data.get(ATTR_OUTPUT_DIR, DEFAULT_OUTPUT_DIR)

        hass.states.set(f"{DOMAIN}.{name}", str(output_dir))

        run_config = prepare_data.load_run_config(config_path, service_overrides(call, root, output_dir))
        commands.COMMANDS[name](run_config)
        _LOGGER.info("Finished %s, outputs in %s", name, output_dir)

    return handle_command


def service_overrides(call: ServiceCall, root: Path, output_dir: Path) -> dict[str, Any]:
    """
    Translate service call fields into configuration overrides.

    Args:
    ----
        call: The service call.
        root: Home Assistant configuration directory.
        output_dir: Resolved output directory.

    Returns:
    -------
        dict: Dotted configuration keys mapped to values.

    """
    overrides: dict[str, Any] = {"outputs.directory": str(output_dir)}
    if ATTR_N_IONS in call.data:
        overrides["trap.n_ions"] = call.data[ATTR_N_IONS]
        for section in ("sweep", "dicke", "bench"):
            overrides[f"{section}.n_ions"] = [call.data[ATTR_N_IONS]]
    if ATTR_N_TRAJ in call.data:
        overrides["ensemble.n_traj"] = call.data[ATTR_N_TRAJ]
    if ATTR_SEED in call.data:
        overrides["ensemble.seed"] = call.data[ATTR_SEED]
    if ATTR_WORKERS in call.data:
        overrides["ensemble.workers"] = call.data[ATTR_WORKERS]
    if ATTR_HISTOGRAM_FILE in call.data:
        overrides["detection.histogram_file"] = str(root / call.data[ATTR_HISTOGRAM_FILE])
    if ATTR_DELIMITER in call.data:
        overrides["detection.delimiter"] = call.data[ATTR_DELIMITER]
    if ATTR_DECIMAL in call.data:
        overrides["detection.decimal"] = "," if call.data[ATTR_DECIMAL] else "."
    return overrides
