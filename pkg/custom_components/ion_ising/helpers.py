"""Helpers for the ion_ising integration."""

import logging
import math
from collections.abc import Sequence

import numpy as np
from homeassistant.exceptions import HomeAssistantError

_LOGGER = logging.getLogger(__name__)


class IonIsingError(HomeAssistantError):
    """Base class for all errors of the simulator."""


class ConfigError(IonIsingError):
    """Invalid or inconsistent configuration."""


class NumericalError(IonIsingError):
    """A numerical routine failed."""


class SolverFailureError(NumericalError):
    """An iterative solver did not converge."""


class StabilityError(NumericalError):
    """The ion chain is not stable for the given trap."""


class ResonanceError(NumericalError):
    """The beatnote detuning sits on a normal mode."""


class UndefinedCumulantError(NumericalError):
    """The Binder cumulant has a vanishing denominator."""


class IntegratorError(NumericalError):
    """The trajectory or master-equation integration failed."""


class FitError(NumericalError):
    """A detection histogram could not be fitted."""


class AcceptanceError(IonIsingError):
    """A comparison against a reference failed."""


def handle_error(error_string: str, error_type: type[IonIsingError] = IonIsingError) -> None:
    """
    Handle an error by logging a warning and raising an IonIsingError.

    Args:
    ----
        error_string (str): The error message.
        error_type: The IonIsingError subclass to raise.

    Raises:
    ------
        IonIsingError: The raised exception containing the error message.

    """
    _LOGGER.warning(error_string)
    raise error_type(error_string)


def is_valid_probability(value: float, name: str) -> bool:
    """
    Check if the given value is a probability.

    Args:
    ----
        value: The value to check.
        name: Name of the value, used in the error message.

    Returns:
    -------
        bool: True if the value is in [0, 1], otherwise an exception is thrown.

    Raises:
    ------
        ConfigError: If the value is outside [0, 1] or not finite.

    """
    if not (math.isfinite(value) and 0.0 <= value <= 1.0):
        handle_error(f"Invalid {name}: {value}. The value must be between 0 and 1.", ConfigError)
    return True


def is_non_negative(value: float, name: str) -> bool:
    """
    Check if the given value is a finite, non-negative number.

    Args:
    ----
        value: The value to check.
        name: Name of the value, used in the error message.

    Returns:
    -------
        bool: True if the value is >= 0, otherwise an exception is thrown.

    Raises:
    ------
        ConfigError: If the value is negative or not finite.

    """
    if not (math.isfinite(value) and value >= 0.0):
        handle_error(f"Invalid {name}: {value}. The value must not be negative.", ConfigError)
    return True


def sums_to_one(values: Sequence[float], name: str, tolerance: float = 1e-9) -> bool:
    """
    Check that a set of probabilities is normalized.

    Args:
    ----
        values: The probabilities.
        name: Name of the set, used in the error message.
        tolerance: Allowed deviation of the sum from one.

    Returns:
    -------
        bool: True if all values are >= 0 and the sum is one, otherwise an exception is thrown.

    Raises:
    ------
        ConfigError: If a value is negative or the sum deviates from one.

    """
    arr = np.asarray(values, dtype=float)
    if np.any(arr < 0.0) or abs(float(arr.sum()) - 1.0) > tolerance:
        handle_error(f"Invalid {name}: {list(arr)}. The values must be non-negative and sum to 1.", ConfigError)
    return True


def trajectory_rng(base_seed: int, index: int) -> np.random.Generator:
    """
    Return the random generator of one trajectory or resampling draw.

    The stream is a pure function of (base_seed, index): a Philox counter-based
    generator keyed by a spawned SeedSequence.
    """
    seq = np.random.SeedSequence(entropy=int(base_seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(seq))
