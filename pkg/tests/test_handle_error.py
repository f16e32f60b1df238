"""Unit tests for handle_error and the validation helpers."""

import re

import numpy as np
import pytest
from homeassistant.exceptions import HomeAssistantError

from custom_components.ion_ising.helpers import (
    ConfigError,
    FitError,
    IonIsingError,
    NumericalError,
    handle_error,
    is_non_negative,
    is_valid_probability,
    sums_to_one,
    trajectory_rng,
)


def test_handle_error() -> None:
    """
    Test the handle_error function.

    This function calls the handle_error function with a sample error string and checks that it raises a HomeAssistantError with the same error string.
    """
    # Define the sample error string
    error_string = "Sample error message"

    with pytest.raises(
        HomeAssistantError,
        match=re.escape(f"{error_string}"),
    ):
        handle_error(error_string)


def test_handle_error_subclass() -> None:
    """Test that handle_error raises the requested subclass, which is still an IonIsingError."""
    with pytest.raises(FitError) as excinfo:
        handle_error("fit failed", FitError)
    assert isinstance(excinfo.value, NumericalError)
    assert isinstance(excinfo.value, IonIsingError)


def test_handle_error_logs_warning(caplog: pytest.LogCaptureFixture) -> None:
    """Test that the message is logged as a warning before raising."""
    with pytest.raises(ConfigError):
        handle_error("bad value", ConfigError)
    assert "bad value" in caplog.text


def test_is_valid_probability() -> None:
    """Test the probability check."""
    assert is_valid_probability(0.0, "p")
    assert is_valid_probability(1.0, "p")

    with pytest.raises(ConfigError, match=re.escape("Invalid p: 1.5. The value must be between 0 and 1.")):
        is_valid_probability(1.5, "p")


def test_is_non_negative() -> None:
    """Test the non-negative check, including nan."""
    assert is_non_negative(0.0, "rate")

    with pytest.raises(ConfigError, match=re.escape("Invalid rate: -1.0. The value must not be negative.")):
        is_non_negative(-1.0, "rate")
    with pytest.raises(ConfigError):
        is_non_negative(float("nan"), "rate")


def test_sums_to_one() -> None:
    """Test the normalization check."""
    assert sums_to_one([0.25, 0.75], "branch")

    with pytest.raises(ConfigError, match=re.escape("The values must be non-negative and sum to 1.")):
        sums_to_one([0.5, 0.6], "branch")
    with pytest.raises(ConfigError):
        sums_to_one([1.5, -0.5], "branch")


def test_trajectory_rng_is_pure_function_of_seed_and_index() -> None:
    """Test that streams depend only on (base_seed, index)."""
    first = trajectory_rng(42, 7).random(5)
    again = trajectory_rng(42, 7).random(5)
    other_index = trajectory_rng(42, 8).random(5)
    other_seed = trajectory_rng(43, 7).random(5)

    assert np.array_equal(first, again)
    assert not np.array_equal(first, other_index)
    assert not np.array_equal(first, other_seed)
