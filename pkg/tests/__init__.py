"""Tests for the ion_ising integration."""
