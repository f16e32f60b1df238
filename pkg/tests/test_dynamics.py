"""Unit tests for the quantum-trajectory dynamics."""

import re

import numpy as np
import pytest

from custom_components.ion_ising import dynamics
from custom_components.ion_ising.chain import CouplingMatrix
from custom_components.ion_ising.dynamics import (
    JumpChannel,
    NoiseModel,
    RampSchedule,
    SimulationConfig,
    SpinState,
    _emit,
    check_ramp,
    energy,
    evolve_trajectory,
    hamiltonian_apply,
    initial_state,
    max_step,
    run_ensemble,
    run_trajectory,
    sigma_y_sum,
    spin_signs,
)
from custom_components.ion_ising.helpers import ConfigError, trajectory_rng
from custom_components.ion_ising.observables import SpinDistribution, scale_order_params

BINOMIAL_2 = [0.25, 0.5, 0.25]


def short_ramp(n_samples: int = 5) -> RampSchedule:
    """A 100 us ramp from 5 kHz, sampled evenly."""
    return RampSchedule(b0=5.0, tau=20.0, t_final=100.0, sample_times=tuple(np.linspace(0.0, 100.0, n_samples)))


def test_spin_signs_ordering() -> None:
    """The first ion is the most significant bit and bit 0 means up."""
    signs = spin_signs(2)

    np.testing.assert_array_equal(signs, [[1, 1], [1, -1], [-1, 1], [-1, -1]])


def test_sigma_y_single_spin() -> None:
    """sigma_y is [[0, -i], [i, 0]] in the (up, down) basis."""
    np.testing.assert_array_equal(sigma_y_sum(1).toarray(), [[0, -1j], [1j, 0]])


def test_initial_state_binomial() -> None:
    """Every spin along +Y gives a binomial distribution in the X basis."""
    state = initial_state(2)

    assert state.norm == pytest.approx(1.0)
    np.testing.assert_allclose(state.distribution(), BINOMIAL_2)


def test_initial_state_flip_error() -> None:
    """Flipped spins start along -Y; the X distribution is unchanged."""
    state = initial_state(3, flip_error=1.0, rng=trajectory_rng(0, 0))
    field = CouplingMatrix.uniform(3, 0.0)

    assert energy(state, field, 2.0) == pytest.approx(6.0)
    np.testing.assert_allclose(state.distribution(), [0.125, 0.375, 0.375, 0.125])


def test_energy_of_polarized_state() -> None:
    """<H> = -N B for the +Y product state without couplings."""
    state = initial_state(3)

    assert energy(state, CouplingMatrix.uniform(3, 0.0), 2.0) == pytest.approx(-6.0)


def test_hamiltonian_apply_ising_term() -> None:
    """Both spins up: H psi = -(J/2) psi for two ions."""
    coupling = CouplingMatrix.uniform(2, 1.0)
    amplitudes = np.array([1.0, 0.0, 0.0, 0.0], dtype=complex)
    state = SpinState(n_ions=2, active=(0, 1), amplitudes=amplitudes)

    np.testing.assert_allclose(hamiltonian_apply(state, coupling, 0.0), -2j * np.pi * (-0.5) * amplitudes)


def test_hamiltonian_apply_dimension_mismatch() -> None:
    """A state for two ions does not fit a three-ion coupling matrix."""
    with pytest.raises(ConfigError, match=re.escape("Dimension mismatch")):
        hamiltonian_apply(initial_state(2), CouplingMatrix.uniform(3, 1.0), 1.0)


def test_ramp_validation() -> None:
    """B0 >= B_final >= 0 and increasing sample times are required."""
    with pytest.raises(ConfigError, match=re.escape("Need B0 >= B_final >= 0.")):
        RampSchedule(b0=1.0, tau=10.0, t_final=50.0, b_final=2.0)
    with pytest.raises(ConfigError, match=re.escape("Sample times must increase strictly")):
        RampSchedule(b0=1.0, tau=10.0, t_final=50.0, sample_times=(10.0, 5.0))


def test_ramp_field() -> None:
    """The field decays exponentially and is clipped at B_final."""
    ramp = RampSchedule(b0=4.0, tau=10.0, t_final=100.0, b_final=0.5)

    assert ramp.field_at(0.0) == pytest.approx(4.0)
    assert ramp.field_at(10.0) == pytest.approx(4.0 * np.exp(-1))
    assert ramp.field_at(100.0) == pytest.approx(0.5)
    assert ramp.sample_times == (100.0,)


def test_ramp_from_ratios() -> None:
    """Without t_final the ramp stops when B reaches B_final."""
    ramp = RampSchedule.from_ratios(-2.0, b0_over_j=5.0, tau=80.0, b_final_over_j=0.1, n_samples=3)

    assert ramp.b0 == pytest.approx(10.0)
    assert ramp.b_final == pytest.approx(0.2)
    assert ramp.t_final == pytest.approx(80.0 * np.log(50.0))
    assert len(ramp.sample_times) == 3


def test_noise_model_validation() -> None:
    """Branching ratios must sum to one."""
    with pytest.raises(ConfigError, match=re.escape("Invalid branch")):
        NoiseModel(branch=(0.5, 0.5, 0.5))
    with pytest.raises(ConfigError):
        NoiseModel(gamma_se=-1.0)


def test_check_ramp_rejects_start_in_ferromagnet() -> None:
    """The ramp must start in the paramagnet."""
    with pytest.raises(ConfigError, match=re.escape("it must start in the paramagnet")):
        check_ramp(RampSchedule(b0=0.5, tau=10.0, t_final=50.0), CouplingMatrix.uniform(2, 1.0))


def test_check_ramp_warns_below_five(caplog: pytest.LogCaptureFixture) -> None:
    """Starting below 5 |J| logs a warning."""
    check_ramp(RampSchedule(b0=2.0, tau=10.0, t_final=50.0), CouplingMatrix.uniform(2, 1.0))

    assert "below the recommended" in caplog.text


def test_max_step() -> None:
    """The step keeps the phase per step at 0.05 rad."""
    ramp = RampSchedule(b0=5.0, tau=10.0, t_final=50.0)
    h = max_step(CouplingMatrix.uniform(2, 1.0), ramp)

    assert h == pytest.approx(0.05 / (2 * np.pi * 1e-3 * 5.0))


def test_emit_leakage_removes_ion() -> None:
    """Leakage factors the ion out; it is counted up afterwards."""
    state = SpinState(n_ions=2, active=(0, 1), amplitudes=np.array([1.0, 0.0, 0.0, 0.0], dtype=complex))
    leaked = _emit(state, 0, JumpChannel.LEAKAGE)

    assert leaked.active == (1,)
    assert leaked.leaked == (0,)
    np.testing.assert_allclose(leaked.amplitudes, [1.0, 0.0])
    np.testing.assert_allclose(leaked.distribution(), [0.0, 0.0, 1.0])


def test_emit_to_qubit_state() -> None:
    """Emission to |down_z> leaves the ion in an equal up/down superposition."""
    state = SpinState(n_ions=2, active=(0, 1), amplitudes=np.array([1.0, 0.0, 0.0, 0.0], dtype=complex))
    down_z = _emit(state, 0, JumpChannel.EMISSION_DOWN)
    up_z = _emit(state, 0, JumpChannel.EMISSION_UP)

    np.testing.assert_allclose(down_z.amplitudes, np.array([1.0, 0.0, 1.0, 0.0]) / np.sqrt(2))
    np.testing.assert_allclose(up_z.amplitudes, np.array([1.0, 0.0, -1.0, 0.0]) / np.sqrt(2))
    np.testing.assert_allclose(down_z.distribution(), [0.0, 0.5, 0.5])


def test_noiseless_eigenstate_is_stationary() -> None:
    """Without couplings the +Y state is an eigenstate and its distribution never changes."""
    coupling = CouplingMatrix.uniform(2, 0.0)
    record = evolve_trajectory(initial_state(2), coupling, short_ramp(), NoiseModel.noiseless(), 1)

    assert record.jumps == []
    np.testing.assert_allclose(record.samples, np.tile(BINOMIAL_2, (5, 1)), atol=1e-9)


def test_slow_ramp_reaches_ferromagnet() -> None:
    """A slow noiseless ramp of two ions ends close to the GHZ mixture."""
    coupling = CouplingMatrix.uniform(2, 1.0)
    ramp = RampSchedule.from_ratios(coupling.mean_J, b0_over_j=5.0, tau=3000.0, b_final_over_j=0.01)
    record = evolve_trajectory(initial_state(2), coupling, ramp, NoiseModel.noiseless(), 1)

    final = record.samples[-1]
    assert final[0] + final[2] > 0.95
    assert final[0] == pytest.approx(final[2], abs=1e-6)


def test_trajectory_reproducible() -> None:
    """The same seed gives the same jumps and samples."""
    coupling = CouplingMatrix.uniform(2, 1.0)
    noise = NoiseModel(gamma_se=20.0, gamma_deph=20.0)
    first = evolve_trajectory(initial_state(2), coupling, short_ramp(), noise, 11)
    again = evolve_trajectory(initial_state(2), coupling, short_ramp(), noise, 11)

    assert first.jumps == again.jumps
    assert len(first.jumps) > 0
    np.testing.assert_array_equal(first.samples, again.samples)
    np.testing.assert_allclose(first.samples.sum(axis=1), 1.0)


def test_dephasing_only_jump_counts() -> None:
    """Only dephasing jumps occur when emission is off."""
    config = SimulationConfig(
        coupling=CouplingMatrix.uniform(2, 1.0),
        ramp=short_ramp(),
        noise=NoiseModel(gamma_se=0.0, gamma_deph=50.0),
    )
    stats = run_ensemble(config, n_traj=10, base_seed=3)

    assert stats.jump_counts["dephasing"] > 0
    assert stats.jump_counts["emission_down"] == 0
    assert stats.jump_counts["emission_up"] == 0
    assert stats.jump_counts["leakage"] == 0


def test_leakage_only_branch() -> None:
    """With a pure leakage branch every emission leaks the ion."""
    config = SimulationConfig(
        coupling=CouplingMatrix.uniform(2, 1.0),
        ramp=short_ramp(),
        noise=NoiseModel(gamma_se=20.0, gamma_deph=0.0, branch=(0.0, 0.0, 1.0)),
    )
    stats = run_ensemble(config, n_traj=10, base_seed=5)

    assert stats.jump_counts["leakage"] > 0
    assert stats.jump_counts["emission_down"] == 0
    assert stats.jump_counts["emission_up"] == 0
    np.testing.assert_allclose(stats.p.sum(axis=1), 1.0)


def test_run_ensemble_statistics() -> None:
    """Distributions are normalized, errors non-negative and the field ratio starts at B0/|J|."""
    coupling = CouplingMatrix.uniform(2, 1.0)
    config = SimulationConfig(coupling=coupling, ramp=short_ramp(), noise=NoiseModel(gamma_se=5.0, gamma_deph=5.0))
    stats = run_ensemble(config, n_traj=16, base_seed=9)

    np.testing.assert_allclose(stats.p.sum(axis=1), 1.0)
    assert np.all(stats.sem >= 0)
    assert stats.b_over_j[0] == pytest.approx(5.0)
    assert stats.moments.shape == (5, 4)
    assert stats.moment_cov.shape == (5, 4, 4)


def test_run_ensemble_independent_of_worker_count() -> None:
    """Results are bit-identical for one and two workers."""
    config = SimulationConfig(
        coupling=CouplingMatrix.uniform(2, 1.0), ramp=short_ramp(), noise=NoiseModel(gamma_se=10.0, gamma_deph=10.0)
    )
    single = run_ensemble(config, n_traj=8, base_seed=21, workers=1)
    pooled = run_ensemble(config, n_traj=8, base_seed=21, workers=2)

    assert np.array_equal(single.p, pooled.p)
    assert np.array_equal(single.moments, pooled.moments)
    assert single.jump_counts == pooled.jump_counts


def test_run_ensemble_invalid_arguments() -> None:
    """At least one trajectory and one worker are needed."""
    config = SimulationConfig(coupling=CouplingMatrix.uniform(2, 1.0), ramp=short_ramp())

    with pytest.raises(ConfigError, match=re.escape("Invalid n_traj: 0")):
        run_ensemble(config, n_traj=0, base_seed=0)
    with pytest.raises(ConfigError, match=re.escape("Invalid workers: 0")):
        run_ensemble(config, n_traj=1, base_seed=0, workers=0)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_very_slow_ramp_is_adiabatic(n: int) -> None:
    """A hundredfold slower noiseless ramp ends with scaled m_x of at least 0.999."""
    coupling = CouplingMatrix.uniform(n, 1.0)
    ramp = RampSchedule.from_ratios(coupling.mean_J, b0_over_j=20.0, tau=8000.0, b_final_over_j=0.01)
    record = evolve_trajectory(initial_state(n), coupling, ramp, NoiseModel.noiseless(), 1)

    assert scale_order_params(SpinDistribution(n=n, p=record.samples[-1])).m_x_scaled >= 0.999


def test_energy_conserved_with_frozen_field() -> None:
    """Without noise and with B held fixed <H> is conserved to 1e-8."""
    coupling = CouplingMatrix.uniform(2, 1.0)
    ramp = RampSchedule(b0=2.0, tau=10.0, t_final=50.0, b_final=2.0)
    start = initial_state(2)
    record = evolve_trajectory(start, coupling, ramp, NoiseModel.noiseless(), 1)

    assert record.jumps == []
    assert energy(record.final, coupling, 2.0) == pytest.approx(energy(start, coupling, 2.0), rel=1e-8)


def test_dephasing_leaves_ghz_distribution_unchanged() -> None:
    """At B = 0 dephasing jumps only flip the GHZ phase; P(s) stays at the even mixture."""
    amplitudes = np.zeros(8, dtype=complex)
    amplitudes[[0, 7]] = 1 / np.sqrt(2)
    ghz = SpinState(n_ions=3, active=(0, 1, 2), amplitudes=amplitudes)
    ramp = RampSchedule(b0=0.0, tau=10.0, t_final=100.0, sample_times=tuple(np.linspace(0.0, 100.0, 5)))
    record = evolve_trajectory(ghz, CouplingMatrix.uniform(3, 1.0), ramp, NoiseModel(gamma_se=0.0, gamma_deph=50.0), 4)

    assert len(record.jumps) > 0
    assert {jump.channel for jump in record.jumps} == {JumpChannel.DEPHASING}
    np.testing.assert_allclose(record.samples, np.tile([0.5, 0.0, 0.0, 0.5], (5, 1)), atol=1e-9)


def test_cached_steps_match_direct_integration(monkeypatch: pytest.MonkeyPatch) -> None:
    """Precomputed step matrices give the same trajectory as stepping RK4 directly."""
    coupling = CouplingMatrix.uniform(2, 1.0)
    noise = NoiseModel(gamma_se=20.0, gamma_deph=20.0)
    cached = evolve_trajectory(initial_state(2), coupling, short_ramp(), noise, 11)
    monkeypatch.setattr(dynamics, "MAX_CACHED_DIMENSION", 0)
    direct = evolve_trajectory(initial_state(2), coupling, short_ramp(), noise, 11)

    assert [jump.channel for jump in cached.jumps] == [jump.channel for jump in direct.jumps]
    np.testing.assert_allclose([jump.time for jump in cached.jumps], [jump.time for jump in direct.jumps], atol=1e-6)
    np.testing.assert_allclose(cached.samples, direct.samples, atol=1e-9)


def test_cached_blocks_dropped_for_long_ramps(monkeypatch: pytest.MonkeyPatch) -> None:
    """Step matrices are rebuilt block by block when the ramp needs more than the kept budget."""
    coupling = CouplingMatrix.uniform(2, 1.0)
    kept = evolve_trajectory(initial_state(2), coupling, short_ramp(), NoiseModel.noiseless(), 1)
    monkeypatch.setattr(dynamics, "STEP_BLOCK_ENTRIES", 64)
    monkeypatch.setattr(dynamics, "MAX_KEPT_STEP_ENTRIES", 64)
    rebuilt = evolve_trajectory(initial_state(2), coupling, short_ramp(), NoiseModel.noiseless(), 1)

    np.testing.assert_allclose(kept.samples, rebuilt.samples, atol=1e-12)


def test_run_trajectory_seed() -> None:
    """A trajectory records its (base_seed, index) pair and is reproducible from it."""
    config = SimulationConfig(
        coupling=CouplingMatrix.uniform(2, 1.0), ramp=short_ramp(), noise=NoiseModel(gamma_se=20.0, gamma_deph=20.0)
    )
    record = run_trajectory(config, 7, 3)
    again = run_trajectory(config, 7, 3)

    assert record.seed == (7, 3)
    assert record.jumps == again.jumps
    np.testing.assert_array_equal(record.samples, again.samples)
