"""
Quantum-trajectory evolution of the transverse-field Ising ramp.

States are stored in the sigma_x product basis: bit value 0 of an ion is |up>
(sigma_x = +1), bit value 1 is |down>, the first active ion is the most
significant bit. The Ising term is diagonal in this basis and sigma_y is
[[0, -i], [i, 0]] per ion.
"""

from __future__ import annotations

import functools
import math
import multiprocessing
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy import sparse

from custom_components.ion_ising.chain import CouplingMatrix
from custom_components.ion_ising.const import (
    DEFAULT_BRANCH,
    DEFAULT_GAMMA_DEPH,
    DEFAULT_GAMMA_SE,
    JUMP_TIME_RESOLUTION,
    KHZ_US_TO_RAD,
    MAX_CACHED_DIMENSION,
    MAX_KEPT_STEP_ENTRIES,
    MAX_PHASE_PER_STEP,
    MIN_B0_OVER_J,
    NORM_DRIFT_TOLERANCE,
    PER_MS_TO_PER_US,
    STEP_BLOCK_ENTRIES,
    WARN_B0_OVER_J,
)
from custom_components.ion_ising.helpers import (
    _LOGGER,
    ConfigError,
    IntegratorError,
    IonIsingError,
    handle_error,
    is_non_negative,
    is_valid_probability,
    sums_to_one,
    trajectory_rng,
)

SQRT_HALF = 1 / math.sqrt(2)


class JumpChannel(Enum):
    """Quantum jump channels of one ion."""

    DEPHASING = 1
    EMISSION_DOWN = 2
    EMISSION_UP = 3
    LEAKAGE = 4


@dataclass(frozen=True)
class RampSchedule:
    """Exponential field ramp B(t) = max(B0 exp(-t/tau), B_final); times in us, fields in kHz."""

    b0: float
    tau: float
    t_final: float
    b_final: float = 0.0
    sample_times: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        """Validate the ramp and default the sample grid to the end point."""
        if not self.b0 >= self.b_final >= 0:
            handle_error(f"Invalid ramp: B0={self.b0}, B_final={self.b_final}. Need B0 >= B_final >= 0.", ConfigError)
        if self.tau <= 0 or self.t_final <= 0:
            handle_error(f"Invalid ramp: tau={self.tau}, t_final={self.t_final}. Both must be positive.", ConfigError)
        times = tuple(float(t) for t in self.sample_times) or (float(self.t_final),)
        if any(b <= a for a, b in zip(times, times[1:], strict=False)) or times[0] < 0 or times[-1] > self.t_final:
            handle_error(f"Sample times must increase strictly within [0, {self.t_final}] us", ConfigError)
        object.__setattr__(self, "sample_times", times)

    def field_at(self, t: float) -> float:
        """Transverse field at time t (kHz)."""
        return max(self.b0 * math.exp(-t / self.tau), self.b_final)

    @classmethod
    def from_ratios(
        cls,
        mean_j: float,
        b0_over_j: float,
        tau: float,
        b_final_over_j: float = 0.0,
        t_final: float | None = None,
        n_samples: int = 1,
    ) -> RampSchedule:
        """
        Build a ramp with fields given in units of |J|.

        Without t_final the ramp runs until B reaches B_final, or for ten time
        constants when B_final is zero. Samples are spread evenly in time.
        """
        b0 = b0_over_j * abs(mean_j)
        b_final = b_final_over_j * abs(mean_j)
        if t_final is None:
            t_final = tau * math.log(b0_over_j / b_final_over_j) if b_final_over_j > 0 else 10 * tau
        samples = tuple(np.linspace(0.0, t_final, max(n_samples, 1))) if n_samples > 1 else (t_final,)
        return cls(b0=b0, tau=tau, t_final=t_final, b_final=b_final, sample_times=samples)


@dataclass(frozen=True)
class NoiseModel:
    """Jump rates per ion (1/ms), post-emission branching and preparation error."""

    gamma_se: float = DEFAULT_GAMMA_SE
    gamma_deph: float = DEFAULT_GAMMA_DEPH
    branch: tuple[float, float, float] = DEFAULT_BRANCH
    flip_error: float = 0.0

    def __post_init__(self) -> None:
        """Validate rates and probabilities."""
        is_non_negative(self.gamma_se, "gamma_se")
        is_non_negative(self.gamma_deph, "gamma_deph")
        if len(self.branch) != 3:
            handle_error(f"Invalid branch: {self.branch}. Expected (p_down, p_up, p_leak).", ConfigError)
        sums_to_one(self.branch, "branch")
        is_valid_probability(self.flip_error, "flip_error")

    @classmethod
    def noiseless(cls) -> NoiseModel:
        """No jumps and perfect preparation."""
        return cls(gamma_se=0.0, gamma_deph=0.0)


@dataclass
class SpinState:
    """Amplitudes over the active ions plus the ions factored out by leakage."""

    n_ions: int
    active: tuple[int, ...]
    amplitudes: np.ndarray
    leaked: tuple[int, ...] = ()

    @property
    def norm(self) -> float:
        """Squared norm of the amplitude vector."""
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def distribution(self) -> np.ndarray:
        """P(s) over the number of up spins, leaked ions counted up."""
        return spin_distribution(self.amplitudes, len(self.active), len(self.leaked), self.n_ions)


@dataclass(frozen=True)
class Jump:
    """One quantum jump of a trajectory."""

    time: float
    ion: int
    channel: JumpChannel


@dataclass
class TrajectoryRecord:
    """Jump ledger, sampled P(s) and final state of one trajectory."""

    seed: int | tuple[int, int] | None
    jumps: list[Jump]
    samples: np.ndarray
    final: SpinState | None = None


@dataclass(frozen=True)
class SimulationConfig:
    """Everything a trajectory needs besides its random stream."""

    coupling: CouplingMatrix
    ramp: RampSchedule
    noise: NoiseModel = field(default_factory=NoiseModel)

    @property
    def n_ions(self) -> int:
        """Number of ions."""
        return self.coupling.n_ions


@dataclass
class EnsembleStats:
    """
    Trajectory-averaged P(s) per sample time.

    moments holds, per sample time, the mean of the per-trajectory quantities
    (|M|/N, M^2, M^4, P(FM)) with M = N - 2s; moment_cov holds the covariance
    of those means (sample covariance / n_traj).
    """

    n_ions: int
    n_traj: int
    base_seed: int
    times: np.ndarray
    fields: np.ndarray
    b_over_j: np.ndarray
    p: np.ndarray
    sem: np.ndarray
    moments: np.ndarray
    moment_cov: np.ndarray
    jump_counts: dict[str, int]


@functools.lru_cache(maxsize=32)
def spin_signs(n_active: int) -> np.ndarray:
    """sigma_x eigenvalue (+1/-1) of every ion for every basis index, shape (2^A, A)."""
    index = np.arange(2**n_active)[:, None]
    shifts = np.arange(n_active - 1, -1, -1)[None, :]
    signs = 1 - 2 * ((index >> shifts) & 1)
    signs = signs.astype(float)
    signs.setflags(write=False)
    return signs


@functools.lru_cache(maxsize=32)
def sigma_y_sum(n_active: int) -> sparse.csr_matrix:
    """Sparse sum_i sigma_y^i in the sigma_x product basis."""
    dim = 2**n_active
    if n_active == 0:
        return sparse.csr_matrix((1, 1), dtype=complex)
    index = np.arange(dim)
    rows, cols, vals = [], [], []
    for p in range(n_active):
        bit = 1 << (n_active - 1 - p)
        is_down = (index & bit) != 0
        rows.append(index)
        cols.append(index ^ bit)
        # <up|sigma_y|down> = -i, <down|sigma_y|up> = +i
        vals.append(np.where(is_down, 1j, -1j))
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dim, dim),
    )


def ising_energies(active: tuple[int, ...], coupling: CouplingMatrix) -> np.ndarray:
    """Diagonal of -(1/N) sum_{i<j} J_ij sigma_x^i sigma_x^j over the active ions (kHz)."""
    signs = spin_signs(len(active))
    if len(active) < 2:
        return np.zeros(signs.shape[0])
    j_sub = coupling.J[np.ix_(active, active)]
    return -np.einsum("ki,ij,kj->k", signs, j_sub, signs) / (2 * coupling.n_ions)


def spin_distribution(amplitudes: np.ndarray, n_active: int, n_leaked: int, n_ions: int) -> np.ndarray:
    """Normalized P(s) of a (possibly unnormalized) state vector."""
    probs = np.abs(amplitudes) ** 2
    probs = probs / probs.sum()
    n_up = (spin_signs(n_active) > 0).sum(axis=1) + n_leaked
    return np.bincount(n_up, weights=probs, minlength=n_ions + 1)


def initial_state(n: int, flip_error: float = 0.0, rng: np.random.Generator | None = None) -> SpinState:
    """
    Product state with every spin along +Y.

    Args:
    ----
        n: Number of ions.
        flip_error: Probability that a spin starts along -Y instead.
        rng: Random generator deciding the flips.

    Returns:
    -------
        SpinState: (|up> + i|down>)/sqrt(2) per spin, (|up> - i|down>)/sqrt(2) for flipped spins.

    """
    is_valid_probability(flip_error, "flip_error")
    rng = rng if rng is not None else np.random.default_rng()
    flips = rng.random(n) < flip_error
    plus_y = np.array([1.0, 1.0j]) * SQRT_HALF
    minus_y = np.array([1.0, -1.0j]) * SQRT_HALF
    amplitudes = functools.reduce(np.kron, [minus_y if f else plus_y for f in flips], np.ones(1, dtype=complex))
    return SpinState(n_ions=n, active=tuple(range(n)), amplitudes=amplitudes)


def _check_dimensions(state: SpinState, coupling: CouplingMatrix) -> None:
    if coupling.n_ions != state.n_ions or state.amplitudes.shape != (2 ** len(state.active),):
        handle_error(
            f"Dimension mismatch: {state.n_ions} ions with {len(state.active)} active and "
            f"{state.amplitudes.shape[0]} amplitudes against a {coupling.n_ions}-ion coupling matrix",
            ConfigError,
        )


def hamiltonian_apply(state: SpinState, coupling: CouplingMatrix, b: float) -> np.ndarray:
    """
    Apply -i 2 pi H to the state, H = -(1/N) sum J_ij sx sx - B sum sy in kHz.

    Couplings of leaked ions are dropped. The result is d psi / dt in 1/ms.
    """
    _check_dimensions(state, coupling)
    psi = state.amplitudes
    h_psi = ising_energies(state.active, coupling) * psi - b * (sigma_y_sum(len(state.active)) @ psi)
    return -2j * np.pi * h_psi


def energy(state: SpinState, coupling: CouplingMatrix, b: float) -> float:
    """Expectation value <H> in kHz."""
    _check_dimensions(state, coupling)
    psi = state.amplitudes
    h_psi = ising_energies(state.active, coupling) * psi - b * (sigma_y_sum(len(state.active)) @ psi)
    return float(np.vdot(psi, h_psi).real / state.norm)


def check_ramp(ramp: RampSchedule, coupling: CouplingMatrix) -> None:
    """Require B0 >= |J| and warn below the recommended 5 |J|."""
    if coupling.mean_J == 0:
        return
    ratio = ramp.b0 / abs(coupling.mean_J)
    if ratio < MIN_B0_OVER_J:
        handle_error(f"Ramp starts at B0/|J| = {ratio:.3f}; it must start in the paramagnet (B0/|J| >= 1)", ConfigError)
    if ratio < WARN_B0_OVER_J:
        _LOGGER.warning("Ramp starts at B0/|J| = %.3f, below the recommended %.1f", ratio, WARN_B0_OVER_J)


def max_step(coupling: CouplingMatrix, ramp: RampSchedule, noise: NoiseModel | None = None) -> float:
    """Largest RK4 step (us) keeping the per-ion phase and decay per step below MAX_PHASE_PER_STEP."""
    scale = KHZ_US_TO_RAD * max(ramp.b0, coupling.n_ions * float(np.max(np.abs(coupling.J), initial=0.0)))
    if noise is not None:
        scale = max(scale, coupling.n_ions * (2 * noise.gamma_se + noise.gamma_deph) * PER_MS_TO_PER_US)
    if scale == 0:
        return ramp.t_final
    return MAX_PHASE_PER_STEP / scale


def _time_grid(ramp: RampSchedule, h_max: float) -> tuple[np.ndarray, list[int]]:
    """Step grid hitting every sample time and t_final, and the grid index of each sample time."""
    targets = list(ramp.sample_times)
    if targets[-1] < ramp.t_final:
        targets.append(ramp.t_final)
    points = [0.0]
    indices = []
    for target in targets:
        start = points[-1]
        if target > start:
            n_steps = max(1, math.ceil((target - start) / h_max - 1e-12))
            points.extend(start + (target - start) * np.arange(1, n_steps + 1) / n_steps)
            points[-1] = target
        indices.append(len(points) - 1)
    return np.asarray(points), indices[: len(ramp.sample_times)]


class _Propagator:
    """Non-Hermitian generator for one active set; times in us."""

    def __init__(self, active: tuple[int, ...], n_leaked: int, config: SimulationConfig, grid: np.ndarray) -> None:
        n_active = len(active)
        noise = config.noise
        self.signs = spin_signs(n_active)
        self.y_sum = sigma_y_sum(n_active)
        self.ramp = config.ramp
        self.grid = grid
        self.gamma_se = noise.gamma_se * PER_MS_TO_PER_US
        self.gamma_deph = noise.gamma_deph * PER_MS_TO_PER_US
        # sum_b c_b^dag c_b = gamma_se (1 + sigma_x) per ion, sigma_x^dag sigma_x = 1
        decay = self.gamma_se * (1.0 + self.signs).sum(axis=1) + self.gamma_deph * n_active
        self.diagonal = -1j * KHZ_US_TO_RAD * ising_energies(active, config.coupling) - 0.5 * decay
        self.can_jump = bool(np.any(decay > 0))
        self.n_up = (self.signs > 0).sum(axis=1) + n_leaked
        dim = 2**n_active
        self.cached = dim <= MAX_CACHED_DIMENSION
        self.block_size = max(1, STEP_BLOCK_ENTRIES // dim**2)
        self.keep_blocks = (grid.size - 1) * dim**2 <= MAX_KEPT_STEP_ENTRIES
        self._blocks: dict[int, np.ndarray] = {}

    def rhs(self, t: float, psi: np.ndarray) -> np.ndarray:
        return (self.diagonal * psi.T).T + (1j * KHZ_US_TO_RAD * self.ramp.field_at(t)) * (self.y_sum @ psi)

    def step(self, t: float, psi: np.ndarray, h: float) -> np.ndarray:
        k1 = self.rhs(t, psi)
        k2 = self.rhs(t + 0.5 * h, psi + 0.5 * h * k1)
        k3 = self.rhs(t + 0.5 * h, psi + 0.5 * h * k2)
        k4 = self.rhs(t + h, psi + h * k3)
        return psi + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    def _step_matrices(self, start: int, stop: int) -> np.ndarray:
        """RK4 maps of grid steps start..stop-1 at once, shape (stop - start, dim, dim)."""
        starts = self.grid[start:stop]
        h = (self.grid[start + 1 : stop + 1] - starts)[:, None, None]
        y = self.y_sum.toarray()
        eye = np.eye(y.shape[0], dtype=complex)

        def generator(times: np.ndarray) -> np.ndarray:
            fields = np.array([self.ramp.field_at(t) for t in times])
            return np.diag(self.diagonal)[None] + (1j * KHZ_US_TO_RAD * fields)[:, None, None] * y[None]

        a_mid = generator(starts + 0.5 * h[:, 0, 0])
        k1 = generator(starts)
        k2 = a_mid @ (eye + 0.5 * h * k1)
        k3 = a_mid @ (eye + 0.5 * h * k2)
        k4 = generator(starts + h[:, 0, 0]) @ (eye + h * k3)
        return eye + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    def grid_step(self, k: int, psi: np.ndarray) -> np.ndarray:
        """Advance psi from grid point k to k + 1."""
        if not self.cached:
            return self.step(self.grid[k], psi, self.grid[k + 1] - self.grid[k])
        block, offset = divmod(k, self.block_size)
        matrices = self._blocks.get(block)
        if matrices is None:
            if not self.keep_blocks:
                self._blocks.clear()
            start = block * self.block_size
            matrices = self._step_matrices(start, min(start + self.block_size, self.grid.size - 1))
            self._blocks[block] = matrices
        return matrices[offset] @ psi

    def jump_rates(self, probs: np.ndarray) -> np.ndarray:
        """Emission rates per ion followed by dephasing rates per ion."""
        p_up = (probs[:, None] * (self.signs > 0)).sum(axis=0)
        return np.concatenate([2 * self.gamma_se * p_up, np.full(self.signs.shape[1], self.gamma_deph)])


def _emit(state: SpinState, position: int, channel: JumpChannel) -> SpinState:
    """Project ion `position` with <up_z| + <down_z| and place it in its post-emission state."""
    n_active = len(state.active)
    tensor = state.amplitudes.reshape((2,) * n_active)
    rest = np.take(tensor, 0, axis=position)
    if channel is JumpChannel.LEAKAGE:
        active = state.active[:position] + state.active[position + 1 :]
        leaked = state.leaked + (state.active[position],)
        amplitudes = np.asarray(rest, dtype=complex).reshape(-1)
    else:
        # |down_z> = (|up> + |down>)/sqrt2, |up_z> = (|up> - |down>)/sqrt2
        sign = 1.0 if channel is JumpChannel.EMISSION_DOWN else -1.0
        amplitudes = np.stack([rest, sign * rest], axis=position).reshape(-1) * SQRT_HALF
        active, leaked = state.active, state.leaked
    amplitudes = amplitudes / math.sqrt(np.vdot(amplitudes, amplitudes).real)
    return SpinState(n_ions=state.n_ions, active=active, amplitudes=amplitudes, leaked=leaked)


def evolve_trajectory(
    state: SpinState,
    coupling: CouplingMatrix,
    ramp: RampSchedule,
    noise: NoiseModel,
    rng: np.random.Generator | int,
    cache: dict[tuple[int, ...], _Propagator] | None = None,
) -> TrajectoryRecord:
    """
    Monte-Carlo wave-function evolution through the ramp.

    The state is integrated under H - (i/2) sum c^dag c with RK4 on a fixed step
    grid through the sample times. When the squared norm drops below a
    pre-drawn uniform threshold the jump time is refined by bisection, a channel
    is drawn proportional to its rate, the jump is applied and the state
    renormalized. The rest of the interrupted step is taken from the jump time.

    Args:
    ----
        state: Initial state (not modified).
        coupling: Ising couplings of all ions.
        ramp: Field schedule and sample grid.
        noise: Jump rates and branching.
        rng: Random generator, or an integer seed for one.
        cache: Propagators per active set, shared by trajectories of one
            configuration so the precomputed step matrices are reused.

    Returns:
    -------
        TrajectoryRecord: Jumps and the exact P(s) at each sample time.

    Raises:
    ------
        IntegratorError: On non-finite amplitudes or norm growth between jumps.

    """
    _check_dimensions(state, coupling)
    seed = rng if isinstance(rng, int) else None
    if not isinstance(rng, np.random.Generator):
        rng = trajectory_rng(rng, 0)
    config = SimulationConfig(coupling=coupling, ramp=ramp, noise=noise)
    h_max = max_step(coupling, ramp, noise)
    resolution = JUMP_TIME_RESOLUTION * h_max
    grid, sample_steps = _time_grid(ramp, h_max)
    slots = {step: k for k, step in enumerate(sample_steps)}
    n = state.n_ions

    propagators = cache if cache is not None else {}

    def propagator(current: SpinState) -> _Propagator:
        if current.active not in propagators:
            propagators[current.active] = _Propagator(current.active, len(current.leaked), config, grid)
        return propagators[current.active]

    psi = state.amplitudes / math.sqrt(state.norm)
    state = replace(state, amplitudes=psi)
    prop = propagator(state)
    jumps: list[Jump] = []
    samples = np.zeros((len(sample_steps), n + 1))
    threshold = rng.random()
    running_norm = 1.0

    def record(slot: int) -> None:
        probs = np.abs(psi) ** 2
        samples[slot] = np.bincount(prop.n_up, weights=probs / probs.sum(), minlength=n + 1)

    if 0 in slots:
        record(slots[0])

    for k in range(grid.size - 1):
        t, t_next = float(grid[k]), float(grid[k + 1])
        new = prop.grid_step(k, psi)
        while True:
            norm = float(np.vdot(new, new).real)
            if not math.isfinite(norm):
                handle_error(f"Non-finite state at t={t:.6g} us", IntegratorError)
            if norm > running_norm + NORM_DRIFT_TOLERANCE:
                handle_error(f"Norm grew from {running_norm:.12f} to {norm:.12f} at t={t:.6g} us", IntegratorError)
            if norm >= threshold or not prop.can_jump:
                psi, running_norm = new, norm
                break

            lo, hi, psi_hi = 0.0, t_next - t, new
            while hi - lo > resolution:
                mid = 0.5 * (lo + hi)
                trial = prop.step(t, psi, mid)
                if float(np.vdot(trial, trial).real) < threshold:
                    hi, psi_hi = mid, trial
                else:
                    lo = mid
            t = t + hi
            psi_hi = psi_hi / math.sqrt(np.vdot(psi_hi, psi_hi).real)
            rates = prop.jump_rates(np.abs(psi_hi) ** 2)
            choice = int(rng.choice(rates.size, p=rates / rates.sum()))
            n_active = len(state.active)
            position = choice % n_active
            current = replace(state, amplitudes=psi_hi)
            if choice >= n_active:
                channel = JumpChannel.DEPHASING
                current = replace(current, amplitudes=psi_hi * prop.signs[:, position])
            else:
                channel = (JumpChannel.EMISSION_DOWN, JumpChannel.EMISSION_UP, JumpChannel.LEAKAGE)[
                    int(rng.choice(3, p=noise.branch))
                ]
                current = _emit(current, position, channel)
            jumps.append(Jump(time=t, ion=state.active[position], channel=channel))
            state = current
            psi = state.amplitudes
            prop = propagator(state)
            threshold = rng.random()
            running_norm = 1.0
            if t >= t_next:
                break
            new = prop.step(t, psi, t_next - t)

        if k + 1 in slots:
            record(slots[k + 1])

    final = replace(state, amplitudes=psi / math.sqrt(np.vdot(psi, psi).real))
    return TrajectoryRecord(seed=seed, jumps=jumps, samples=samples, final=final)


def run_trajectory(
    config: SimulationConfig,
    base_seed: int,
    index: int,
    cache: dict[tuple[int, ...], _Propagator] | None = None,
) -> TrajectoryRecord:
    """Trajectory `index` of the ensemble seeded with base_seed, preparation included."""
    rng = trajectory_rng(base_seed, index)
    try:
        state = initial_state(config.n_ions, config.noise.flip_error, rng)
        record = evolve_trajectory(state, config.coupling, config.ramp, config.noise, rng, cache)
    except IonIsingError as err:
        msg = f"Trajectory {index} failed: {err}"
        raise IntegratorError(msg) from err
    return replace(record, seed=(base_seed, index))


def _run_chunk(args: tuple[SimulationConfig, int, int, int]) -> tuple[np.ndarray, np.ndarray]:
    config, base_seed, start, stop = args
    samples = np.zeros((stop - start, len(config.ramp.sample_times), config.n_ions + 1))
    counts = np.zeros(len(JumpChannel), dtype=np.int64)
    cache: dict[tuple[int, ...], _Propagator] = {}
    for offset, index in enumerate(range(start, stop)):
        record = run_trajectory(config, base_seed, index, cache)
        samples[offset] = record.samples
        for jump in record.jumps:
            counts[jump.channel.value - 1] += 1
    return samples, counts


def _moment_series(samples: np.ndarray, n_ions: int) -> np.ndarray:
    """Per-trajectory (|M|/N, M^2, M^4, P(FM)) for every sample time."""
    magnetization = n_ions - 2.0 * np.arange(n_ions + 1)
    weights = np.stack(
        [
            np.abs(magnetization) / n_ions,
            magnetization**2,
            magnetization**4,
            np.isin(np.arange(n_ions + 1), (0, n_ions)).astype(float),
        ],
        axis=1,
    )
    return samples @ weights


def run_ensemble(config: SimulationConfig, n_traj: int, base_seed: int, workers: int = 1) -> EnsembleStats:
    """
    Average independent trajectories.

    Trajectory i draws from trajectory_rng(base_seed, i). Results are collected in
    index order before any reduction, so the statistics do not depend on the
    number of workers.

    Args:
    ----
        config: Couplings, ramp and noise.
        n_traj: Number of trajectories, at least one.
        base_seed: Seed of the whole ensemble.
        workers: Process pool size; 1 runs inline.

    Returns:
    -------
        EnsembleStats: Mean P(s), standard errors and moment statistics.

    Raises:
    ------
        ConfigError: If n_traj < 1 or workers < 1.
        IntegratorError: If a trajectory fails; the message names its index.

    """
    if n_traj < 1:
        handle_error(f"Invalid n_traj: {n_traj}. At least one trajectory is needed.", ConfigError)
    if workers < 1:
        handle_error(f"Invalid workers: {workers}. At least one worker is needed.", ConfigError)
    check_ramp(config.ramp, config.coupling)
    n = config.n_ions
    _LOGGER.info("Running %d trajectories for %d ions on %d worker(s)", n_traj, n, workers)

    n_chunks = min(n_traj, 1 if workers == 1 else 4 * workers)
    bounds = np.linspace(0, n_traj, n_chunks + 1).astype(int)
    tasks = [(config, base_seed, int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:], strict=True) if b > a]
    if workers == 1:
        results = [_run_chunk(task) for task in tasks]
    else:
        with multiprocessing.Pool(processes=workers) as pool:
            results = pool.map(_run_chunk, tasks)

    samples = np.concatenate([r[0] for r in results], axis=0)
    counts = np.sum([r[1] for r in results], axis=0)
    moments = _moment_series(samples, n)

    p = samples.mean(axis=0)
    if n_traj > 1:
        sem = samples.std(axis=0, ddof=1) / math.sqrt(n_traj)
        centered = moments - moments.mean(axis=0)
        moment_cov = np.einsum("tsa,tsb->sab", centered, centered) / (n_traj - 1) / n_traj
    else:
        sem = np.zeros_like(p)
        moment_cov = np.zeros((moments.shape[1], 4, 4))

    times = np.asarray(config.ramp.sample_times)
    fields = np.array([config.ramp.field_at(t) for t in times])
    mean_j = abs(config.coupling.mean_J)
    b_over_j = fields / mean_j if mean_j > 0 else np.full_like(fields, np.inf)
    jump_counts = {channel.name.lower(): int(counts[channel.value - 1]) for channel in JumpChannel}
    _LOGGER.info("Ensemble finished, jumps: %s", jump_counts)
    return EnsembleStats(
        n_ions=n,
        n_traj=n_traj,
        base_seed=base_seed,
        times=times,
        fields=fields,
        b_over_j=b_over_j,
        p=p,
        sem=sem,
        moments=moments.mean(axis=0),
        moment_cov=moment_cov,
        jump_counts=jump_counts,
    )
