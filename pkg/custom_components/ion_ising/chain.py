"""Ion chain geometry, transverse normal modes and the Ising coupling matrix."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from custom_components.ion_ising.const import (
    ADIABATIC_MARGIN_FACTOR,
    AMU,
    DEFAULT_DELTA_K,
    EQUILIBRIUM_MAX_ITER,
    EQUILIBRIUM_TOLERANCE,
    HBAR,
    RESONANCE_GUARD_BAND,
    YB171_MASS_AMU,
)
from custom_components.ion_ising.helpers import (
    _LOGGER,
    ConfigError,
    ResonanceError,
    SolverFailureError,
    StabilityError,
    handle_error,
)


@dataclass(frozen=True)
class TrapConfig:
    """Trap and Raman geometry; frequencies are ordinary frequencies in kHz."""

    n_ions: int
    nu_x: float
    nu_z: float
    ion_mass: float = YB171_MASS_AMU
    delta_k: float = DEFAULT_DELTA_K

    def __post_init__(self) -> None:
        """Validate the linear-chain conditions."""
        if self.n_ions < 1:
            handle_error(f"Invalid n_ions: {self.n_ions}. At least one ion is needed.", ConfigError)
        if not self.nu_x > self.nu_z > 0:
            handle_error(f"Invalid trap: nu_x={self.nu_x} kHz, nu_z={self.nu_z} kHz. Need nu_x > nu_z > 0.", ConfigError)
        if self.ion_mass <= 0 or self.delta_k <= 0:
            handle_error(f"Invalid trap: ion_mass={self.ion_mass}, delta_k={self.delta_k}. Both must be positive.", ConfigError)


@dataclass(frozen=True)
class ChainGeometry:
    """Dimensionless equilibrium positions in units of the axial length scale."""

    positions: np.ndarray

    @property
    def n_ions(self) -> int:
        """Number of ions in the chain."""
        return len(self.positions)


@dataclass(frozen=True)
class ModeData:
    """Transverse normal modes, sorted by descending frequency."""

    frequencies: np.ndarray
    vectors: np.ndarray
    lamb_dicke: np.ndarray

    @property
    def n_ions(self) -> int:
        """Number of ions in the chain."""
        return len(self.frequencies)


@dataclass(frozen=True)
class CouplingMatrix:
    """Ising couplings J_ij in kHz together with their mean over i < j."""

    J: np.ndarray
    mean_J: float
    mu: float = float("nan")
    rabi: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_ions(self) -> int:
        """Number of ions in the chain."""
        return self.J.shape[0]

    @classmethod
    def from_matrix(cls, J: np.ndarray) -> CouplingMatrix:
        """Wrap a symmetric matrix, zeroing the diagonal and computing |J|."""
        J = np.array(J, dtype=float)
        if J.ndim != 2 or J.shape[0] != J.shape[1]:
            handle_error(f"Coupling matrix must be square, got shape {J.shape}", ConfigError)
        if not np.allclose(J, J.T):
            handle_error("Coupling matrix must be symmetric", ConfigError)
        np.fill_diagonal(J, 0.0)
        return cls(J=J, mean_J=mean_coupling(J))

    @classmethod
    def uniform(cls, n_ions: int, coupling: float) -> CouplingMatrix:
        """All-to-all coupling of equal strength."""
        return cls.from_matrix(np.full((n_ions, n_ions), float(coupling)))


def mean_coupling(J: np.ndarray) -> float:
    """Average of the upper-triangle entries; zero for a single ion."""
    n = J.shape[0]
    if n < 2:
        return 0.0
    return float(J[np.triu_indices(n, k=1)].mean())


def _potential(x: np.ndarray) -> float:
    diff = np.abs(x[:, None] - x[None, :])
    iu = np.triu_indices(len(x), k=1)
    return float(0.5 * np.sum(x**2) + np.sum(1.0 / diff[iu]))


def _gradient_and_hessian(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, np.inf)
    inv2 = np.sign(diff) / diff**2
    inv3 = 2.0 / np.abs(diff) ** 3
    grad = x - inv2.sum(axis=1)
    hess = -inv3
    np.fill_diagonal(hess, 1.0 + inv3.sum(axis=1))
    return grad, hess


def equilibrium_positions(n_ions: int) -> ChainGeometry:
    """
    Solve for the equilibrium of N ions in a harmonic axial well.

    Minimizes u(x) = sum x_i^2/2 + sum_{i<j} 1/|x_i - x_j| with a damped Newton
    iteration started from a uniformly spaced chain.

    Args:
    ----
        n_ions: Number of ions, at least one.

    Returns:
    -------
        ChainGeometry: Positions sorted ascending.

    Raises:
    ------
        ConfigError: If n_ions < 1.
        SolverFailureError: If the gradient does not drop below tolerance within the iteration cap.

    """
    if n_ions < 1:
        handle_error(f"Invalid n_ions: {n_ions}. At least one ion is needed.", ConfigError)
    if n_ions == 1:
        return ChainGeometry(positions=np.zeros(1))

    # Minimum spacing of a long chain scales as ~2 N^-0.56
    spacing = 2.0 * n_ions**-0.56
    x = (np.arange(n_ions) - (n_ions - 1) / 2) * spacing
    energy = _potential(x)
    for iteration in range(EQUILIBRIUM_MAX_ITER):
        grad, hess = _gradient_and_hessian(x)
        if np.max(np.abs(grad)) < EQUILIBRIUM_TOLERANCE:
            _LOGGER.debug("Equilibrium for %d ions found after %d Newton steps", n_ions, iteration)
            positions = np.sort(x)
            # Mirror symmetry holds exactly for the true minimum
            return ChainGeometry(positions=0.5 * (positions - positions[::-1]))
        step = linalg.solve(hess, grad, assume_a="pos")
        damping = 1.0
        while True:
            trial = x - damping * step
            if np.all(np.diff(trial) > 0):
                trial_energy = _potential(trial)
                if trial_energy <= energy + 1e-14 * abs(energy):
                    break
            damping *= 0.5
            if damping < 1e-12:
                handle_error(f"Equilibrium solver for {n_ions} ions stalled at iteration {iteration}", SolverFailureError)
        x, energy = trial, trial_energy
    handle_error(f"Equilibrium solver for {n_ions} ions did not converge after {EQUILIBRIUM_MAX_ITER} iterations", SolverFailureError)
    return ChainGeometry(positions=x)


def transverse_modes(cfg: TrapConfig, geom: ChainGeometry) -> ModeData:
    """
    Diagonalize the transverse (x) motion of the chain.

    Args:
    ----
        cfg: Trap parameters.
        geom: Equilibrium positions of the same number of ions.

    Returns:
    -------
        ModeData: Frequencies in kHz (descending), orthonormal mode vectors b[i, m]
        and Lamb-Dicke parameters eta[i, m].

    Raises:
    ------
        ConfigError: If trap and geometry disagree on the number of ions.
        StabilityError: If a transverse eigenvalue is negative (zigzag instability).

    """
    n = geom.n_ions
    if cfg.n_ions != n:
        handle_error(f"Trap has {cfg.n_ions} ions but the geometry has {n}", ConfigError)
    u = geom.positions
    diff = np.abs(u[:, None] - u[None, :])
    np.fill_diagonal(diff, np.inf)
    inv3 = 1.0 / diff**3
    coupling = inv3.copy()
    np.fill_diagonal(coupling, (cfg.nu_x / cfg.nu_z) ** 2 - inv3.sum(axis=1))

    eigenvalues, vectors = linalg.eigh(coupling)
    if np.any(eigenvalues <= 0):
        handle_error(
            f"Chain of {n} ions is unstable along x for nu_x/nu_z = {cfg.nu_x / cfg.nu_z:.4f} (smallest eigenvalue {eigenvalues.min():.4g})",
            StabilityError,
        )
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = eigenvalues[order]
    vectors = vectors[:, order]
    # Fix the sign of each mode: first non-negligible component positive
    for m in range(n):
        pivot = np.flatnonzero(np.abs(vectors[:, m]) > 1e-8)[0]
        if vectors[pivot, m] < 0:
            vectors[:, m] *= -1.0

    frequencies = cfg.nu_z * np.sqrt(eigenvalues)
    mass = cfg.ion_mass * AMU
    omega_si = 2 * np.pi * frequencies * 1e3
    lamb_dicke = vectors * cfg.delta_k * np.sqrt(HBAR / (2 * mass * omega_si))[None, :]
    _LOGGER.debug("Transverse mode frequencies (kHz): %s", frequencies)
    return ModeData(frequencies=frequencies, vectors=vectors, lamb_dicke=lamb_dicke)


def chain_modes(cfg: TrapConfig) -> ModeData:
    """Equilibrium positions and transverse modes in one call."""
    return transverse_modes(cfg, equilibrium_positions(cfg.n_ions))


def gaussian_rabi_profile(geom: ChainGeometry, omega0: float, waist_ratio: float) -> np.ndarray:
    """
    Per-ion Rabi frequencies under a Gaussian beam centred on the chain.

    Args:
    ----
        geom: Equilibrium positions.
        omega0: Peak Rabi frequency (kHz).
        waist_ratio: Beam waist in units of the axial length scale.

    Returns:
    -------
        np.ndarray: Omega_i (kHz).

    """
    if waist_ratio <= 0:
        handle_error(f"Invalid waist_ratio: {waist_ratio}. It must be positive.", ConfigError)
    return omega0 * np.exp(-((geom.positions / waist_ratio) ** 2))


def _as_rabi(rabi: float | np.ndarray, n_ions: int) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(rabi, dtype=float))
    if arr.size == 1:
        return np.full(n_ions, float(arr[0]))
    if arr.size != n_ions:
        handle_error(f"Rabi profile has {arr.size} entries, expected 1 or {n_ions}", ConfigError)
    return arr


def adiabatic_margin(modes: ModeData, rabi: float | np.ndarray, mu: float) -> np.ndarray:
    """Ratio |mu - nu_m| / max_i(eta_im Omega_i) for every mode."""
    omega = _as_rabi(rabi, modes.n_ions)
    strength = np.max(np.abs(modes.lamb_dicke) * omega[:, None], axis=0)
    return np.abs(mu - modes.frequencies) / strength


def coupling_matrix(
    modes: ModeData,
    rabi: float | np.ndarray,
    mu: float,
    guard_band: float = RESONANCE_GUARD_BAND,
) -> CouplingMatrix:
    """
    Ising couplings from the virtual excitation of all transverse modes.

    J_ij = N Omega_i Omega_j sum_m eta_im eta_jm nu_m / (mu^2 - nu_m^2)

    Args:
    ----
        modes: Transverse modes of the chain.
        rabi: Carrier Rabi frequency (kHz), uniform scalar or one entry per ion.
        mu: Beatnote detuning (kHz).
        guard_band: Minimum allowed |mu - nu_m| (kHz).

    Returns:
    -------
        CouplingMatrix: Symmetric J with zero diagonal.

    Raises:
    ------
        ResonanceError: If mu lies within the guard band of a mode.

    """
    n = modes.n_ions
    omega = _as_rabi(rabi, n)
    detuning = np.abs(mu - modes.frequencies)
    if np.any(detuning < guard_band):
        m = int(np.argmin(detuning))
        handle_error(
            f"Beatnote mu={mu} kHz is within {guard_band} kHz of mode {m + 1} at {modes.frequencies[m]:.3f} kHz",
            ResonanceError,
        )
    margin = adiabatic_margin(modes, omega, mu)
    if np.any(margin < ADIABATIC_MARGIN_FACTOR):
        m = int(np.argmin(margin))
        _LOGGER.warning(
            "Adiabatic elimination marginal: |mu - nu_%d| = %.2f kHz is only %.2f times eta*Omega",
            m + 1,
            detuning[m],
            margin[m],
        )

    weights = modes.frequencies / (mu**2 - modes.frequencies**2)
    eta = modes.lamb_dicke
    J = n * np.outer(omega, omega) * ((eta * weights[None, :]) @ eta.T)
    J = 0.5 * (J + J.T)
    np.fill_diagonal(J, 0.0)
    return CouplingMatrix(J=J, mean_J=mean_coupling(J), mu=float(mu), rabi=omega)


def fit_power_law(J: np.ndarray) -> tuple[float, float]:
    """
    Fit J_{1,1+r} = C / r^alpha by log-log least squares over r = 1..N-1.

    Returns:
    -------
        tuple: (alpha, C); (nan, nan) if fewer than two distances or a non-positive coupling.

    """
    row = np.asarray(J, dtype=float)[0, 1:]
    if row.size < 2 or np.any(row <= 0):
        return float("nan"), float("nan")
    r = np.arange(1, row.size + 1)
    slope, intercept = np.polyfit(np.log(r), np.log(row), 1)
    return float(-slope), float(np.exp(intercept))


def coupling_range_scan(cfg: TrapConfig, rabi: float | np.ndarray, mu_list: list[float]) -> list[tuple[float, float]]:
    """
    Fitted power-law exponent of J_{1,1+r} for each detuning.

    Args:
    ----
        cfg: Trap parameters.
        rabi: Rabi frequency, scalar or per ion (kHz).
        mu_list: Beatnote detunings above nu_1 (kHz).

    Returns:
    -------
        list: (mu, alpha) pairs; empty when the chain has fewer than three ions.

    Raises:
    ------
        ConfigError: If a detuning is not above the COM mode.
        ResonanceError: Propagated from coupling_matrix.

    """
    modes = chain_modes(cfg)
    if cfg.n_ions < 3:
        _LOGGER.warning("Power-law fit needs at least two distances; %d ions give none to fit", cfg.n_ions)
        return []
    scan = []
    for mu in mu_list:
        if mu <= modes.frequencies[0]:
            handle_error(f"Detuning mu={mu} kHz must lie above the COM mode at {modes.frequencies[0]} kHz", ConfigError)
        alpha, _ = fit_power_law(coupling_matrix(modes, rabi, mu).J)
        _LOGGER.debug("mu=%.3f kHz -> alpha=%.4f", mu, alpha)
        scan.append((float(mu), alpha))
    return scan
