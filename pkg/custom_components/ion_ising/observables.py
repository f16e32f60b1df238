"""Order parameters, exact ground states and the master-equation reference."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, sparse, stats
from scipy.sparse.linalg import eigsh

from custom_components.ion_ising.chain import CouplingMatrix
from custom_components.ion_ising.const import (
    KHZ_US_TO_RAD,
    MAX_DICKE_DIMENSION,
    MAX_EXACT_IONS,
    MAX_ORACLE_IONS,
    MIN_POINTS_PER_DECADE,
    PER_MS_TO_PER_US,
)
from custom_components.ion_ising.dynamics import (
    EnsembleStats,
    NoiseModel,
    RampSchedule,
    check_ramp,
    ising_energies,
    max_step,
    sigma_y_sum,
    spin_distribution,
)
from custom_components.ion_ising.helpers import (
    _LOGGER,
    ConfigError,
    IntegratorError,
    UndefinedCumulantError,
    handle_error,
)


@dataclass(frozen=True)
class SpinDistribution:
    """P(s), s = 0..N up spins, with optional standard errors."""

    n: int
    p: np.ndarray
    sem: np.ndarray | None = None

    def __post_init__(self) -> None:
        """Check shape, positivity and normalization."""
        p = np.asarray(self.p, dtype=float)
        if p.shape != (self.n + 1,):
            handle_error(f"Distribution for N={self.n} needs {self.n + 1} entries, got {p.shape}", ConfigError)
        if np.any(p < -1e-12) or abs(float(p.sum()) - 1.0) > 1e-9:
            handle_error(f"Invalid distribution {list(p)}: entries must be >= 0 and sum to 1", ConfigError)
        object.__setattr__(self, "p", np.clip(p, 0.0, None))

    @property
    def magnetization_values(self) -> np.ndarray:
        """Signed magnetization M = N - 2s per bin."""
        return self.n - 2.0 * np.arange(self.n + 1)

    @classmethod
    def binomial(cls, n: int) -> SpinDistribution:
        """Distribution of a fully Y-polarized paramagnet."""
        return cls(n=n, p=stats.binom.pmf(np.arange(n + 1), n, 0.5))

    @classmethod
    def ghz(cls, n: int) -> SpinDistribution:
        """Even mixture of all up and all down."""
        p = np.zeros(n + 1)
        p[0] += 0.5
        p[n] += 0.5
        return cls(n=n, p=p)


@dataclass(frozen=True)
class OrderParams:
    """Order parameters of one distribution."""

    m_x: float
    m_x_scaled: float
    g: float
    g_scaled: float
    p_fm: float


@dataclass
class OrderParamSeries:
    """Order parameters with standard errors along a ramp."""

    times: np.ndarray
    b_over_j: np.ndarray
    m_x: np.ndarray
    m_x_sem: np.ndarray
    m_x_scaled: np.ndarray
    m_x_scaled_sem: np.ndarray
    g: np.ndarray
    g_sem: np.ndarray
    g_scaled: np.ndarray
    g_scaled_sem: np.ndarray
    p_fm: np.ndarray
    p_fm_sem: np.ndarray


def magnetization(d: SpinDistribution) -> float:
    """m_x = (1/N) sum_s |N - 2s| P(s)."""
    return float(np.sum(np.abs(d.magnetization_values) * d.p) / d.n)


def binder_cumulant(d: SpinDistribution) -> float:
    """
    g = sum (N-2s)^4 P(s) / (sum (N-2s)^2 P(s))^2.

    Raises
    ------
        UndefinedCumulantError: If the second moment vanishes.

    """
    m = d.magnetization_values
    second = float(np.sum(m**2 * d.p))
    if second <= 0:
        handle_error(f"Binder cumulant undefined for N={d.n}: all weight at s=N/2", UndefinedCumulantError)
    return float(np.sum(m**4 * d.p) / second**2)


def ferromagnetic_probability(d: SpinDistribution) -> float:
    """P(FM) = P(0) + P(N)."""
    return float(d.p[0] + d.p[d.n]) if d.n > 0 else float(d.p[0])


@functools.lru_cache(maxsize=256)
def paramagnet_magnetization(n: int) -> float:
    """m0_{x,N} = (1/(N 2^N)) sum_n C(N,n) |N - 2n|."""
    k = np.arange(n + 1)
    return float(np.sum(stats.binom.pmf(k, n, 0.5) * np.abs(n - 2 * k)) / n)


def paramagnet_binder(n: int) -> float:
    """g0_N = 3 - 2/N."""
    return 3.0 - 2.0 / n


def scale_order_params(d: SpinDistribution) -> OrderParams:
    """
    All five order parameters, rescaled so the paramagnet gives 0 and the GHZ mixture 1.

    Raises
    ------
        UndefinedCumulantError: For N = 1, where the rescaling denominators vanish.

    """
    if d.n < 2:
        handle_error("Scaled order parameters need N >= 2 (g0_1 = 1)", UndefinedCumulantError)
    m_x = magnetization(d)
    g = binder_cumulant(d)
    m0 = paramagnet_magnetization(d.n)
    g0 = paramagnet_binder(d.n)
    return OrderParams(
        m_x=m_x,
        m_x_scaled=(m0 - m_x) / (m0 - 1.0),
        g=g,
        g_scaled=(g0 - g) / (g0 - 1.0),
        p_fm=ferromagnetic_probability(d),
    )


def _series(times: np.ndarray, b_over_j: np.ndarray, n: int, moments: np.ndarray, cov: np.ndarray) -> OrderParamSeries:
    if n < 2:
        handle_error("Scaled order parameters need N >= 2 (g0_1 = 1)", UndefinedCumulantError)
    m_x, second, fourth, p_fm = moments.T
    if np.any(second <= 0):
        handle_error(f"Binder cumulant undefined for N={n}: all weight at s=N/2", UndefinedCumulantError)
    g = fourth / second**2
    # Delta method for g = M4 / M2^2
    d_fourth = 1.0 / second**2
    d_second = -2.0 * fourth / second**3
    g_var = d_fourth**2 * cov[:, 2, 2] + d_second**2 * cov[:, 1, 1] + 2 * d_fourth * d_second * cov[:, 1, 2]
    m_x_sem = np.sqrt(np.clip(cov[:, 0, 0], 0.0, None))
    g_sem = np.sqrt(np.clip(g_var, 0.0, None))
    m0 = paramagnet_magnetization(n)
    g0 = paramagnet_binder(n)
    return OrderParamSeries(
        times=np.asarray(times),
        b_over_j=np.asarray(b_over_j),
        m_x=m_x,
        m_x_sem=m_x_sem,
        m_x_scaled=(m0 - m_x) / (m0 - 1.0),
        m_x_scaled_sem=m_x_sem / abs(m0 - 1.0),
        g=g,
        g_sem=g_sem,
        g_scaled=(g0 - g) / (g0 - 1.0),
        g_scaled_sem=g_sem / abs(g0 - 1.0),
        p_fm=p_fm,
        p_fm_sem=np.sqrt(np.clip(cov[:, 3, 3], 0.0, None)),
    )


def ensemble_order_params(ensemble: EnsembleStats) -> OrderParamSeries:
    """Order parameters of a trajectory ensemble; the Binder error uses the delta method."""
    return _series(ensemble.times, ensemble.b_over_j, ensemble.n_ions, ensemble.moments, ensemble.moment_cov)


def distribution_order_params(times: np.ndarray, b_over_j: np.ndarray, p: np.ndarray) -> OrderParamSeries:
    """Order parameters of exact distributions (zero standard errors)."""
    p = np.asarray(p, dtype=float)
    n = p.shape[1] - 1
    m = n - 2.0 * np.arange(n + 1)
    weights = np.stack([np.abs(m) / n, m**2, m**4, np.isin(np.arange(n + 1), (0, n)).astype(float)], axis=1)
    return _series(times, b_over_j, n, p @ weights, np.zeros((p.shape[0], 4, 4)))


def _even_sector(n: int, coupling: float, b: float) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Tridiagonal Dicke matrix in the S_x basis and its even-parity reduction."""
    spin = n / 2
    m = spin - np.arange(n + 1)
    diag = -(coupling / n) * (2 * m**2 - n / 2)
    off = -b * np.sqrt(spin * (spin + 1) - m[:-1] * (m[:-1] - 1))
    half = n // 2
    even_diag = diag[: half + 1].copy()
    even_off = off[:half].copy()
    if n % 2 == 0:
        even_off[-1:] *= math.sqrt(2)
    else:
        even_diag[-1] += off[half]
    return diag, off, even_diag, even_off


def dicke_ground_state(n: int, coupling: float, b: float) -> tuple[SpinDistribution, float]:
    """
    Ground state of the uniform-coupling Ising model in the maximal total-spin sector.

    Uses sum_{i<j} sx sx = 2 Sx^2 - N/2 (diagonal in the Sx basis) and the
    tridiagonal action of Sy. The even-parity sector under s -> N - s holds the
    ground state, which also fixes the B = 0 degeneracy.

    Args:
    ----
        n: Number of spins.
        coupling: Uniform J (kHz), >= 0.
        b: Transverse field (kHz), >= 0.

    Returns:
    -------
        tuple: (SpinDistribution, gap to the first excited state that couples to the ground state).

    """
    if n < 1 or n + 1 > MAX_DICKE_DIMENSION:
        handle_error(f"Dicke solver supports 1 <= N < {MAX_DICKE_DIMENSION}, got {n}", ConfigError)
    if coupling < 0 or b < 0:
        handle_error(f"Dicke solver needs J >= 0 and B >= 0, got J={coupling}, B={b}", ConfigError)
    diag, off, even_diag, even_off = _even_sector(n, coupling, b)
    if even_diag.size == 1:
        vector = np.ones(1)
        full = linalg.eigh_tridiagonal(diag, off, eigvals_only=True, select="i", select_range=(0, 1))
        gap = float(full[1] - full[0])
    else:
        values, vectors = linalg.eigh_tridiagonal(even_diag, even_off, select="i", select_range=(0, 1))
        vector = vectors[:, 0]
        gap = float(values[1] - values[0])
    half = n // 2
    amplitudes = np.zeros(n + 1)
    if n % 2 == 0:
        amplitudes[:half] = vector[:half] / math.sqrt(2)
        amplitudes[half] = vector[half]
    else:
        amplitudes[: half + 1] = vector / math.sqrt(2)
    amplitudes[n - half :] = amplitudes[: half + 1][::-1].copy()
    # Index k counts down spins
    p = amplitudes[::-1] ** 2
    return SpinDistribution(n=n, p=p / p.sum()), gap


def exact_ground_state(coupling: CouplingMatrix, b: float) -> SpinDistribution:
    """
    Ground state of the Ising model for arbitrary couplings in the full 2^N space.

    Requires B > 0 so that the ground state is unique.
    """
    n = coupling.n_ions
    if n > MAX_EXACT_IONS:
        handle_error(f"Full diagonalization is limited to N <= {MAX_EXACT_IONS}, got {n}", ConfigError)
    if b <= 0:
        handle_error(f"Full diagonalization needs B > 0 for a unique ground state, got {b}", ConfigError)
    active = tuple(range(n))
    hamiltonian = sparse.diags(ising_energies(active, coupling)) - b * sigma_y_sum(n)
    if 2**n <= 256:
        _, vectors = linalg.eigh(hamiltonian.toarray())
        ground = vectors[:, 0]
    else:
        _, vectors = eigsh(hamiltonian.tocsr(), k=1, which="SA")
        ground = vectors[:, 0]
    return SpinDistribution(n=n, p=spin_distribution(ground, n, 0, n))


def _embed(op: np.ndarray, site: int, n: int) -> sparse.csr_matrix:
    eye = sparse.identity(3, format="csr")
    factors = [sparse.csr_matrix(op) if k == site else eye for k in range(n)]
    result = factors[0]
    for factor in factors[1:]:
        result = sparse.kron(result, factor, format="csr")
    return result


def _superoperators(coupling: CouplingMatrix, noise: NoiseModel) -> tuple[sparse.csr_matrix, sparse.csr_matrix]:
    """Liouvillian L(t) = L0 + B(t) L1 on row-major vec(rho), in 1/us."""
    n = coupling.n_ions
    x3 = np.diag([1.0, -1.0, 0.0]).astype(complex)
    y3 = np.array([[0, -1j, 0], [1j, 0, 0], [0, 0, 0]])
    up = np.array([1.0, 0.0, 0.0])
    targets = (
        np.array([1.0, 1.0, 0.0]) / math.sqrt(2),  # |down_z>
        np.array([1.0, -1.0, 0.0]) / math.sqrt(2),  # |up_z>
        np.array([0.0, 0.0, 1.0]),  # leaked
    )
    dim = 3**n
    eye = sparse.identity(dim, format="csr")
    xs = [_embed(x3, i, n) for i in range(n)]
    h_ising = sparse.csr_matrix((dim, dim), dtype=complex)
    for i in range(n):
        for j in range(i + 1, n):
            h_ising = h_ising - (coupling.J[i, j] / n) * (xs[i] @ xs[j])
    h_field = -sum((_embed(y3, i, n) for i in range(n)), sparse.csr_matrix((dim, dim), dtype=complex))

    def commutator(h: sparse.csr_matrix) -> sparse.csr_matrix:
        return -1j * KHZ_US_TO_RAD * (sparse.kron(h, eye) - sparse.kron(eye, h.T))

    channels = []
    gamma_se = noise.gamma_se * PER_MS_TO_PER_US
    gamma_deph = noise.gamma_deph * PER_MS_TO_PER_US
    for i in range(n):
        if gamma_deph > 0:
            channels.append(math.sqrt(gamma_deph) * xs[i])
        for target, weight in zip(targets, noise.branch, strict=True):
            if gamma_se > 0 and weight > 0:
                channels.append(math.sqrt(2 * gamma_se * weight) * _embed(np.outer(target, up), i, n))
    dissipator = sparse.csr_matrix((dim * dim, dim * dim), dtype=complex)
    for c in channels:
        cdc = (c.conj().T @ c).tocsr()
        dissipator = dissipator + sparse.kron(c, c.conj()) - 0.5 * (sparse.kron(cdc, eye) + sparse.kron(eye, cdc.T))
    return (commutator(h_ising) + dissipator).tocsr(), commutator(h_field).tocsr()


def _initial_density(n: int, flip_error: float) -> np.ndarray:
    plus = np.array([1.0, 1.0j, 0.0]) / math.sqrt(2)
    minus = np.array([1.0, -1.0j, 0.0]) / math.sqrt(2)
    single = (1 - flip_error) * np.outer(plus, plus.conj()) + flip_error * np.outer(minus, minus.conj())
    return functools.reduce(np.kron, [single] * n, np.ones((1, 1), dtype=complex))


def evolve_density_matrix(
    coupling: CouplingMatrix,
    ramp: RampSchedule,
    noise: NoiseModel,
    rho0: np.ndarray | None = None,
) -> list[np.ndarray]:
    """
    Integrate the master equation unravelled by the trajectory jumps.

    Each ion is a three-level system (up, down, leaked); sigma_x and sigma_y
    vanish on the leaked level.

    Returns
    -------
        list: Density matrices (3^N x 3^N) at the ramp's sample times.

    """
    n = coupling.n_ions
    if n > MAX_ORACLE_IONS:
        handle_error(f"Master-equation reference supports N <= {MAX_ORACLE_IONS}, got {n}", ConfigError)
    l0, l1 = _superoperators(coupling, noise)
    dim = 3**n
    rho = _initial_density(n, noise.flip_error) if rho0 is None else np.asarray(rho0, dtype=complex)
    if rho.shape != (dim, dim):
        handle_error(f"Initial density matrix must be {dim}x{dim}, got {rho.shape}", ConfigError)
    vec = rho.reshape(-1)
    h_max = max_step(coupling, ramp, noise)

    def rhs(t: float, v: np.ndarray) -> np.ndarray:
        return l0 @ v + ramp.field_at(t) * (l1 @ v)

    snapshots = []
    t = 0.0
    for target in ramp.sample_times:
        n_steps = math.ceil((target - t) / h_max - 1e-12) if target > t else 0
        if n_steps:
            h = (target - t) / n_steps
            for step in range(n_steps):
                ts = t + step * h
                k1 = rhs(ts, vec)
                k2 = rhs(ts + 0.5 * h, vec + 0.5 * h * k1)
                k3 = rhs(ts + 0.5 * h, vec + 0.5 * h * k2)
                k4 = rhs(ts + h, vec + h * k3)
                vec = vec + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            t = target
        if not np.all(np.isfinite(vec)):
            handle_error(f"Master equation diverged before t={target} us", IntegratorError)
        snapshots.append(vec.reshape(dim, dim).copy())
    return snapshots


def density_distribution(rho: np.ndarray, n: int) -> np.ndarray:
    """P(s) of a three-level density matrix, leaked ions counted up."""
    levels = np.array(np.unravel_index(np.arange(3**n), (3,) * n)).T if n else np.zeros((1, 0), dtype=int)
    n_up = (levels != 1).sum(axis=1)
    populations = np.clip(np.real(np.diag(rho)), 0.0, None)
    return np.bincount(n_up, weights=populations / populations.sum(), minlength=n + 1)


def lindblad_oracle(coupling: CouplingMatrix, ramp: RampSchedule, noise: NoiseModel) -> tuple[np.ndarray, OrderParamSeries]:
    """
    Exact observables of the noisy ramp for N <= 3.

    Returns
    -------
        tuple: (P(s) per sample time, order-parameter series).

    """
    check_ramp(ramp, coupling)
    n = coupling.n_ions
    _LOGGER.info("Integrating the master equation for %d ions", n)
    rhos = evolve_density_matrix(coupling, ramp, noise)
    p = np.array([density_distribution(rho, n) for rho in rhos])
    times = np.asarray(ramp.sample_times)
    mean_j = abs(coupling.mean_J)
    b_over_j = np.array([ramp.field_at(t) for t in times]) / mean_j if mean_j > 0 else np.full(len(times), np.inf)
    return p, distribution_order_params(times, b_over_j, p)


def dicke_sweep(n: int, b_over_j: np.ndarray, coupling: float = 1.0) -> dict[str, np.ndarray]:
    """Scaled order parameters and gap of the uniform-coupling ground state across a field grid."""
    rows = {"b_over_j": np.asarray(b_over_j, dtype=float), "m_x_scaled": [], "g_scaled": [], "p_fm": [], "gap": []}
    for ratio in rows["b_over_j"]:
        distribution, gap = dicke_ground_state(n, coupling, ratio * coupling)
        params = scale_order_params(distribution)
        rows["m_x_scaled"].append(params.m_x_scaled)
        rows["g_scaled"].append(params.g_scaled)
        rows["p_fm"].append(params.p_fm)
        rows["gap"].append(gap)
    return {key: np.asarray(value) for key, value in rows.items()}


def crossing_point(b_over_j: np.ndarray, curve: np.ndarray, level: float = 0.5) -> float:
    """Field ratio where a curve crosses `level`, interpolated in log(B/|J|); nan if it never does."""
    x = np.log(np.asarray(b_over_j, dtype=float))
    y = np.asarray(curve, dtype=float) - level
    order = np.argsort(x)
    x, y = x[order], y[order]
    crossings = np.flatnonzero(np.sign(y[:-1]) * np.sign(y[1:]) <= 0)
    if crossings.size == 0:
        return float("nan")
    k = crossings[0]
    if y[k + 1] == y[k]:
        return float(np.exp(x[k]))
    return float(np.exp(x[k] - y[k] * (x[k + 1] - x[k]) / (y[k + 1] - y[k])))


def crossover_sharpness(curves: dict[int, tuple[np.ndarray, np.ndarray]]) -> dict[int, float]:
    """
    Maximum slope of each scaled curve against ln(B/|J|).

    Args:
    ----
        curves: N -> (B/|J| grid, scaled order parameter), all on one grid.

    Returns:
    -------
        dict: N -> max |d curve / d ln(B/|J|)|.

    Raises:
    ------
        ConfigError: If the grids differ or hold fewer than 10 points per decade.

    """
    sharpness = {}
    reference = None
    for n, (grid, curve) in sorted(curves.items()):
        grid = np.asarray(grid, dtype=float)
        curve = np.asarray(curve, dtype=float)
        if reference is None:
            reference = grid
        elif grid.shape != reference.shape or not np.allclose(grid, reference):
            handle_error(f"Curve for N={n} is not sampled on the common grid", ConfigError)
        if grid.size < 2 or np.any(grid <= 0):
            handle_error(f"Curve for N={n} needs at least two positive field values", ConfigError)
        decades = math.log10(grid.max() / grid.min())
        if decades <= 0 or (grid.size - 1) / decades < MIN_POINTS_PER_DECADE:
            handle_error(
                f"Curve for N={n} has {grid.size} points over {decades:.2f} decades; at least {MIN_POINTS_PER_DECADE} per decade are needed",
                ConfigError,
            )
        order = np.argsort(grid)
        slopes = np.diff(curve[order]) / np.diff(np.log(grid[order]))
        sharpness[n] = float(np.max(np.abs(slopes)))
    return sharpness
