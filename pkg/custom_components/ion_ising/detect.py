"""Fluorescence detection: photon-count basis functions, histogram fits and Monte-Carlo error bars."""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, stats

from custom_components.ion_ising.const import (
    DEFAULT_BEAM_PROFILE,
    DEFAULT_INTENSITY_JITTER,
    DEFAULT_MEAN_BRIGHT,
    DEFAULT_MEAN_DARK,
    DEFAULT_N_RESAMPLE,
    DEFAULT_OVERLAP_TARGET,
    EXPOSURE_BINS,
    JITTER_NODES,
    MAX_FAILED_DRAW_FRACTION,
    MIN_HISTOGRAM_TOTAL,
)
from custom_components.ion_ising.helpers import (
    _LOGGER,
    ConfigError,
    FitError,
    IonIsingError,
    handle_error,
    is_non_negative,
    is_valid_probability,
    sums_to_one,
    trajectory_rng,
)
from custom_components.ion_ising.observables import SpinDistribution, scale_order_params


@dataclass(frozen=True)
class PhotonModel:
    """
    Photon statistics of one ion in one detection window.

    beam_profile holds (occupancy, relative intensity) pairs; the occupancies
    sum to one. Intensity jitter and the profile scale both means.
    """

    mean_bright: float = DEFAULT_MEAN_BRIGHT
    mean_dark: float = DEFAULT_MEAN_DARK
    leak_bright_to_dark: float = 0.0
    leak_dark_to_bright: float = 0.0
    intensity_jitter: float = DEFAULT_INTENSITY_JITTER
    beam_profile: tuple[tuple[float, float], ...] = DEFAULT_BEAM_PROFILE

    def __post_init__(self) -> None:
        """Validate means, leaks, jitter and profile."""
        is_non_negative(self.mean_dark, "mean_dark")
        if not self.mean_bright > self.mean_dark:
            handle_error(
                f"Invalid photon means: bright {self.mean_bright} must exceed dark {self.mean_dark}", ConfigError
            )
        is_valid_probability(self.leak_bright_to_dark, "leak_bright_to_dark")
        is_valid_probability(self.leak_dark_to_bright, "leak_dark_to_bright")
        is_non_negative(self.intensity_jitter, "intensity_jitter")
        profile = tuple((float(occ), float(weight)) for occ, weight in self.beam_profile)
        if not profile or any(weight <= 0 for _, weight in profile):
            handle_error(f"Invalid beam_profile: {self.beam_profile}. Intensities must be positive.", ConfigError)
        sums_to_one([occ for occ, _ in profile], "beam_profile occupancies")
        object.__setattr__(self, "beam_profile", profile)

    def with_means(self, mean_dark: float, mean_bright: float) -> PhotonModel:
        """Same model with other photon means."""
        return replace(self, mean_dark=mean_dark, mean_bright=mean_bright)

    def intensity_scales(self) -> tuple[np.ndarray, np.ndarray]:
        """Relative intensities and their weights after profile and jitter mixing."""
        nodes, weights = np.polynomial.hermite_e.hermegauss(JITTER_NODES)
        weights = weights / weights.sum()
        jitter = np.clip(1.0 + self.intensity_jitter * nodes, 0.0, None)
        scales = np.concatenate([intensity * jitter for _, intensity in self.beam_profile])
        mix = np.concatenate([occupancy * weights for occupancy, _ in self.beam_profile])
        return scales, mix

    @property
    def support(self) -> int:
        """Number of count bins that hold a single ion's PMF to double precision."""
        top = self.mean_bright * float(self.intensity_scales()[0].max())
        return int(math.ceil(top + 12 * math.sqrt(top) + 20))


@dataclass(frozen=True)
class CountHistogram:
    """Occurrences per photon count 0..max."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        """Require nonnegative integer counts."""
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or counts.size == 0:
            handle_error("Histogram counts must be a non-empty one-dimensional sequence", ConfigError)
        if np.any(counts < 0) or not np.all(np.equal(np.mod(counts, 1), 0)):
            handle_error("Histogram counts must be nonnegative integers", ConfigError)
        object.__setattr__(self, "counts", counts.astype(np.int64))

    @property
    def total(self) -> int:
        """Number of experiments."""
        return int(self.counts.sum())


@dataclass
class FitResult:
    """Fitted P(s), photon means and their local-curvature errors."""

    distribution: SpinDistribution
    mean_dark: float
    mean_bright: float
    mean_dark_err: float
    mean_bright_err: float
    chi2: float
    n_counts: int


@dataclass
class McErrors:
    """Widths of the order parameters under resampled photon means."""

    m_x: float
    m_x_scaled: float
    g: float
    g_scaled: float
    p_fm: float
    p: np.ndarray = field(default_factory=lambda: np.zeros(0))
    n_failed: int = 0


def _exposure_bins(leak: float) -> tuple[np.ndarray, np.ndarray]:
    """Pumping time (fraction of the window) and its probability, exponential law with total `leak`."""
    edges = np.linspace(0.0, 1.0, EXPOSURE_BINS + 1)
    cdf = (edges > 0).astype(float) if leak >= 1 else -np.expm1(np.log1p(-leak) * edges)
    return 0.5 * (edges[:-1] + edges[1:]), np.diff(cdf)


def _poisson_mixture(means: np.ndarray, weights: np.ndarray, n_counts: int) -> np.ndarray:
    """Mixture of Poisson PMFs on 0..n_counts-1; the last bin holds the tail."""
    k = np.arange(n_counts - 1)[:, None]
    pmf = np.empty(n_counts)
    pmf[:-1] = stats.poisson.pmf(k, means[None, :]) @ weights
    pmf[-1] = stats.poisson.sf(n_counts - 2, means) @ weights
    return pmf / pmf.sum()


def single_ion_pmf(model: PhotonModel, bright: bool, n_counts: int | None = None) -> np.ndarray:
    """
    Photon-count distribution of one bright or dark ion.

    A bright ion pumped dark after a fraction t of the window emits with mean
    m_D + t (m_B - m_D); a dark ion pumped bright emits m_D + (1 - t)(m_B - m_D).
    The pumping time follows an exponential law whose probability within the
    window is the leak. Every component is then mixed over intensity jitter
    and the beam profile.

    Args:
    ----
        model: Photon statistics.
        bright: Which state the ion is in.
        n_counts: Number of count bins; the last one collects the tail.

    Returns:
    -------
        np.ndarray: PMF summing to one.

    """
    n_counts = n_counts or model.support
    leak = model.leak_bright_to_dark if bright else model.leak_dark_to_bright
    pumped_at, pumped_weight = _exposure_bins(leak)
    emitting = pumped_at if bright else 1.0 - pumped_at
    fractions = np.concatenate([[1.0 if bright else 0.0], emitting])
    fraction_weights = np.concatenate([[1.0 - pumped_weight.sum()], pumped_weight])

    scales, scale_weights = model.intensity_scales()
    dark = scales[:, None] * model.mean_dark
    bright_mean = scales[:, None] * model.mean_bright
    means = dark + fractions[None, :] * (bright_mean - dark)
    weights = scale_weights[:, None] * fraction_weights[None, :]
    return _poisson_mixture(means.reshape(-1), weights.reshape(-1), n_counts)


def _fold(pmf: np.ndarray, n_counts: int) -> np.ndarray:
    """Truncate to n_counts bins, adding the tail to the last one."""
    if pmf.size <= n_counts:
        return np.pad(pmf, (0, n_counts - pmf.size))
    folded = pmf[:n_counts].copy()
    folded[-1] += pmf[n_counts:].sum()
    return folded


def basis_functions(model: PhotonModel, n: int, n_counts: int | None = None) -> np.ndarray:
    """
    Count distributions for s = 0..N bright ions, shape (N+1, n_counts).

    Basis s is the s-fold convolution of the bright PMF with the (N-s)-fold
    convolution of the dark PMF. Without n_counts the full support is returned.
    """
    if n < 1:
        handle_error(f"Invalid number of ions: {n}. At least one ion is needed.", ConfigError)
    bright = single_ion_pmf(model, bright=True)
    dark = single_ion_pmf(model, bright=False)
    bright_powers = [np.ones(1)]
    dark_powers = [np.ones(1)]
    for _ in range(n):
        bright_powers.append(np.convolve(bright_powers[-1], bright))
        dark_powers.append(np.convolve(dark_powers[-1], dark))
    full = [np.convolve(bright_powers[s], dark_powers[n - s]) for s in range(n + 1)]
    width = n_counts or full[0].size
    basis = np.array([_fold(pmf, width) for pmf in full])
    return basis / basis.sum(axis=1, keepdims=True)


def overlap(model: PhotonModel) -> float:
    """Shared probability mass sum_k min(P_bright(k), P_dark(k))."""
    return float(np.minimum(single_ion_pmf(model, bright=True), single_ion_pmf(model, bright=False)).sum())


def tune_bright_leak(model: PhotonModel, target: float = DEFAULT_OVERLAP_TARGET) -> PhotonModel:
    """
    Choose the bright-to-dark leak so the bright/dark overlap equals target.

    Raises
    ------
        ConfigError: If the target is outside the overlaps reachable by the leak alone.

    """

    def excess(leak: float) -> float:
        return overlap(replace(model, leak_bright_to_dark=leak)) - target

    low, high = excess(0.0), excess(1.0 - 1e-9)
    if low > 0 or high < 0:
        handle_error(
            f"Overlap target {target} unreachable: the leak spans overlaps {low + target:.4g} to {high + target:.4g}",
            ConfigError,
        )
    leak = optimize.brentq(excess, 0.0, 1.0 - 1e-9, xtol=1e-12)
    _LOGGER.debug("Bright leak %.6g gives overlap %.4g", leak, target)
    return replace(model, leak_bright_to_dark=float(leak))


def _fit_fixed_means(counts: np.ndarray, basis: np.ndarray) -> tuple[np.ndarray, float]:
    """Neyman chi-square NNLS of the histogram against the basis with sum P = 1 as a heavy extra row."""
    total = counts.sum()
    sigma = np.sqrt(np.maximum(counts, 1.0))
    design = (total * basis.T) / sigma[:, None]
    target = counts / sigma
    weight = 1e3 * max(float(np.abs(design).max()), 1.0)
    design = np.vstack([design, np.full(basis.shape[0], weight)])
    target = np.append(target, weight)
    p, _ = optimize.nnls(design, target, maxiter=50 * basis.shape[0])
    if p.sum() <= 0:
        handle_error("Histogram fit collapsed to an empty distribution", FitError)
    p = p / p.sum()
    residual = (counts - total * (p @ basis)) / sigma
    return p, float(residual @ residual)


def _hessian(f: Callable[[np.ndarray], float], x: np.ndarray, lower: np.ndarray) -> np.ndarray:
    """Central-difference Hessian; the stencil is shifted inside the lower bounds."""
    h = 1e-3 * np.maximum(np.abs(x), 0.1)
    c = np.maximum(x, lower + h)
    dim = x.size
    hess = np.zeros((dim, dim))
    f0 = f(c)
    for i in range(dim):
        ei = np.zeros(dim)
        ei[i] = h[i]
        hess[i, i] = (f(c + ei) - 2 * f0 + f(c - ei)) / h[i] ** 2
        for j in range(i + 1, dim):
            ej = np.zeros(dim)
            ej[j] = h[j]
            hess[i, j] = hess[j, i] = (f(c + ei + ej) - f(c + ei - ej) - f(c - ei + ej) + f(c - ei - ej)) / (
                4 * h[i] * h[j]
            )
    return hess


def _check_histogram(hist: CountHistogram) -> np.ndarray:
    if hist.total < MIN_HISTOGRAM_TOTAL:
        handle_error(f"Histogram holds {hist.total} experiments; at least {MIN_HISTOGRAM_TOTAL} are needed", ConfigError)
    if np.count_nonzero(hist.counts) < 2:
        handle_error("Histogram has a single occupied bin; photon means are unidentifiable", FitError)
    return hist.counts.astype(float)


def fit_histogram(hist: CountHistogram, n: int, model: PhotonModel) -> FitResult:
    """
    Fit P(s) and the photon means to a measured histogram.

    The outer bounded Nelder-Mead search runs over (m_D, m_B) starting from the
    model's means; for each pair the distribution is the simplex-constrained
    NNLS solution. Errors on the means come from the chi-square curvature.

    Args:
    ----
        hist: Measured counts.
        n: Number of ions.
        model: Photon model; its means are the starting point.

    Returns:
    -------
        FitResult: Distribution, means, errors and chi-square.

    Raises:
    ------
        ConfigError: For fewer than 100 experiments.
        FitError: For a single occupied bin or a failed optimization.

    """
    counts = _check_histogram(hist)
    n_counts = counts.size

    def profile(x: np.ndarray) -> tuple[np.ndarray, float]:
        m_dark, m_bright = float(x[0]), float(x[1])
        if m_dark < 0 or m_bright <= m_dark:
            return np.full(n + 1, np.nan), 1e300
        return _fit_fixed_means(counts, basis_functions(model.with_means(m_dark, m_bright), n, n_counts))

    def chi2(x: np.ndarray) -> float:
        return profile(x)[1]

    upper = float(n_counts + 10 * math.sqrt(n_counts))
    result = optimize.minimize(
        chi2,
        x0=np.array([model.mean_dark, model.mean_bright]),
        method="Nelder-Mead",
        bounds=[(0.0, upper), (1e-6, upper)],
        options={"xatol": 1e-6, "fatol": 1e-8, "maxiter": 2000},
    )
    if not result.success or not np.isfinite(result.fun) or result.fun >= 1e300:
        handle_error(f"Histogram fit did not converge: {result.message}", FitError)
    p, best = profile(result.x)
    _LOGGER.info("Histogram fit converged: m_D=%.4f, m_B=%.4f, chi2=%.3f", result.x[0], result.x[1], best)

    hess = _hessian(chi2, result.x, np.array([0.0, 1e-6]))
    try:
        cov = 2.0 * np.linalg.inv(hess)
        errors = np.sqrt(np.diag(cov)) if np.all(np.diag(cov) > 0) else np.full(2, np.nan)
    except np.linalg.LinAlgError:
        errors = np.full(2, np.nan)
    if not np.all(np.isfinite(errors)):
        _LOGGER.warning("Chi-square curvature is not positive definite; mean errors are undefined")

    return FitResult(
        distribution=SpinDistribution(n=n, p=p),
        mean_dark=float(result.x[0]),
        mean_bright=float(result.x[1]),
        mean_dark_err=float(errors[0]),
        mean_bright_err=float(errors[1]),
        chi2=best,
        n_counts=n_counts,
    )


def _width(values: np.ndarray) -> float:
    if values.size == 0 or np.ptp(values) == 0:
        return 0.0
    return float(stats.norm.fit(values)[1])


def mc_error_bars(
    hist: CountHistogram,
    fit: FitResult,
    model: PhotonModel,
    n_resample: int = DEFAULT_N_RESAMPLE,
    seed: int = 0,
    jitter_values: Sequence[float] | None = None,
    resample_counts: bool = False,
) -> McErrors:
    """
    Monte-Carlo widths of the order parameters.

    Each draw takes (m_D, m_B) from Gaussians centred on the fit with the fit
    errors as widths, refits P(s) with the means frozen and records the order
    parameters. A Gaussian fitted to each parameter's draws gives its width.
    With jitter_values the analysis repeats per intensity jitter and the
    largest width is kept. With resample_counts every draw also resamples the
    histogram multinomially. Draw i uses trajectory_rng(seed, i).

    Raises
    ------
        FitError: If the fit errors are not finite or more than 10% of draws fail.

    """
    if fit.distribution.n < 2:
        handle_error("Monte-Carlo error bars need N >= 2", ConfigError)
    if not (math.isfinite(fit.mean_dark_err) and math.isfinite(fit.mean_bright_err)):
        handle_error("Monte-Carlo error bars need finite photon-mean errors", FitError)
    counts = _check_histogram(hist)
    n = fit.distribution.n
    names = ("m_x", "m_x_scaled", "g", "g_scaled", "p_fm")
    widths = dict.fromkeys(names, 0.0)
    p_widths = np.zeros(n + 1)
    failed_total = 0

    for jitter in jitter_values if jitter_values is not None else [model.intensity_jitter]:
        jittered = replace(model, intensity_jitter=float(jitter))
        draws: dict[str, list[float]] = {name: [] for name in names}
        p_draws = []
        failed = 0
        for index in range(n_resample):
            rng = trajectory_rng(seed, index)
            m_dark = max(rng.normal(fit.mean_dark, fit.mean_dark_err), 0.0)
            m_bright = rng.normal(fit.mean_bright, fit.mean_bright_err)
            sample = rng.multinomial(int(counts.sum()), counts / counts.sum()).astype(float) if resample_counts else counts
            try:
                if m_bright <= m_dark:
                    handle_error(f"Draw {index}: bright mean {m_bright:.4g} below dark mean {m_dark:.4g}", FitError)
                basis = basis_functions(jittered.with_means(m_dark, m_bright), n, counts.size)
                p, _ = _fit_fixed_means(sample, basis)
                params = scale_order_params(SpinDistribution(n=n, p=p))
            except IonIsingError:
                failed += 1
                continue
            for name in names:
                draws[name].append(getattr(params, name))
            p_draws.append(p)
        if failed > MAX_FAILED_DRAW_FRACTION * n_resample:
            handle_error(f"{failed} of {n_resample} Monte-Carlo draws failed", FitError)
        failed_total += failed
        for name in names:
            widths[name] = max(widths[name], _width(np.asarray(draws[name])))
        if p_draws:
            p_widths = np.maximum(p_widths, [_width(column) for column in np.asarray(p_draws).T])

    _LOGGER.info("Monte-Carlo error bars from %d draws, %d failed", n_resample, failed_total)
    return McErrors(**widths, p=p_widths, n_failed=failed_total)


def synthesize_histogram(
    p: Sequence[float], model: PhotonModel, shots: int, seed: int, n_counts: int | None = None
) -> CountHistogram:
    """
    Draw a histogram of `shots` experiments from a known P(s).

    Without n_counts the histogram ends at the largest count drawn.
    """
    p = np.asarray(p, dtype=float)
    sums_to_one(p, "P(s)")
    if shots < 1:
        handle_error(f"Invalid shots: {shots}. At least one experiment is needed.", ConfigError)
    basis = basis_functions(model, p.size - 1, n_counts)
    mixture = p @ basis
    counts = trajectory_rng(seed, 0).multinomial(shots, mixture / mixture.sum())
    if n_counts is None:
        counts = counts[: int(np.flatnonzero(counts).max()) + 1]
    return CountHistogram(counts=counts)
