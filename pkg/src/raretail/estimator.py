"""Unbiased reconstruction from pooled multi-bias samples.

Samples drawn under several exponentially tilted distributions are combined
by solving the self-consistent normalization equations for the per-bias
log partition values (the multistate Bennett acceptance ratio estimator),
then reweighted against the sample mixture to recover expectations and
tail histograms under the base model. Confidence intervals come from a
percentile bootstrap over independent chains, or Wilson score intervals
for plain direct-sampling histograms.

All reweighting arithmetic runs in log space: the exponent lambda * phi can
span hundreds of nats, so linear-space accumulation is not an option.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from .errors import ConditioningWarning, ConvergenceError, EstimationError, ValidationError
from .records import ChainData, segments_by_bias
from .util import bin_index, validate_edges

DEFAULT_MBAR_TOL = 1e-8
DEFAULT_MBAR_MAX_ITER = 10_000
DEFAULT_COVERAGE = 0.96
DEFAULT_REPLICAS = 100


# ---------------------------------------------------------------------------
# Pooled sample sets
# ---------------------------------------------------------------------------


@dataclass
class WeightedSampleSet:
    """Pooled observable values from K biased distributions.

    `origin` maps each pooled sample to its source bias index (biases are
    sorted ascending). `sample_weights` hold per-sample weights normalized
    within each origin distribution: uniform 1/N_k for real draws, exact
    tilted probabilities for enumerated (infinite-sample) inputs. `alphas`
    are the mixture weights, proportional to counts for real draws.
    log_z is None until solved; the gauge is log Z(0) = 0.
    """

    values: np.ndarray
    origin: np.ndarray
    biases: np.ndarray
    counts: np.ndarray
    alphas: np.ndarray
    sample_weights: np.ndarray
    log_z: np.ndarray | None = None
    _log_pool: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.values) == 0:
            raise EstimationError("sample set is empty")
        if not math.isclose(float(self.alphas.sum()), 1.0, abs_tol=1e-9):
            raise ValidationError("mixture weights must sum to 1")
        if np.any(self.alphas <= 0):
            raise ValidationError("mixture weights must be positive")

    @property
    def log_pool_weights(self) -> np.ndarray:
        """log(alpha_{k_n} * u_n): each sample's weight in the pooled mixture."""
        if self._log_pool is None:
            self._log_pool = np.log(self.alphas[self.origin]) + np.log(self.sample_weights)
        return self._log_pool

    def with_log_z(self, log_z: np.ndarray) -> "WeightedSampleSet":
        return replace(self, log_z=np.asarray(log_z, dtype=float))

    @classmethod
    def from_chains(cls, chains: Sequence[ChainData]) -> "WeightedSampleSet":
        """Pool post-filter chain segments; alpha_k proportional to N_k."""
        groups = segments_by_bias(chains)
        groups = {lam: segs for lam, segs in groups.items() if sum(len(s) for s in segs)}
        if not groups:
            raise EstimationError("no samples left to pool")
        biases = np.array(sorted(groups))
        values, origin, counts = [], [], []
        for k, lam in enumerate(biases):
            vals = np.concatenate([s.o for s in groups[lam]])
            values.append(vals)
            origin.append(np.full(len(vals), k, dtype=int))
            counts.append(len(vals))
        counts = np.array(counts, dtype=int)
        values = np.concatenate(values)
        origin = np.concatenate(origin)
        return cls(
            values=values,
            origin=origin,
            biases=biases,
            counts=counts,
            alphas=counts / counts.sum(),
            sample_weights=(1.0 / counts)[origin],
        )

    @classmethod
    def from_exact(
        cls, per_bias: Sequence[tuple[float, np.ndarray, np.ndarray]]
    ) -> "WeightedSampleSet":
        """Infinite-sample inputs: per bias, (lam, values, exact probabilities).

        Each probability vector must sum to 1; mixture weights are uniform
        (any positive choice leaves the exact fixed point unchanged).
        """
        entries = sorted(per_bias, key=lambda e: e[0])
        values, origin, counts = [], [], []
        weights = []
        for k, (lam, vals, probs) in enumerate(entries):
            vals = np.asarray(vals, dtype=float)
            probs = np.asarray(probs, dtype=float)
            if vals.shape != probs.shape:
                raise ValidationError("values and probabilities must align")
            if not math.isclose(float(probs.sum()), 1.0, abs_tol=1e-9):
                raise ValidationError("exact-weight probabilities must sum to 1")
            values.append(vals)
            origin.append(np.full(len(vals), k, dtype=int))
            weights.append(probs)
            counts.append(len(vals))
        K = len(entries)
        return cls(
            values=np.concatenate(values),
            origin=np.concatenate(origin),
            biases=np.array([e[0] for e in entries]),
            counts=np.array(counts, dtype=int),
            alphas=np.full(K, 1.0 / K),
            sample_weights=np.concatenate(weights),
        )


def log_mixture_weights(
    o, biases: np.ndarray, alphas: np.ndarray, log_z: np.ndarray
) -> np.ndarray:
    """log w_Mix(o) = -log sum_j alpha_j Z_j^{-1} exp(-lambda_j o)."""
    o = np.atleast_1d(np.asarray(o, dtype=float))
    coeff = np.log(alphas) - log_z
    return -logsumexp(coeff[:, None] - np.outer(biases, o), axis=0)


def importance_weight(o, sample_set: WeightedSampleSet):
    """Umbrella-sampling weight of a sample with observable value o.

    Requires the solved log partition values; scalar in, scalar out.
    """
    if sample_set.log_z is None:
        raise EstimationError("solve the partition values before weighting")
    log_w = log_mixture_weights(o, sample_set.biases, sample_set.alphas, sample_set.log_z)
    w = np.exp(log_w)
    return float(w[0]) if np.isscalar(o) or np.ndim(o) == 0 else w


# ---------------------------------------------------------------------------
# Self-consistent partition-value solve
# ---------------------------------------------------------------------------


@dataclass
class MbarResult:
    log_z: np.ndarray
    iterations: int
    residual: float
    biases: np.ndarray


def solve_mbar(
    sample_set: WeightedSampleSet,
    tol: float = DEFAULT_MBAR_TOL,
    max_iter: int = DEFAULT_MBAR_MAX_ITER,
    initial_log_z: np.ndarray | None = None,
) -> MbarResult:
    """Solve the self-consistent normalization equations for log Z(lambda_k).

    Damped fixed-point iteration in log space:

        log Z'_k = logsumexp_n [ log c_n - lambda_k o_n - log M_n ]
        log M_n  = logsumexp_j [ log alpha_j - log Z_j - lambda_j o_n ]

    with c_n the pooled per-sample weight. After every sweep the gauge is
    fixed by subtracting the estimate of log Z(0) (the normalization of the
    untilted distribution), so log Z(0) = 0 holds whether or not 0 is on
    the ladder. Damping drops to 0.5 if the update direction oscillates.

    Raises ConvergenceError (carrying the last residual) when max_iter
    sweeps leave the max |change in log Z| above tol.
    """
    o = sample_set.values
    lam = sample_set.biases
    log_c = sample_set.log_pool_weights
    K = len(lam)
    lam_o = np.outer(lam, o)  # (K, N), reused every sweep
    log_alpha = np.log(sample_set.alphas)
    log_z = (
        np.zeros(K)
        if initial_log_z is None
        else np.array(initial_log_z, dtype=float)
    )

    gamma = 1.0
    prev_delta: np.ndarray | None = None
    residual = math.inf
    for iteration in range(1, max_iter + 1):
        log_mix = logsumexp((log_alpha - log_z)[:, None] - lam_o, axis=0)
        base = log_c - log_mix
        new = logsumexp(base[None, :] - lam_o, axis=1)
        new -= logsumexp(base)  # pin log Z(0) = 0
        delta = new - log_z
        residual = float(np.max(np.abs(delta)))
        if prev_delta is not None and float(np.dot(prev_delta, delta)) < 0.0:
            gamma = 0.5
        prev_delta = delta
        log_z = log_z + gamma * delta
        if residual < tol:
            _warn_if_disconnected(sample_set, log_z, lam_o, log_c)
            return MbarResult(log_z, iteration, residual, lam.copy())
    raise ConvergenceError(
        f"partition solve stopped after {max_iter} sweeps with residual {residual:.3e}",
        residual=residual,
    )


def _warn_if_disconnected(sample_set, log_z, lam_o, log_c):
    """Warn when some bias is (numerically) informed only by its own samples."""
    K = len(sample_set.biases)
    if K < 2:
        return
    log_mix = logsumexp((np.log(sample_set.alphas) - log_z)[:, None] - lam_o, axis=0)
    base = log_c - log_mix
    for k in range(K):
        own = sample_set.origin == k
        if not own.any() or own.all():
            continue
        total = logsumexp(base - lam_o[k])
        others = logsumexp((base - lam_o[k])[~own])
        if others - total < math.log(1e-9):
            warnings.warn(
                f"bias {sample_set.biases[k]} is nearly disconnected from the rest "
                "of the ladder; its partition value is poorly conditioned",
                ConditioningWarning,
                stacklevel=3,
            )
            return


# ---------------------------------------------------------------------------
# Histograms
# ---------------------------------------------------------------------------


@dataclass
class HistogramEstimate:
    """Per-bin density estimates with optional confidence bounds.

    `probability` is the per-bin mass, `density` mass divided by bin width;
    ci_lo/ci_hi bound the density. n_eff is the Kish effective sample count
    of the reweighted samples landing in each bin.
    """

    edges: np.ndarray
    probability: np.ndarray
    density: np.ndarray
    ci_lo: np.ndarray | None = None
    ci_hi: np.ndarray | None = None
    n_eff: np.ndarray | None = None

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def total_mass(self) -> float:
        return float(self.probability.sum())


def reconstruct_histogram(sample_set: WeightedSampleSet, edges) -> HistogramEstimate:
    """Point-estimate histogram of the base-model observable distribution.

    Per-bin mass is the mixture-weighted fraction of pooled samples in the
    bin; at the solved fixed point the masses over covering bins sum to 1.
    """
    if sample_set.log_z is None:
        raise EstimationError("solve the partition values before reconstructing")
    edges = validate_edges(edges)
    nbins = len(edges) - 1
    log_w = log_mixture_weights(
        sample_set.values, sample_set.biases, sample_set.alphas, sample_set.log_z
    )
    log_contrib = sample_set.log_pool_weights + log_w
    idx = bin_index(edges, sample_set.values)
    inside = idx >= 0
    peak = float(np.max(log_contrib)) if len(log_contrib) else 0.0
    rel = np.exp(log_contrib - peak)
    sums = np.bincount(idx[inside], weights=rel[inside], minlength=nbins)
    sums_sq = np.bincount(idx[inside], weights=rel[inside] ** 2, minlength=nbins)
    occupied = sums > 0
    probability = np.zeros(nbins)
    probability[occupied] = np.exp(np.log(sums[occupied]) + peak)
    n_eff = np.zeros(nbins)
    n_eff[occupied] = sums[occupied] ** 2 / sums_sq[occupied]
    density = probability / np.diff(edges)
    return HistogramEstimate(edges, probability, density, n_eff=n_eff)


def wilson_interval(successes: int, trials: int, coverage: float = DEFAULT_COVERAGE):
    """Wilson score interval for a binomial proportion."""
    if trials < 1 or not 0 <= successes <= trials:
        raise ValidationError("need 0 <= successes <= trials, trials >= 1")
    if not 0.0 < coverage < 1.0:
        raise ValidationError("coverage must be in (0, 1)")
    z = float(norm.ppf(0.5 + coverage / 2.0))
    k, n = successes, trials
    denom = n + z * z
    center = (k + z * z / 2.0) / denom
    half = z * math.sqrt(k * (n - k) / n + z * z / 4.0) / denom
    lo = 0.0 if k == 0 else max(0.0, center - half)
    hi = 1.0 if k == n else min(1.0, center + half)
    return lo, hi


def direct_histogram(
    values, edges, coverage: float = DEFAULT_COVERAGE
) -> HistogramEstimate:
    """Plain histogram of direct samples with per-bin Wilson intervals."""
    edges = validate_edges(edges)
    values = np.asarray(values, dtype=float)
    if len(values) == 0:
        raise EstimationError("no direct samples to histogram")
    idx = bin_index(edges, values)
    inside = idx >= 0
    counts = np.bincount(idx[inside], minlength=len(edges) - 1)
    n = len(values)
    widths = np.diff(edges)
    probability = counts / n
    bounds = np.array([wilson_interval(int(k), n, coverage) for k in counts])
    return HistogramEstimate(
        edges,
        probability,
        probability / widths,
        ci_lo=bounds[:, 0] / widths,
        ci_hi=bounds[:, 1] / widths,
        n_eff=counts.astype(float),
    )


# ---------------------------------------------------------------------------
# Bootstrap over independent chains
# ---------------------------------------------------------------------------


def bootstrap_ci(
    chains: Sequence[ChainData],
    replicas: int,
    coverage: float,
    pipeline: Callable[[list[ChainData]], HistogramEstimate],
    rng: np.random.Generator,
    max_discard_fraction: float = 0.2,
) -> HistogramEstimate:
    """Percentile bootstrap over whole independent chains.

    Each replica resamples chains with replacement within each chain group
    (direct / positive arm / negative arm), preserving the run design, and
    re-runs the full pipeline. Per-bin bounds are the empirical
    (1-coverage)/2 and 1-(1-coverage)/2 percentiles across replicas,
    widened if needed to bracket the point estimate. Replicas whose
    convergence filter drops everything are discarded; more than
    `max_discard_fraction` discarded is an error.
    """
    if replicas < 2:
        raise ValidationError("need at least 2 bootstrap replicas")
    if not 0.0 < coverage < 1.0:
        raise ValidationError("coverage must be in (0, 1)")
    point = pipeline(list(chains))

    groups: dict[str, list[ChainData]] = {}
    for chain in chains:
        groups.setdefault(chain.group, []).append(chain)

    densities = []
    discarded = 0
    for _ in range(replicas):
        resampled: list[ChainData] = []
        for members in groups.values():
            picks = rng.integers(0, len(members), size=len(members))
            resampled.extend(members[i] for i in picks)
        try:
            est = pipeline(resampled)
        except (EstimationError, ConvergenceError) as exc:
            warnings.warn(f"bootstrap replica discarded: {exc}", stacklevel=2)
            discarded += 1
            continue
        densities.append(est.density)
    if discarded > max_discard_fraction * replicas:
        raise EstimationError(
            f"{discarded}/{replicas} bootstrap replicas failed; estimate unreliable"
        )
    stack = np.vstack(densities)
    lo_pct = 100.0 * (1.0 - coverage) / 2.0
    ci_lo = np.percentile(stack, lo_pct, axis=0)
    ci_hi = np.percentile(stack, 100.0 - lo_pct, axis=0)
    # The interval must bracket the reported estimate.
    ci_lo = np.minimum(ci_lo, point.density)
    ci_hi = np.maximum(ci_hi, point.density)
    return replace(point, ci_lo=ci_lo, ci_hi=ci_hi)


# ---------------------------------------------------------------------------
# Error analysis
# ---------------------------------------------------------------------------


def relative_ci_halfwidth(
    est: HistogramEstimate,
    empty_bin: str = "nan",
    reference: HistogramEstimate | None = None,
) -> np.ndarray:
    """(upper - lower) / 2 divided by the point estimate, per bin.

    Bins with zero estimate are undefined; `empty_bin` selects the
    substitute height: "nan" marks them, "half-min-nonzero" uses half the
    smallest non-zero bin height from this estimate, "reference" uses the
    heights of `reference` (e.g. the reweighted estimate).
    """
    if est.ci_lo is None or est.ci_hi is None:
        raise EstimationError("estimate carries no confidence interval")
    half = (est.ci_hi - est.ci_lo) / 2.0
    base = est.density.astype(float).copy()
    zero = base <= 0.0
    if zero.any():
        if empty_bin == "nan":
            base[zero] = math.nan
        elif empty_bin == "half-min-nonzero":
            nonzero = est.density[est.density > 0]
            if len(nonzero) == 0:
                raise EstimationError("all bins are empty")
            base[zero] = nonzero.min() / 2.0
        elif empty_bin == "reference":
            if reference is None:
                raise ValidationError("reference estimate required")
            base[zero] = reference.density[zero]
        else:
            raise ValidationError(f"unknown empty-bin convention {empty_bin!r}")
    with np.errstate(invalid="ignore", divide="ignore"):
        return half / base


@dataclass
class BiasShiftReport:
    """Change in bin heights between the full and half sample sets.

    delta = h_full - h_half per bin, normalized by the full heights and by
    the full estimate's CI half-widths; NaN marks bins empty in either
    estimate.
    """

    edges: np.ndarray
    delta: np.ndarray
    delta_over_full: np.ndarray
    delta_over_ci: np.ndarray


def first_half_chains(chains: Sequence[ChainData]) -> list[ChainData]:
    """Truncate every (chain, bias) segment to its first half."""
    return [chain.sliced(lambda seg: slice(0, len(seg) // 2)) for chain in chains]


def bias_shift_report(
    full_est: HistogramEstimate, half_est: HistogramEstimate
) -> BiasShiftReport:
    if full_est.ci_lo is None or full_est.ci_hi is None:
        raise EstimationError("full estimate needs confidence intervals")
    if not np.array_equal(full_est.edges, half_est.edges):
        raise ValidationError("estimates use different bin edges")
    delta = full_est.density - half_est.density
    usable = (full_est.density > 0) & (half_est.density > 0)
    half_ci = (full_est.ci_hi - full_est.ci_lo) / 2.0
    with np.errstate(invalid="ignore", divide="ignore"):
        over_full = np.where(usable, delta / full_est.density, math.nan)
        over_ci = np.where(
            usable & (half_ci > 0), delta / np.where(half_ci > 0, half_ci, 1.0), math.nan
        )
    over_ci = np.where(usable & (half_ci == 0) & (delta == 0), 0.0, over_ci)
    return BiasShiftReport(full_est.edges, delta, over_full, over_ci)
