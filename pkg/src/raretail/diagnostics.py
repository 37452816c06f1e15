"""Convergence and sampling-quality diagnostics.

Burn-in trimming, the Gelman-Rubin between/within-chain statistic with a
pass threshold of 1.1, per-bias acceptance rates, and the pairwise overlap
matrix that tells whether adjacent biased distributions share enough
support for multistate reweighting to be reliable.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import ValidationError
from .records import ChainData, Segment, segments_by_bias

DEFAULT_GR_THRESHOLD = 1.1
DEFAULT_OVERLAP_CUTOFF = 0.03


@dataclass
class GRReport:
    """Gelman-Rubin result for one bias.

    statistic is None when fewer than two chains were available (nothing
    to compare, treated as a pass); divergent marks stuck chains with zero
    within-chain variance but distinct values.
    """

    lam: float
    statistic: float | None
    chains: int
    samples: int
    passed: bool
    divergent: bool = False


def apply_burn_in(chains: Sequence[ChainData], fraction: float) -> list[ChainData]:
    """Drop the first ceil(fraction * N) records of every (chain, bias) segment."""
    if not 0.0 <= fraction < 1.0:
        raise ValidationError("burn-in fraction must be in [0, 1)")
    return [
        chain.sliced(lambda seg: slice(math.ceil(fraction * len(seg)), None))
        for chain in chains
    ]


def gelman_rubin(
    chain_values: Sequence[Sequence[float]],
    lam: float = 0.0,
    threshold: float = DEFAULT_GR_THRESHOLD,
) -> GRReport:
    """Between/within-chain variance ratio over J equal-length chains.

    GR = ((L-1)/L * W + B/L) / W with B the between-chain and W the mean
    within-chain (ddof=1) variance; tends to 1 from below as equal-
    distribution chains grow. Identical constant chains define GR=(L-1)/L;
    distinct constant chains are flagged divergent and fail.
    """
    if len(chain_values) < 2:
        raise ValidationError("Gelman-Rubin needs at least two chains")
    length = min(len(c) for c in chain_values)
    if length < 2:
        raise ValidationError("Gelman-Rubin needs at least two samples per chain")
    y = np.array([np.asarray(c, dtype=float)[:length] for c in chain_values])
    J, L = y.shape
    means = y.mean(axis=1)
    B = L / (J - 1) * ((means - means.mean()) ** 2).sum()
    W = y.var(axis=1, ddof=1).mean()
    if W == 0.0:
        if B == 0.0:
            stat = (L - 1) / L
            return GRReport(lam, stat, J, L, passed=stat < threshold)
        return GRReport(lam, math.inf, J, L, passed=False, divergent=True)
    stat = ((L - 1) / L * W + B / L) / W
    return GRReport(lam, stat, J, L, passed=stat < threshold)


def gr_by_bias(
    chains: Sequence[ChainData], threshold: float = DEFAULT_GR_THRESHOLD
) -> dict[float, GRReport]:
    """Gelman-Rubin per bias across all chains holding that bias.

    Chains of unequal length are truncated to the shortest; a bias seen in
    only one chain cannot be assessed and reports a pass with no statistic.
    """
    reports = {}
    for lam, segs in segments_by_bias(chains).items():
        usable = [s for s in segs if len(s) >= 2]
        if len(usable) < 2:
            n = max((len(s) for s in segs), default=0)
            reports[lam] = GRReport(lam, None, len(segs), n, passed=True)
            continue
        reports[lam] = gelman_rubin([s.o for s in usable], lam, threshold)
    return reports


def filter_converged(
    chains: Sequence[ChainData], threshold: float = DEFAULT_GR_THRESHOLD
) -> tuple[list[ChainData], list[float], dict[float, GRReport]]:
    """Remove every record belonging to a bias that fails Gelman-Rubin.

    Returns (kept chains, dropped biases, per-bias reports). Idempotent:
    the surviving biases pass, so a second pass removes nothing.
    """
    reports = gr_by_bias(chains, threshold)
    dropped = sorted(lam for lam, rep in reports.items() if not rep.passed)
    if not dropped:
        return list(chains), [], reports
    dropped_set = set(dropped)
    kept = []
    for chain in chains:
        segs = [seg for seg in chain.segments if seg.lam not in dropped_set]
        kept.append(ChainData(chain.chain, chain.group, segs))
    return kept, dropped, reports


def acceptance_report(chains: Sequence[ChainData]) -> dict[float, float]:
    """Accepted fraction of proposals per bias, pooled over chains."""
    rates = {}
    for lam, segs in segments_by_bias(chains).items():
        total = sum(len(s) for s in segs)
        accepted = sum(int(s.accepted.sum()) for s in segs)
        rates[lam] = accepted / total if total else math.nan
    return rates


def acceptance_by_chain(chains: Sequence[ChainData]) -> dict[tuple[str, float], float]:
    out = {}
    for chain in chains:
        for seg in chain.segments:
            out[(chain.chain, seg.lam)] = float(seg.accepted.mean()) if len(seg) else math.nan
    return out


@dataclass
class OverlapMatrix:
    """Estimated probability of seeing distribution i's samples under j.

    Columns are probability vectors (they sum to 1 once the reweighting
    solve has converged). Adjacent ladder pairs whose mutual overlap falls
    below the cutoff are flagged as unreliable for reweighting.
    """

    biases: np.ndarray
    matrix: np.ndarray
    counts: np.ndarray
    flagged_pairs: list[tuple[int, int]]
    cutoff: float = DEFAULT_OVERLAP_CUTOFF


def overlap_matrix(
    values: np.ndarray,
    biases: Sequence[float],
    log_z: Sequence[float],
    counts: Sequence[int],
    weights: np.ndarray | None = None,
    cutoff: float = DEFAULT_OVERLAP_CUTOFF,
) -> OverlapMatrix:
    """Monte-Carlo overlap estimate from the pooled sample mixture.

    `values` are pooled observable values from all biases; `log_z` are the
    solved log partition values; `counts` are per-bias sample counts
    (biases with zero samples are excluded with a warning). `weights`
    optionally carries per-sample pooling weights summing to 1 (defaults
    to uniform 1/N).
    """
    values = np.asarray(values, dtype=float)
    biases = np.asarray(biases, dtype=float)
    log_z = np.asarray(log_z, dtype=float)
    counts = np.asarray(counts, dtype=int)
    if not (len(biases) == len(log_z) == len(counts)):
        raise ValidationError("biases, log_z and counts must align")
    keep = counts > 0
    if not np.all(keep):
        warnings.warn(
            f"excluding {np.count_nonzero(~keep)} empty distribution(s) from overlap",
            stacklevel=2,
        )
        biases, log_z, counts = biases[keep], log_z[keep], counts[keep]
    K = len(biases)
    total = int(counts.sum())
    if weights is None:
        weights = np.full(len(values), 1.0 / len(values))
    # log q_k(x_n) = -lam_k phi_n - log Z_k; the base model cancels in ratios.
    log_q = -np.outer(biases, values) - log_z[:, None]
    log_den = logsumexp(log_q + np.log(counts)[:, None], axis=0)
    # O_ij = sum_n w_n [N_i q_i / D] [N q_j / D]
    left = np.exp(log_q + np.log(counts)[:, None] - log_den[None, :])
    right = np.exp(log_q + math.log(total) - log_den[None, :]) * weights[None, :]
    matrix = left @ right.T
    flagged = [
        (i, i + 1)
        for i in range(K - 1)
        if min(matrix[i, i + 1], matrix[i + 1, i]) < cutoff
    ]
    return OverlapMatrix(biases, matrix, counts, flagged, cutoff)
