"""Exact enumeration oracle for small models.

Enumerates every completion a model can emit up to a length cap, with exact
probabilities, and computes ground-truth partition functions, tilted PMFs
and marginals. This is a test instrument: everything else in the package is
validated against it on systems small enough to enumerate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import EnumerationBudgetError, ValidationError
from .model import AutoregressiveModel, Trajectory
from .observables import DEFAULT_ARI_CAP, evaluate
from .util import bin_index, validate_edges

ENUMERATION_CAP = 10**7  # hard budget on V**L


@dataclass
class EnumeratedEnsemble:
    """Every completion with its exact base log-probability.

    Completions either reach `length` tokens or end earlier at the model's
    EOS token, exactly matching the support of sample_completion.
    """

    model: AutoregressiveModel
    prompt: tuple[int, ...]
    length: int
    completions: list[tuple[int, ...]]
    log_probs: np.ndarray
    vocab: list[str] | None = None
    ari_cap: float = DEFAULT_ARI_CAP
    _values: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.completions)

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    def observable_values(self, observable: str) -> np.ndarray:
        """Exact observable value per enumerated completion (cached)."""
        key = observable.lower()
        cached = self._values.get(key)
        if cached is None:
            cached = np.array(
                [
                    evaluate(
                        key,
                        Trajectory(self.prompt, comp, (0.0,) * len(comp)),
                        model=self.model,
                        vocab=self.vocab,
                        cap=self.ari_cap,
                    )
                    for comp in self.completions
                ]
            )
            self._values[key] = cached
        return cached


def enumerate_completions(
    model: AutoregressiveModel,
    prompt: Sequence[int],
    length: int,
    vocab: Sequence[str] | None = None,
    ari_cap: float = DEFAULT_ARI_CAP,
) -> EnumeratedEnsemble:
    """Exhaustively enumerate completions of length <= `length`.

    Refuses when the V**L outcome budget exceeds the enforced cap.
    """
    if length < 1:
        raise ValidationError("length must be >= 1")
    budget = model.vocab_size**length
    if budget > ENUMERATION_CAP:
        raise EnumerationBudgetError(
            f"enumeration needs up to {budget} outcomes, cap is {ENUMERATION_CAP}"
        )
    prompt = tuple(prompt)
    completions: list[tuple[int, ...]] = []
    log_probs: list[float] = []
    eos = model.eos_id

    # Depth-first expansion; a branch ends at the length cap or at EOS.
    stack: list[tuple[list[int], float]] = [([], 0.0)]
    while stack:
        partial, lp = stack.pop()
        if len(partial) == length or (partial and partial[-1] == eos):
            completions.append(tuple(partial))
            log_probs.append(lp)
            continue
        row = np.asarray(model.next_logprobs(list(prompt) + partial), dtype=float)
        for tok in range(model.vocab_size):
            step = float(row[tok])
            if step == -np.inf:
                continue  # unreachable branch carries zero mass
            stack.append((partial + [tok], lp + step))

    return EnumeratedEnsemble(
        model=model,
        prompt=prompt,
        length=length,
        completions=completions,
        log_probs=np.array(log_probs),
        vocab=list(vocab) if vocab is not None else None,
        ari_cap=ari_cap,
    )


def log_partition_function(
    ensemble: EnumeratedEnsemble, observable: str, lam: float
) -> float:
    """Exact log Z(lambda) = log sum_x exp(-lambda * phi(x)) p(x)."""
    phi = ensemble.observable_values(observable)
    return float(logsumexp(ensemble.log_probs - lam * phi))


def partition_function(ensemble: EnumeratedEnsemble, observable: str, lam: float) -> float:
    """Exact Z(lambda); accumulated in log space for accuracy."""
    return float(np.exp(log_partition_function(ensemble, observable, lam)))


def tilted_pmf(ensemble: EnumeratedEnsemble, observable: str, lam: float) -> np.ndarray:
    """Exact exponentially reweighted PMF over the enumerated completions."""
    phi = ensemble.observable_values(observable)
    logits = ensemble.log_probs - lam * phi
    return np.exp(logits - logsumexp(logits))


def marginal(
    ensemble: EnumeratedEnsemble,
    observable: str,
    edges,
    lam: float = 0.0,
) -> np.ndarray:
    """Exact per-bin probability that the observable lands in each bin.

    Bins are half-open [a_l, a_{l+1}) with the last right edge included;
    lam tilts the underlying distribution (0 gives the base model).
    """
    edges = validate_edges(edges)
    phi = ensemble.observable_values(observable)
    probs = tilted_pmf(ensemble, observable, lam) if lam != 0.0 else ensemble.probs
    idx = bin_index(edges, phi)
    out = np.zeros(len(edges) - 1)
    inside = idx >= 0
    np.add.at(out, idx[inside], probs[inside])
    return out


def expectation(
    ensemble: EnumeratedEnsemble, observable: str, lam: float = 0.0
) -> float:
    """Exact E_{p_lambda}[phi]."""
    phi = ensemble.observable_values(observable)
    probs = tilted_pmf(ensemble, observable, lam)
    return float(np.dot(probs, phi))
