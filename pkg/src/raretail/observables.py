"""Trajectory observables: readability (ARI), completion log-probability,
and consecutive token repeats.

Observables are pure functions of a trajectory; samplers bias toward their
extreme values and the estimator reconstructs their unbiased distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

from .errors import DegenerateTextError, UnknownObservableError, ValidationError
from .model import AutoregressiveModel, Trajectory, detokenize, score

# Readability index constants. The three coefficients and the cap are pinned
# by golden tests; change them nowhere else.
ARI_CHARS_PER_WORD_WEIGHT = 4.71
ARI_WORDS_PER_SENTENCE_WEIGHT = 0.5
ARI_OFFSET = 21.43
DEFAULT_ARI_CAP = 15.0

_SENTENCE_MARKS = frozenset(".!?")


@dataclass(frozen=True)
class TextStats:
    """Character/word/sentence counts under this package's counting rules."""

    characters: int
    words: int
    sentences: int


def text_stats(text: str) -> TextStats:
    """Count characters, words and sentences.

    Characters are alphanumeric characters; words are maximal
    whitespace-separated runs containing at least one alphanumeric
    character; sentences are '.', '!' or '?' occurrences, floored at 1.
    """
    characters = sum(1 for ch in text if ch.isalnum())
    words = sum(1 for run in text.split() if any(ch.isalnum() for ch in run))
    sentences = max(1, sum(1 for ch in text if ch in _SENTENCE_MARKS))
    return TextStats(characters, words, sentences)


def ari(text: str, cap: float = DEFAULT_ARI_CAP) -> float:
    """Automated readability index of the text, capped from above.

    Very high readability scores otherwise dominate biased sampling, so
    the value is min(cap, raw index); the low side is uncapped.
    """
    if not text.strip():
        raise DegenerateTextError("cannot score empty text")
    stats = text_stats(text)
    if stats.words == 0:
        raise DegenerateTextError("text contains no countable words")
    raw = (
        ARI_CHARS_PER_WORD_WEIGHT * stats.characters / stats.words
        + ARI_WORDS_PER_SENTENCE_WEIGHT * stats.words / stats.sentences
        - ARI_OFFSET
    )
    return min(cap, raw)


def logprob_observable(traj: Trajectory, model: AutoregressiveModel) -> float:
    """Log-probability of the completion given the prompt, freshly scored."""
    return score(model, traj.prompt, traj.completion)


def repeats(traj: Trajectory) -> int:
    """Adjacent equal token pairs over the full prompt+completion sequence."""
    tokens = traj.tokens
    return sum(1 for a, b in zip(tokens, tokens[1:]) if a == b)


OBSERVABLE_IDS = ("ari", "logprob", "repeats")


def evaluate(
    observable: str,
    traj: Trajectory,
    model: AutoregressiveModel | None = None,
    vocab: Sequence[str] | None = None,
    cap: float = DEFAULT_ARI_CAP,
) -> float:
    """Evaluate a registered observable on a trajectory.

    ARI is computed over the detokenized prompt+completion pair; logprob
    over the completion only. The result must be finite.
    """
    key = observable.lower()
    if key == "ari":
        if vocab is None:
            raise ValidationError("ARI needs a vocabulary to detokenize")
        value = ari(detokenize(vocab, traj.tokens), cap)
    elif key == "logprob":
        if model is None:
            raise ValidationError("logprob needs the scoring model")
        value = logprob_observable(traj, model)
    elif key == "repeats":
        value = float(repeats(traj))
    else:
        raise UnknownObservableError(f"unknown observable {observable!r}")
    if not math.isfinite(value):
        raise ValidationError(f"observable {observable!r} is not finite: {value}")
    return float(value)


def make_observable(
    observable: str,
    model: AutoregressiveModel | None = None,
    vocab: Sequence[str] | None = None,
    cap: float = DEFAULT_ARI_CAP,
) -> Callable[[Trajectory], float]:
    """Bind an observable id to its context, for tight sampler loops."""
    if observable.lower() not in OBSERVABLE_IDS:
        raise UnknownObservableError(f"unknown observable {observable!r}")
    return lambda traj: evaluate(observable, traj, model=model, vocab=vocab, cap=cap)
