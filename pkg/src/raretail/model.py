"""Autoregressive sequence models and trajectory scoring/sampling.

A model is anything that maps a token prefix to a normalized next-token
distribution. Built-in models are small and exactly enumerable; they stand
in for a neural LM so every downstream estimate can be checked against
brute-force enumeration. All probability arithmetic is in natural-log space.
"""

from __future__ import annotations

import json
import math
import re
from abc import ABC, abstractmethod
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidTokenError, ValidationError

PROB_ATOL = 1e-9  # next-token distributions must sum to 1 within this


@dataclass(frozen=True, slots=True)
class Trajectory:
    """A prompt plus generated completion with cached per-token log-probs.

    The prompt is conditioning, never state: samplers may replace the
    completion but must carry the prompt through unchanged. step_logprobs
    holds the conditional log-probability of each completion token under
    the model that generated it, in generation order.
    """

    prompt: tuple[int, ...]
    completion: tuple[int, ...]
    step_logprobs: tuple[float, ...]

    def __post_init__(self):
        if len(self.prompt) == 0:
            raise ValidationError("trajectory prompt must not be empty")
        if len(self.step_logprobs) != len(self.completion):
            raise ValidationError("step_logprobs length must match completion length")

    @property
    def tokens(self) -> tuple[int, ...]:
        return self.prompt + self.completion

    @property
    def log_prob(self) -> float:
        """Cached trajectory log-probability (sum of step log-probs)."""
        return math.fsum(self.step_logprobs)


class _Row:
    """Cached next-token distribution for one context."""

    __slots__ = ("logprobs", "cum")

    def __init__(self, logprobs: np.ndarray):
        self.logprobs = logprobs
        self.cum = np.cumsum(np.exp(logprobs)).tolist()


class AutoregressiveModel(ABC):
    """Next-token distribution over a fixed vocabulary, given a prefix.

    Implementations must be deterministic (same prefix, same distribution)
    and immutable after construction, so instances are safe to share across
    workers. Per-context rows are cached keyed on `context_key`; subclasses
    with bounded memory narrow the key to make the cache effective.
    """

    vocab_size: int
    eos_id: int | None = None

    def __init__(self):
        self._rows: dict = {}

    @abstractmethod
    def next_logprobs(self, prefix: Sequence[int]) -> np.ndarray:
        """Natural-log next-token probabilities, shape (vocab_size,)."""

    def context_key(self, prefix: Sequence[int]):
        """Hashable key identifying the part of the prefix the model reads."""
        return tuple(prefix)

    def _row(self, prefix: Sequence[int]) -> _Row:
        key = self.context_key(prefix)
        row = self._rows.get(key)
        if row is None:
            lp = np.asarray(self.next_logprobs(prefix), dtype=float)
            if lp.shape != (self.vocab_size,):
                raise ValidationError(
                    f"next_logprobs returned shape {lp.shape}, expected ({self.vocab_size},)"
                )
            row = _Row(lp)
            self._rows[key] = row  # idempotent; benign under concurrent insert
        return row

    def token_logprob(self, prefix: Sequence[int], token: int) -> float:
        if not 0 <= token < self.vocab_size:
            raise InvalidTokenError(f"token {token} outside vocabulary of size {self.vocab_size}")
        return float(self._row(prefix).logprobs[token])

    def draw_next(self, prefix: Sequence[int], rng) -> tuple[int, float]:
        """Sample one next token by inverse CDF; returns (token, logprob)."""
        row = self._row(prefix)
        token = bisect_right(row.cum, rng.random())
        if token >= self.vocab_size:  # guard against cum[-1] rounding below 1
            token = self.vocab_size - 1
        return token, float(row.logprobs[token])


class UniformModel(AutoregressiveModel):
    """Every token equally likely at every position."""

    def __init__(self, vocab_size: int, eos_id: int | None = None):
        super().__init__()
        if vocab_size < 1:
            raise ValidationError("vocab_size must be >= 1")
        self.vocab_size = vocab_size
        self.eos_id = eos_id

    def context_key(self, prefix):
        return ()

    def next_logprobs(self, prefix):
        return np.full(self.vocab_size, -math.log(self.vocab_size))


class CategoricalTableModel(AutoregressiveModel):
    """Explicit conditional PMF table keyed by a bounded-order context suffix.

    `table` maps a context tuple (the last `order` tokens of the prefix,
    fewer near the sequence start) to a probability row over the vocabulary.
    Rows must sum to 1 within 1e-6 and are renormalized exactly. A missing
    context falls back to the longest known suffix, then to `default_row`
    (uniform if not given).
    """

    def __init__(
        self,
        vocab_size: int,
        order: int,
        table: dict[tuple[int, ...], Sequence[float]],
        default_row: Sequence[float] | None = None,
        eos_id: int | None = None,
    ):
        super().__init__()
        if vocab_size < 1 or order < 0:
            raise ValidationError("need vocab_size >= 1 and order >= 0")
        self.vocab_size = vocab_size
        self.order = order
        self.eos_id = eos_id
        self._table = {
            tuple(ctx): self._normalize(row) for ctx, row in table.items()
        }
        if default_row is not None:
            self._default = self._normalize(default_row)
        else:
            self._default = np.full(vocab_size, 1.0 / vocab_size)

    def _normalize(self, row) -> np.ndarray:
        row = np.asarray(row, dtype=float)
        if row.shape != (self.vocab_size,):
            raise ValidationError(f"table row must have length {self.vocab_size}")
        if np.any(row < 0):
            raise ValidationError("table row has negative probabilities")
        total = row.sum()
        if not math.isclose(total, 1.0, rel_tol=0, abs_tol=1e-6):
            raise ValidationError(f"table row sums to {total}, expected 1")
        return row / total

    def context_key(self, prefix):
        return tuple(prefix[-self.order:]) if self.order else ()

    def next_logprobs(self, prefix):
        ctx = self.context_key(prefix)
        while True:
            row = self._table.get(ctx)
            if row is not None or not ctx:
                break
            ctx = ctx[1:]
        if row is None:
            row = self._default
        with np.errstate(divide="ignore"):  # zero-prob entries are legal
            return np.log(row)


class NGramModel(AutoregressiveModel):
    """Add-one-smoothed n-gram counts model trained from token sequences."""

    def __init__(self, vocab_size: int, order: int, eos_id: int | None = None):
        super().__init__()
        if order < 1:
            raise ValidationError("n-gram order must be >= 1")
        self.vocab_size = vocab_size
        self.order = order
        self.eos_id = eos_id
        self._context_len = order - 1
        self._counts: dict[tuple[int, ...], np.ndarray] = {}
        self._trained = False

    def fit(self, sequences: Sequence[Sequence[int]]) -> "NGramModel":
        """Accumulate n-gram counts; callable once, before any scoring."""
        if self._trained:
            raise ValidationError("NGramModel is immutable once trained")
        for seq in sequences:
            seq = list(seq)
            for tok in seq:
                if not 0 <= tok < self.vocab_size:
                    raise InvalidTokenError(f"token {tok} outside vocabulary")
            for i in range(len(seq)):
                ctx = tuple(seq[max(0, i - self._context_len):i])
                row = self._counts.get(ctx)
                if row is None:
                    row = np.zeros(self.vocab_size)
                    self._counts[ctx] = row
                row[seq[i]] += 1
        self._trained = True
        return self

    def context_key(self, prefix):
        return tuple(prefix[-self._context_len:]) if self._context_len else ()

    def next_logprobs(self, prefix):
        ctx = self.context_key(prefix)
        counts = self._counts.get(ctx)
        if counts is None:
            counts = np.zeros(self.vocab_size)
        return np.log(counts + 1.0) - math.log(counts.sum() + self.vocab_size)


def score(model: AutoregressiveModel, prompt: Sequence[int], completion: Sequence[int]) -> float:
    """Log-probability of the completion given the prompt.

    Sums the model's conditional log-probabilities over completion
    positions; an empty completion scores 0.
    """
    for tok in prompt:
        if not 0 <= tok < model.vocab_size:
            raise InvalidTokenError(f"prompt token {tok} outside vocabulary")
    prefix = list(prompt)
    total = 0.0
    for tok in completion:
        total += model.token_logprob(prefix, tok)
        prefix.append(tok)
    return total


def sample_completion(
    model: AutoregressiveModel, prompt: Sequence[int], max_len: int, rng
) -> Trajectory:
    """Generate a completion token-by-token from the model's conditionals.

    Generation stops after max_len tokens, or as soon as the model's
    end-of-sequence token (if it defines one) is emitted; the EOS token is
    part of the completion. Identical rng state yields identical output.
    """
    if max_len < 1:
        raise ValidationError("max_len must be >= 1")
    completion, lps = _extend(model, prompt, (), (), max_len, rng)
    return Trajectory(tuple(prompt), completion, lps)


def _extend(model, prompt, kept, kept_lps, max_len, rng):
    """Continue a partial completion autoregressively up to max_len / EOS."""
    completion = list(kept)
    lps = list(kept_lps)
    prefix = list(prompt) + completion
    draw = model.draw_next
    eos = model.eos_id
    while len(completion) < max_len:
        tok, lp = draw(prefix, rng)
        completion.append(tok)
        lps.append(lp)
        prefix.append(tok)
        if tok == eos:
            break
    return tuple(completion), tuple(lps)


# ---------------------------------------------------------------------------
# Vocabulary handling and model definition files
# ---------------------------------------------------------------------------

_WHITESPACE = re.compile(r"\s+")


def detokenize(vocab: Sequence[str], tokens: Sequence[int]) -> str:
    """Concatenate vocabulary text pieces verbatim."""
    return "".join(vocab[t] for t in tokens)


def encode_text(vocab: Sequence[str], text: str, scheme: str = "whitespace") -> list[int]:
    """Map text to token ids under a toy tokenization scheme.

    "whitespace": split on whitespace; each word must match a piece
    (with or without its trailing space). "char": one piece per character.
    """
    if scheme == "char":
        pieces = list(text)
    elif scheme == "whitespace":
        pieces = [w for w in _WHITESPACE.split(text) if w]
    else:
        raise ValidationError(f"unknown tokenization scheme {scheme!r}")
    index = {piece: i for i, piece in enumerate(vocab)}
    stripped = {piece.rstrip(): i for i, piece in enumerate(vocab)}
    ids = []
    for piece in pieces:
        tok = index.get(piece)
        if tok is None:
            tok = stripped.get(piece)
        if tok is None:
            raise ValidationError(f"text piece {piece!r} not in vocabulary")
        ids.append(tok)
    return ids


@dataclass
class ModelSpec:
    """A loaded model plus the vocabulary that maps ids to text pieces."""

    model: AutoregressiveModel
    vocab: list[str]
    scheme: str = "whitespace"
    definition: dict = field(default_factory=dict)

    def encode(self, text: str) -> list[int]:
        return encode_text(self.vocab, text, self.scheme)


def _parse_context(key: str) -> tuple[int, ...]:
    key = key.strip()
    if not key:
        return ()
    return tuple(int(part) for part in key.split(","))


def load_model(source: str | Path | dict, base_dir: Path | None = None) -> ModelSpec:
    """Load a model definition from a JSON file or an inline dict.

    Schema: {"type": "uniform" | "table" | "ngram", "vocab": [str, ...], ...}.
    Table models add "order" and "probs" ({"ctx,ids": [row]}), n-gram models
    add "order" and "corpus" (UTF-8 text path) and train at load time.
    """
    if isinstance(source, (str, Path)):
        path = Path(source)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        base_dir = path.parent
        definition = json.loads(path.read_text(encoding="utf-8"))
    else:
        definition = dict(source)
    kind = definition.get("type")
    vocab = definition.get("vocab")
    if not isinstance(vocab, list) or not all(isinstance(p, str) for p in vocab):
        raise ValidationError("model definition needs a 'vocab' array of strings")
    scheme = definition.get("scheme", "whitespace")
    eos = definition.get("eos")
    vsize = len(vocab)

    if kind == "uniform":
        model: AutoregressiveModel = UniformModel(vsize, eos_id=eos)
    elif kind == "table":
        probs = definition.get("probs")
        if not isinstance(probs, dict):
            raise ValidationError("table model needs a 'probs' mapping")
        table = {_parse_context(k): v for k, v in probs.items()}
        model = CategoricalTableModel(
            vsize, int(definition.get("order", 1)), table,
            default_row=definition.get("default"), eos_id=eos,
        )
    elif kind == "ngram":
        corpus = definition.get("corpus")
        if corpus is None:
            raise ValidationError("ngram model needs a 'corpus' text path")
        corpus_path = Path(corpus)
        if base_dir is not None and not corpus_path.is_absolute():
            corpus_path = base_dir / corpus_path
        text = corpus_path.read_text(encoding="utf-8")
        ids = encode_text(vocab, text, scheme)
        model = NGramModel(vsize, int(definition.get("order", 2)), eos_id=eos).fit([ids])
    else:
        raise ValidationError(f"unknown model type {kind!r}")
    return ModelSpec(model=model, vocab=list(vocab), scheme=scheme, definition=definition)
