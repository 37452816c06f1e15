"""HTTP client for an external next-token-distribution service.

Lets the samplers drive a model served out of process (e.g. a neural LM)
through a one-endpoint wire protocol:

    POST /v1/next_logprobs   {"tokens": [int, ...]}
    -> 200                   {"logprobs": [float, ...]}   (length V)

Responses must exponentiate-sum to 1 within 1e-6. Requests are stateless;
responses are cached per full prefix for the lifetime of the client, since
forward-shooting proposals re-score shared prefixes heavily.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import requests

from .errors import NetworkError, ProtocolError, ValidationError
from .model import AutoregressiveModel

ENDPOINT_PATH = "/v1/next_logprobs"
WIRE_NORMALIZATION_ATOL = 1e-6


@dataclass(frozen=True)
class EndpointConfig:
    """Connection settings for an external model endpoint."""

    base_url: str
    vocab_size: int
    eos_id: int | None = None
    timeout: float = 10.0
    retries: int = 3
    backoff: float = 0.1


class ExternalModel(AutoregressiveModel):
    """AutoregressiveModel backed by a remote next-logprobs endpoint.

    Shareable across threads; the prefix cache is guarded by a lock and
    lives for one client instance (one run).
    """

    def __init__(self, config: EndpointConfig):
        super().__init__()
        if config.vocab_size < 1:
            raise ValidationError("vocab_size must be >= 1")
        self.config = config
        self.vocab_size = config.vocab_size
        self.eos_id = config.eos_id
        self._url = config.base_url.rstrip("/") + ENDPOINT_PATH
        self._cache: dict[tuple[int, ...], np.ndarray] = {}
        self._lock = threading.Lock()

    def next_logprobs(self, prefix: Sequence[int]) -> np.ndarray:
        if len(prefix) == 0:
            raise ValidationError("prefix must not be empty")
        key = tuple(prefix)
        with self._lock:
            cached = self._cache.get(key)
        if cached is not None:
            return cached
        logprobs = self._fetch(key)
        with self._lock:
            self._cache[key] = logprobs
        return logprobs

    def _fetch(self, tokens: tuple[int, ...]) -> np.ndarray:
        last_error: Exception | None = None
        for attempt in range(self.config.retries):
            if attempt:
                time.sleep(self.config.backoff * 2 ** (attempt - 1))
            try:
                response = requests.post(
                    self._url, json={"tokens": list(tokens)}, timeout=self.config.timeout
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if response.status_code >= 500:
                last_error = NetworkError(f"server error {response.status_code}")
                continue
            if response.status_code != 200:
                raise ProtocolError(f"endpoint returned status {response.status_code}")
            return self._parse(response)
        raise NetworkError(
            f"endpoint unreachable after {self.config.retries} attempts: {last_error}"
        )

    def _parse(self, response) -> np.ndarray:
        try:
            payload = response.json()
        except ValueError as exc:
            raise ProtocolError(f"response is not JSON: {exc}") from exc
        logprobs = payload.get("logprobs") if isinstance(payload, dict) else None
        if not isinstance(logprobs, list) or len(logprobs) != self.vocab_size:
            raise ProtocolError(
                f"expected 'logprobs' list of length {self.vocab_size}"
            )
        arr = np.asarray(logprobs, dtype=float)
        total = float(np.exp(arr).sum())
        if not math.isclose(total, 1.0, rel_tol=0, abs_tol=WIRE_NORMALIZATION_ATOL):
            raise ProtocolError(f"logprobs exponentiate-sum to {total}, expected 1")
        return arr
