"""Trajectory-space samplers.

Direct (ancestral) sampling, Metropolis-Hastings with the forward-shooting
proposal (truncate the completion at a uniform cut and regenerate the tail
from the base model), annealing schedules over a bias ladder, and optional
replica exchange between fixed-bias chains.

Cut convention: the cut index tau is uniform on 1..L over the completion;
tokens at completion positions >= tau are regenerated and positions < tau
are kept. tau = 1 therefore regenerates the whole completion, so every
completion token can be resampled and the chain is ergodic. The prompt is
conditioning, never state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

from .errors import ValidationError
from .model import AutoregressiveModel, Trajectory, _extend, sample_completion

Observable = Callable[[Trajectory], float]


@dataclass(frozen=True)
class TiltedTarget:
    """One exponentially reweighted target distribution.

    lam = 0 is the unbiased model distribution; positive lam pushes the
    sampler toward low observable values, negative toward high ones.
    """

    observable: str
    lam: float

    def __post_init__(self):
        if not math.isfinite(self.lam):
            raise ValidationError("bias must be finite")


@dataclass(frozen=True)
class AnnealingSchedule:
    """Ordered bias ladder with a fixed number of MH steps per bias."""

    biases: tuple[float, ...]
    steps_per_bias: int

    def __post_init__(self):
        if len(self.biases) < 1:
            raise ValidationError("schedule needs at least one bias")
        if self.steps_per_bias < 1:
            raise ValidationError("steps_per_bias must be >= 1")
        mags = [abs(b) for b in self.biases]
        if any(b > a for a, b in zip(mags[1:], mags)):
            raise ValidationError("|bias| must be nondecreasing along the schedule")


@dataclass(slots=True)
class ChainRecord:
    """One MCMC step's outcome: the post-decision state and bookkeeping."""

    chain: str
    k: int
    lam: float
    n: int
    trajectory: Trajectory
    o: float
    accepted: bool
    o_prop: float


@dataclass
class ChainStats:
    """Per-chain summary returned by the samplers."""

    chain: str
    records: int
    tokens_generated: int
    accepted_by_bias: dict[float, int]
    steps_by_bias: dict[float, int]
    final: Trajectory | None = None


def direct_sample(
    model: AutoregressiveModel,
    prompt: Sequence[int],
    max_len: int,
    count: int,
    rng,
    phi: Observable,
    sink=None,
    chain: str = "direct-0",
) -> list[ChainRecord]:
    """Draw `count` i.i.d. trajectories; records carry bias 0.

    Appends to `sink` when given (returning an empty list), otherwise
    returns the records.
    """
    if count < 0:
        raise ValidationError("count must be >= 0")
    records: list[ChainRecord] = []
    out = sink if sink is not None else records
    for n in range(count):
        traj = sample_completion(model, prompt, max_len, rng)
        o = phi(traj)
        out.append(ChainRecord(chain, 0, 0.0, n, traj, o, True, o))
    return records


def tps_propose(
    current: Trajectory, model: AutoregressiveModel, rng, max_len: int | None = None
) -> tuple[Trajectory, int]:
    """Forward-shooting proposal: cut at tau, regenerate the tail.

    tau is uniform on 1..len(completion); completion tokens before
    position tau are kept with their cached log-probs and the rest is
    resampled from the model, up to max_len tokens total (defaults to the
    current completion length, i.e. fixed-length generation).
    """
    length = len(current.completion)
    if length < 1:
        raise ValidationError("cannot propose from an empty completion")
    if max_len is None:
        max_len = length
    tau = rng.randint(1, length)
    kept = current.completion[: tau - 1]
    kept_lps = current.step_logprobs[: tau - 1]
    completion, lps = _extend(model, current.prompt, kept, kept_lps, max_len, rng)
    return Trajectory(current.prompt, completion, lps), tau


def acceptance_probability(
    o: float, o_prime: float, lam: float, len_cur: int, len_prop: int
) -> float:
    """min(1, exp(-lam (o' - o)) * L_cur / L_prop).

    The length ratio comes from the uniform cut distribution; for
    fixed-length generation it is exactly 1.
    """
    if len_cur < 1 or len_prop < 1:
        raise ValidationError("trajectory lengths must be >= 1")
    log_ratio = -lam * (o_prime - o) + math.log(len_cur / len_prop)
    if log_ratio >= 0.0:
        return 1.0
    return math.exp(log_ratio)


def mh_accept(
    o: float, o_prime: float, lam: float, len_cur: int, len_prop: int, rng
) -> bool:
    alpha = acceptance_probability(o, o_prime, lam, len_cur, len_prop)
    return alpha >= 1.0 or rng.random() <= alpha


def run_annealed_tps(
    model: AutoregressiveModel,
    prompt: Sequence[int],
    phi: Observable,
    schedule: AnnealingSchedule,
    max_len: int,
    rng,
    sink,
    chain: str = "chain-0",
) -> ChainStats:
    """One annealed TPS chain: direct-sampled start, then, for each bias in
    order, steps_per_bias proposal/acceptance steps with the state carried
    over between biases. Every step appends a ChainRecord to the sink.
    """
    prompt = tuple(prompt)
    traj = sample_completion(model, prompt, max_len, rng)
    o = phi(traj)
    tokens = len(traj.completion)
    accepted_by_bias: dict[float, int] = {}
    steps_by_bias: dict[float, int] = {}
    records = 0
    for k, lam in enumerate(schedule.biases):
        accepted = 0
        for n in range(schedule.steps_per_bias):
            prop, tau = tps_propose(traj, model, rng, max_len)
            tokens += len(prop.completion) - (tau - 1)
            o_prop = phi(prop)
            if mh_accept(o, o_prop, lam, len(traj.completion), len(prop.completion), rng):
                traj, o = prop, o_prop
                accepted += 1
                acc = True
            else:
                acc = False
            sink.append(ChainRecord(chain, k, lam, n, traj, o, acc, o_prop))
            records += 1
        accepted_by_bias[lam] = accepted
        steps_by_bias[lam] = schedule.steps_per_bias
    return ChainStats(chain, records, tokens, accepted_by_bias, steps_by_bias, traj)


@dataclass
class ReplicaState:
    """State of one fixed-bias chain in a replica-exchange ensemble."""

    lam: float
    trajectory: Trajectory
    o: float


def exchange_probability(lam_i: float, lam_j: float, o_i: float, o_j: float) -> float:
    """min(1, exp((lam_i - lam_j)(phi_i - phi_j))) for a state swap."""
    log_ratio = (lam_i - lam_j) * (o_i - o_j)
    if log_ratio >= 0.0:
        return 1.0
    return math.exp(log_ratio)


def replica_exchange_step(states: list[ReplicaState], rng) -> tuple[int, bool]:
    """Propose swapping one uniformly chosen adjacent pair of replicas.

    Swaps states (trajectory and cached observable), never biases, so the
    extended ensemble keeps detailed balance. Returns (pair index, accepted).
    """
    if len(states) < 2:
        raise ValidationError("replica exchange needs at least two chains")
    i = rng.randrange(len(states) - 1)
    a, b = states[i], states[i + 1]
    if rng.random() <= exchange_probability(a.lam, b.lam, a.o, b.o):
        a.trajectory, b.trajectory = b.trajectory, a.trajectory
        a.o, b.o = b.o, a.o
        return i, True
    return i, False


def run_parallel_tempering(
    model: AutoregressiveModel,
    prompt: Sequence[int],
    phi: Observable,
    biases: Sequence[float],
    steps: int,
    max_len: int,
    rng,
    sink,
    chain: str = "chain-0",
    exchange: bool = True,
) -> ChainStats:
    """Fixed-bias chains advanced in lockstep with optional adjacent swaps.

    Each sweep applies one TPS step per replica, then (if enabled) one
    replica-exchange proposal; the post-sweep state of replica k is
    recorded under bias index k. Output layout matches run_annealed_tps.
    """
    prompt = tuple(prompt)
    states = []
    for lam in biases:
        traj = sample_completion(model, prompt, max_len, rng)
        states.append(ReplicaState(lam, traj, phi(traj)))
    tokens = sum(len(s.trajectory.completion) for s in states)
    accepted_by_bias = {lam: 0 for lam in biases}
    steps_by_bias = {lam: steps for lam in biases}
    records = 0
    for n in range(steps):
        flags = []
        for state in states:
            prop, tau = tps_propose(state.trajectory, model, rng, max_len)
            tokens += len(prop.completion) - (tau - 1)
            o_prop = phi(prop)
            ok = mh_accept(
                state.o, o_prop, state.lam,
                len(state.trajectory.completion), len(prop.completion), rng,
            )
            if ok:
                state.trajectory, state.o = prop, o_prop
                accepted_by_bias[state.lam] += 1
            flags.append((ok, o_prop))
        if exchange and len(states) > 1:
            replica_exchange_step(states, rng)
        for k, (state, (ok, o_prop)) in enumerate(zip(states, flags)):
            sink.append(
                ChainRecord(chain, k, state.lam, n, state.trajectory, state.o, ok, o_prop)
            )
            records += 1
    return ChainStats(chain, records, tokens, accepted_by_bias, steps_by_bias, None)
