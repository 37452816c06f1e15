"""Column-oriented views of chain records.

Diagnostics and estimation only need each (chain, bias) segment's ordered
observable values and acceptance flags, so records are regrouped into
numpy-backed segments once and sliced from there.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .sampler import ChainRecord


@dataclass
class Segment:
    """Ordered per-step data for one (chain, bias) stretch of a chain."""

    chain: str
    k: int
    lam: float
    o: np.ndarray
    accepted: np.ndarray

    def __len__(self) -> int:
        return len(self.o)


@dataclass
class ChainData:
    """All segments of one chain, in schedule order.

    `group` names the resampling unit family the chain belongs to
    (e.g. "direct", "pos", "neg"); bootstrap resamples within groups.
    """

    chain: str
    group: str
    segments: list[Segment]

    def sliced(self, slicer) -> "ChainData":
        """New ChainData with `slicer(segment) -> slice` applied per segment."""
        out = []
        for seg in self.segments:
            sl = slicer(seg)
            out.append(replace(seg, o=seg.o[sl], accepted=seg.accepted[sl]))
        return ChainData(self.chain, self.group, out)


def group_of(chain: str) -> str:
    """Group name from a chain id like "pos-3" (falls back to the full id)."""
    return chain.rsplit("-", 1)[0] if "-" in chain else chain


def chains_from_records(records: Iterable[ChainRecord]) -> list[ChainData]:
    """Group an in-memory record stream into ChainData, preserving order."""
    by_chain: dict[str, dict[int, tuple[float, list[float], list[bool]]]] = {}
    chain_order: list[str] = []
    for rec in records:
        segs = by_chain.get(rec.chain)
        if segs is None:
            segs = by_chain[rec.chain] = {}
            chain_order.append(rec.chain)
        entry = segs.get(rec.k)
        if entry is None:
            entry = segs[rec.k] = (rec.lam, [], [])
        entry[1].append(rec.o)
        entry[2].append(rec.accepted)
    out = []
    for chain in chain_order:
        segments = [
            Segment(chain, k, lam, np.array(o, dtype=float), np.array(acc, dtype=bool))
            for k, (lam, o, acc) in sorted(by_chain[chain].items())
        ]
        out.append(ChainData(chain, group_of(chain), segments))
    return out


def segments_by_bias(chains: Sequence[ChainData]) -> dict[float, list[Segment]]:
    """Segments regrouped by bias value, ascending."""
    groups: dict[float, list[Segment]] = {}
    for chain in chains:
        for seg in chain.segments:
            groups.setdefault(seg.lam, []).append(seg)
    return dict(sorted(groups.items()))


def pooled_counts(chains: Sequence[ChainData]) -> dict[float, int]:
    return {lam: sum(len(s) for s in segs) for lam, segs in segments_by_bias(chains).items()}
