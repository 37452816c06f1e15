"""Run-directory persistence.

Layout of a run directory:

    config.json        the experiment config, verbatim
    manifest.json      config hash, per-chain status and token counters
    records/*.jsonl.gz one append-only file per chain, one record per line
    diagnostics.json   GR, acceptance, overlap (written by diagnose/run)
    hist.csv/.json     histogram estimate and solver metadata (estimate/run)

Record lines carry {"chain", "k", "lambda", "n", "tokens", "o", "accepted",
"o_prop"} where "tokens" is the completion only — every trajectory of a run
shares the prompt stored in config.json. Chain files are written to a .tmp
path and renamed on clean close, so a leftover .tmp is the persisted marker
of a partially written (aborted) chain.
"""

from __future__ import annotations

import csv
import gzip
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ValidationError
from .estimator import HistogramEstimate
from .records import ChainData, Segment, group_of
from .sampler import ChainRecord

RECORDS_DIR = "records"
MANIFEST_NAME = "manifest.json"
CONFIG_NAME = "config.json"


class ChainSink:
    """Gzip JSONL writer for one chain, with tmp-file crash marker.

    Appending after a write failure or close raises; the .tmp file stays
    behind as the partial marker until close() succeeds and renames it.
    """

    def __init__(self, path: Path):
        self.path = Path(path)
        self.tmp_path = self.path.with_suffix(self.path.suffix + ".tmp")
        self.path.parent.mkdir(parents=True, exist_ok=True)
        # mtime=0 keeps chain files byte-reproducible across runs
        raw = open(self.tmp_path, "wb")
        self._gz = gzip.GzipFile(fileobj=raw, mode="wb", mtime=0)
        self._stream = io.TextIOWrapper(self._gz, encoding="utf-8", newline="\n")
        self.records = 0
        self._failed = False

    def append(self, record: ChainRecord):
        if self._failed:
            raise ValidationError("sink already failed; chain must be restarted")
        try:
            self._stream.write(encode_record(record))
            self._stream.write("\n")
        except Exception:
            self._failed = True
            raise
        self.records += 1

    def close(self, success: bool = True):
        try:
            self._stream.close()
        except Exception:
            self._failed = True
            raise
        if success and not self._failed:
            self.tmp_path.replace(self.path)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close(success=exc_type is None)
        return False


def encode_record(record: ChainRecord) -> str:
    return json.dumps(
        {
            "chain": record.chain,
            "k": record.k,
            "lambda": record.lam,
            "n": record.n,
            "tokens": list(record.trajectory.completion),
            "o": record.o,
            "accepted": record.accepted,
            "o_prop": record.o_prop,
        },
        separators=(",", ":"),
    )


def iter_record_dicts(path: Path) -> Iterator[dict]:
    with gzip.open(path, "rt", encoding="utf-8") as stream:
        for line in stream:
            line = line.strip()
            if line:
                yield json.loads(line)


def chain_file(run_dir: Path, chain: str) -> Path:
    return Path(run_dir) / RECORDS_DIR / f"{chain}.jsonl.gz"


def load_chain_data(run_dir: Path) -> list[ChainData]:
    """Column views of every completed chain file, sorted by chain name."""
    rec_dir = Path(run_dir) / RECORDS_DIR
    if not rec_dir.is_dir():
        raise ValidationError(f"{run_dir} has no {RECORDS_DIR}/ directory")
    chains = []
    for path in sorted(rec_dir.glob("*.jsonl.gz")):
        segments: dict[int, tuple[float, list[float], list[bool]]] = {}
        name = path.name[: -len(".jsonl.gz")]
        for rec in iter_record_dicts(path):
            entry = segments.get(rec["k"])
            if entry is None:
                entry = segments[rec["k"]] = (rec["lambda"], [], [])
            entry[1].append(rec["o"])
            entry[2].append(rec["accepted"])
        chains.append(
            ChainData(
                name,
                group_of(name),
                [
                    Segment(name, k, lam, np.array(o), np.array(acc, dtype=bool))
                    for k, (lam, o, acc) in sorted(segments.items())
                ],
            )
        )
    return chains


def load_completion_lengths(run_dir: Path, chain: str) -> list[int]:
    return [len(rec["tokens"]) for rec in iter_record_dicts(chain_file(run_dir, chain))]


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


@dataclass
class ChainEntry:
    path: str
    status: str = "pending"  # pending | complete | failed
    records: int = 0
    tokens_generated: int = 0


@dataclass
class RunManifest:
    """Self-describing run state: enough to resume from the directory alone."""

    config_hash: str
    status: str = "pending"  # pending | sampling | complete | failed
    chains: dict[str, ChainEntry] = field(default_factory=dict)
    total_tokens: int = 0
    total_steps: int = 0

    @property
    def tokens_per_step(self) -> float:
        return self.total_tokens / self.total_steps if self.total_steps else math.nan

    def unfinished_chains(self) -> list[str]:
        return [name for name, e in self.chains.items() if e.status != "complete"]

    def refresh_totals(self):
        self.total_tokens = sum(e.tokens_generated for e in self.chains.values())
        self.total_steps = sum(e.records for e in self.chains.values())

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "status": self.status,
            "chains": {
                name: {
                    "path": e.path,
                    "status": e.status,
                    "records": e.records,
                    "tokens_generated": e.tokens_generated,
                }
                for name, e in sorted(self.chains.items())
            },
            "total_tokens": self.total_tokens,
            "total_steps": self.total_steps,
            "tokens_per_step": None if math.isnan(self.tokens_per_step) else self.tokens_per_step,
        }

    def save(self, run_dir: Path):
        path = Path(run_dir) / MANIFEST_NAME
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
        tmp.replace(path)

    @classmethod
    def load(cls, run_dir: Path) -> "RunManifest":
        path = Path(run_dir) / MANIFEST_NAME
        if not path.is_file():
            raise ValidationError(f"{run_dir} has no {MANIFEST_NAME}")
        raw = json.loads(path.read_text(encoding="utf-8"))
        manifest = cls(config_hash=raw["config_hash"], status=raw["status"])
        for name, entry in raw.get("chains", {}).items():
            manifest.chains[name] = ChainEntry(
                path=entry["path"],
                status=entry["status"],
                records=entry["records"],
                tokens_generated=entry["tokens_generated"],
            )
        manifest.total_tokens = raw.get("total_tokens", 0)
        manifest.total_steps = raw.get("total_steps", 0)
        return manifest


# ---------------------------------------------------------------------------
# Histogram CSV
# ---------------------------------------------------------------------------

HIST_COLUMNS = ("bin_lo", "bin_hi", "density", "ci_lo", "ci_hi", "n_eff")


def write_histogram_csv(path: Path, est: HistogramEstimate):
    """Write the estimate as CSV; float formatting is shortest-roundtrip."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ci_lo = est.ci_lo if est.ci_lo is not None else est.density
    ci_hi = est.ci_hi if est.ci_hi is not None else est.density
    n_eff = est.n_eff if est.n_eff is not None else np.zeros_like(est.density)
    with open(path, "w", encoding="utf-8", newline="") as stream:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(HIST_COLUMNS)
        for i in range(len(est.density)):
            writer.writerow(
                [
                    repr(float(est.edges[i])),
                    repr(float(est.edges[i + 1])),
                    repr(float(est.density[i])),
                    repr(float(ci_lo[i])),
                    repr(float(ci_hi[i])),
                    repr(float(n_eff[i])),
                ]
            )


def read_histogram_csv(path: Path) -> HistogramEstimate:
    with open(path, encoding="utf-8", newline="") as stream:
        reader = csv.DictReader(stream)
        rows = list(reader)
    if not rows:
        raise ValidationError(f"{path} holds no bins")
    edges = [float(r["bin_lo"]) for r in rows] + [float(rows[-1]["bin_hi"])]
    edges = np.array(edges)
    density = np.array([float(r["density"]) for r in rows])
    return HistogramEstimate(
        edges=edges,
        probability=density * np.diff(edges),
        density=density,
        ci_lo=np.array([float(r["ci_lo"]) for r in rows]),
        ci_hi=np.array([float(r["ci_hi"]) for r in rows]),
        n_eff=np.array([float(r["n_eff"]) for r in rows]),
    )


def write_csv(path: Path, header: Sequence[str], rows: Iterator[Sequence]):
    """Small deterministic CSV writer used for plot-data emission."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as stream:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [repr(float(v)) if isinstance(v, float) else v for v in row]
            )
