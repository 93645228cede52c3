"""Accuracy / error / no-result accounting for decoder variants.

A *variant* maps one dataset item to a decoded sequence or None.  Items are
either :class:`~smartbar.datasets.Sample` (with an image) or
:class:`LogitRecord` (precomputed logits, no image).
"""

from __future__ import annotations

import hashlib
import json
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .inference import SIConfig, greedy_decode, mpa, mpa_aug, mpa_aug_vote
from .soft_decoder import LogitSource
from .symbology import LENGTH, DigitSequence, as_sequence, to_text, validate_checksum

CORRECT, INCORRECT, NO_RESULT = "correct", "incorrect", "no_result"
MODES = ("greedy", "mpa", "mpa-aug", "mpa-vote")
IMAGE_MODES = ("mpa-aug", "mpa-vote")


class SchemaError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class DimensionError(SchemaError):
    pass


class RegressionError(RuntimeError):
    pass


@dataclass(frozen=True)
class LogitRecord:
    id: str
    logits: np.ndarray
    truth: DigitSequence
    condition: str = "ingested"


def classify(decoded: Optional[DigitSequence], truth: DigitSequence) -> str:
    if decoded is None:
        return NO_RESULT
    return CORRECT if tuple(decoded) == tuple(truth) else INCORRECT


@dataclass
class Counts:
    total: int = 0
    correct: int = 0
    errors: int = 0
    no_results: int = 0

    def add(self, outcome: str) -> None:
        self.total += 1
        if outcome == CORRECT:
            self.correct += 1
        elif outcome == INCORRECT:
            self.errors += 1
        else:
            self.no_results += 1

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0

    def to_json(self) -> dict:
        return {"total": self.total, "correct": self.correct, "errors": self.errors,
                "no_results": self.no_results, "accuracy": self.accuracy}


@dataclass
class EvalReport:
    variant: str
    overall: Counts = field(default_factory=Counts)
    per_condition: Dict[str, Counts] = field(default_factory=dict)
    invalid_decodes: int = 0  # decoded outputs failing the checksum
    times_ms: List[float] = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        return self.overall.accuracy

    @property
    def mean_ms(self) -> float:
        return float(np.mean(self.times_ms)) if self.times_ms else 0.0

    @property
    def median_ms(self) -> float:
        return float(np.median(self.times_ms)) if self.times_ms else 0.0

    def to_json(self, timing: bool = True) -> dict:
        doc = {
            "variant": self.variant,
            "overall": self.overall.to_json(),
            "per_condition": {k: v.to_json() for k, v in sorted(self.per_condition.items())},
            "invalid_decodes": self.invalid_decodes,
        }
        if timing:
            doc["mean_ms"] = self.mean_ms
            doc["median_ms"] = self.median_ms
        return doc


# --- variants ---------------------------------------------------------------

class CachedSource:
    """Memoises a logit source on image content; safe to share across threads."""

    def __init__(self, src: LogitSource):
        self.src = src
        self._cache: Dict[bytes, np.ndarray] = {}
        self._lock = threading.Lock()

    def __call__(self, img: np.ndarray) -> np.ndarray:
        img = np.ascontiguousarray(img)
        key = hashlib.blake2b(img.tobytes() + repr(img.shape).encode(), digest_size=16).digest()
        with self._lock:
            hit = self._cache.get(key)
        if hit is None:
            hit = self.src(img)
            with self._lock:
                self._cache[key] = hit
        return hit


def _logits(src: Optional[LogitSource], item) -> np.ndarray:
    if isinstance(item, LogitRecord):
        return item.logits
    return src(item.image)


def make_variant(mode: str, src: Optional[LogitSource] = None, max_iter: int = 1) -> Callable:
    """Decoder closure ``item -> sequence | None`` for one of :data:`MODES`."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "greedy":
        return lambda item: greedy_decode(_logits(src, item))
    if mode == "mpa":
        cfg = SIConfig(max_iter=max_iter)
        return lambda item: mpa(_logits(src, item), cfg).sequence

    def need_image(item):
        if isinstance(item, LogitRecord):
            raise ValueError(f"{mode} needs images; precomputed logits support greedy and mpa only")
        return item.image

    if mode == "mpa-aug":
        cfg = SIConfig(max_iter=max_iter)
        return lambda item: mpa_aug(src, need_image(item), cfg).sequence
    cfg = SIConfig(max_iter=max_iter, voting=True)
    return lambda item: mpa_aug_vote(src, need_image(item), cfg).sequence


def variant_name(mode: str, max_iter: int) -> str:
    return "greedy" if mode == "greedy" else f"{mode}@{max_iter}"


def evaluate(variant: Callable, dataset: Sequence, name: str = "variant", jobs: int = 1) -> EvalReport:
    """Run ``variant`` on every item and aggregate outcomes."""
    if not len(dataset):
        raise ValueError("empty dataset")

    def one(item):
        t0 = time.perf_counter()
        seq = variant(item)
        return seq, (time.perf_counter() - t0) * 1e3

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(one, dataset))
    else:
        results = [one(item) for item in dataset]

    rep = EvalReport(name)
    check = name != "greedy"
    for item, (seq, ms) in zip(dataset, results):
        outcome = classify(seq, item.truth)
        rep.overall.add(outcome)
        rep.per_condition.setdefault(item.condition, Counts()).add(outcome)
        rep.times_ms.append(ms)
        if check and seq is not None and not validate_checksum(seq):
            rep.invalid_decodes += 1
    return rep


@dataclass
class Grid:
    """Rows are logit sources, columns nonMPA then one per max_iter."""

    family: str
    sources: List[str]
    max_iters: List[int]
    reports: Dict[Tuple[str, str], EvalReport]

    @property
    def columns(self) -> List[str]:
        return ["nonMPA"] + [f"max={m}" for m in self.max_iters]

    def _key(self, col: str) -> str:
        return "greedy" if col == "nonMPA" else f"{self.family}@{col[4:]}"

    def matrix(self, metric: str = "accuracy") -> np.ndarray:
        out = np.zeros((len(self.sources), len(self.columns)))
        for i, s in enumerate(self.sources):
            for j, c in enumerate(self.columns):
                rep = self.reports[s, self._key(c)]
                out[i, j] = rep.accuracy if metric == "accuracy" else getattr(rep.overall, metric)
        return out

    def to_json(self, timing: bool = True) -> dict:
        return {
            "family": self.family,
            "sources": self.sources,
            "columns": self.columns,
            "accuracy": self.matrix("accuracy").tolist(),
            "errors": self.matrix("errors").astype(int).tolist(),
            "no_results": self.matrix("no_results").astype(int).tolist(),
            "reports": [self.reports[s, self._key(c)].to_json(timing) | {"source": s}
                        for s in self.sources for c in self.columns],
        }


def compare_grid(sources: Dict[str, LogitSource], max_iters: Sequence[int], dataset: Sequence,
                 family: str = "mpa", jobs: int = 1) -> Grid:
    """Evaluate greedy plus ``family`` at every max_iter for every source."""
    if family not in MODES[1:]:
        raise ValueError(f"family must be one of {MODES[1:]}")
    reports = {}
    for name, src in sources.items():
        cached = CachedSource(src) if src is not None else None
        reports[name, "greedy"] = evaluate(make_variant("greedy", cached), dataset, "greedy", jobs)
        for m in max_iters:
            key = variant_name(family, m)
            reports[name, key] = evaluate(make_variant(family, cached, m), dataset, key, jobs)
    return Grid(family, list(sources), list(max_iters), reports)


# --- NDJSON logits ------------------------------------------------------------

def _check_logits(raw, line: int) -> np.ndarray:
    if not isinstance(raw, list) or len(raw) != LENGTH:
        n = len(raw) if isinstance(raw, list) else "non-list"
        raise DimensionError(line, f"logits must have {LENGTH} rows, got {n}")
    for row in raw:
        if not isinstance(row, list) or len(row) != 10:
            raise DimensionError(line, "every logit row must hold 10 values")
        for x in row:
            if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
                raise SchemaError(line, "logits must be finite numbers")
    return np.asarray(raw, dtype=np.float64)


def ingest_logits(path) -> List[LogitRecord]:
    """Parse ``{"id", "logits", "truth"}`` records, one JSON object per line."""
    out = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(line_no, f"invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise SchemaError(line_no, "record must be an object")
            missing = {"id", "logits", "truth"} - rec.keys()
            if missing:
                raise SchemaError(line_no, f"missing field(s) {sorted(missing)}")
            if not isinstance(rec["id"], str):
                raise SchemaError(line_no, "id must be a string")
            truth = rec["truth"]
            if not (isinstance(truth, str) and len(truth) == LENGTH and truth.isascii() and truth.isdigit()):
                raise SchemaError(line_no, f"truth must be {LENGTH} ASCII digits")
            logits = _check_logits(rec["logits"], line_no)
            out.append(LogitRecord(rec["id"], logits, as_sequence(truth), rec.get("condition", "ingested")))
    return out


def export_logits(items: Sequence, src: LogitSource, path) -> int:
    """Write ``src`` logits for every sample as NDJSON; returns the record count."""
    with open(path, "w") as fh:
        for i, item in enumerate(items):
            rec = {"id": getattr(item, "id", None) or f"{i:06d}",
                   "logits": np.asarray(_logits(src, item), dtype=np.float64).tolist(),
                   "truth": to_text(item.truth), "condition": item.condition}
            fh.write(json.dumps(rec) + "\n")
    return len(items)


# --- baselines and rendering --------------------------------------------------

def baseline_counts(reports: Sequence[EvalReport]) -> dict:
    return {r.variant: {k: v for k, v in r.overall.to_json().items() if k != "accuracy"} for r in reports}


def check_baseline(reports: Sequence[EvalReport], path) -> List[str]:
    """Write the golden file if absent, else list regressions against it.

    A regression is fewer correct decodes or more errors than recorded.
    """
    path = Path(path)
    current = baseline_counts(reports)
    if not path.exists():
        path.write_text(json.dumps(current, indent=2, sort_keys=True) + "\n")
        return []
    golden = json.loads(path.read_text())
    problems = []
    for name, want in golden.items():
        got = current.get(name)
        if got is None:
            continue
        if got["total"] != want["total"]:
            problems.append(f"{name}: dataset size {got['total']} != baseline {want['total']}")
            continue
        if got["correct"] < want["correct"]:
            problems.append(f"{name}: correct {got['correct']} < baseline {want['correct']}")
        if got["errors"] > want["errors"]:
            problems.append(f"{name}: errors {got['errors']} > baseline {want['errors']}")
    return problems


def _pct(x: float) -> str:
    return f"{100 * x:.2f}%"


def report_markdown(reports: Sequence[EvalReport], timing: bool = True) -> str:
    lines = []
    for rep in reports:
        lines.append(f"### {rep.variant}\n")
        lines.append("| condition | total | correct | errors | no result | accuracy |")
        lines.append("|---|---:|---:|---:|---:|---:|")
        rows = sorted(rep.per_condition.items()) + [("**overall**", rep.overall)]
        for cond, c in rows:
            lines.append(f"| {cond} | {c.total} | {c.correct} | {c.errors} | {c.no_results} | {_pct(c.accuracy)} |")
        if timing:
            lines.append(f"\nmean {rep.mean_ms:.2f} ms/image, median {rep.median_ms:.2f} ms/image")
        lines.append("")
    return "\n".join(lines)


def grid_markdown(grid: Grid) -> str:
    out = []
    for metric, fmt in (("accuracy", _pct), ("errors", lambda x: str(int(x))), ("no_results", lambda x: str(int(x)))):
        mat = grid.matrix(metric)
        out.append(f"#### {grid.family}: {metric.replace('_', ' ')}\n")
        out.append("| source | " + " | ".join(grid.columns) + " |")
        out.append("|---|" + "---:|" * len(grid.columns))
        for name, row in zip(grid.sources, mat):
            out.append(f"| {name} | " + " | ".join(fmt(x) for x in row) + " |")
        out.append("")
    return "\n".join(out)
