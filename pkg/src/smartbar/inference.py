"""Checksum-constrained decoding over per-digit probabilities.

``greedy_decode`` takes the per-digit argmax.  ``mpa`` widens the search to
the second-best value of the ``max_iter`` least certain digits (smallest
top-1/top-2 probability gap) and returns the most probable candidate that
satisfies the EAN-13 checksum.  ``mpa_aug`` retries on the 90/180/270 degree
rotations until something decodes; ``mpa_aug_vote`` pools the valid
candidates of all four orientations and returns the most frequent one.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, replace
from typing import FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np

from .imaging import rotate_exact
from .soft_decoder import LogitSource, softmax_rows
from .symbology import LENGTH, DigitSequence, validate_checksum

ORIENTATIONS = (0, 90, 180, 270)
V = 2


@dataclass(frozen=True)
class GapEntry:
    position: int  # 1-based digit index
    gap: float


@dataclass(frozen=True)
class SIConfig:
    max_iter: int = 3
    voting: bool = False
    # reproduce the printed pseudocode: only single flips, never the
    # unmodified combination
    literal: bool = False

    def __post_init__(self):
        if not 0 <= self.max_iter <= LENGTH:
            raise ValueError(f"max_iter must lie in [0, {LENGTH}]")

    @property
    def v(self) -> int:
        return V


@dataclass(frozen=True)
class Candidate:
    sequence: DigitSequence
    flipped_positions: FrozenSet[int]
    log_joint: float


@dataclass(frozen=True)
class SIResult:
    """``sequence`` is None for the NoResult outcome."""

    sequence: Optional[DigitSequence]
    orientation: Optional[int] = None
    rank: Optional[int] = None
    vote_count: Optional[int] = None
    log_joint: Optional[float] = None
    evaluated: int = 0
    calls: int = 0

    @property
    def decoded(self) -> bool:
        return self.sequence is not None


NO_RESULT = SIResult(None)


def greedy_decode(logits) -> DigitSequence:
    """Per-row argmax; ties go to the smaller digit."""
    return tuple(int(d) for d in np.argmax(np.asarray(logits), axis=1))


def _ranked(probs: np.ndarray) -> np.ndarray:
    # stable sort on -p keeps the smaller digit first among ties
    return np.argsort(-probs, axis=1, kind="stable")


def gap_list(probs: np.ndarray) -> List[GapEntry]:
    """Gap entries sorted ascending; equal gaps keep the lower position first."""
    order = _ranked(probs)
    rows = np.arange(probs.shape[0])
    gaps = probs[rows, order[:, 0]] - probs[rows, order[:, 1]]
    idx = np.argsort(gaps, kind="stable")
    return [GapEntry(int(i) + 1, float(gaps[i])) for i in idx]


def undetermined_rows(probs: np.ndarray) -> List[int]:
    """Positions whose top value is shared by more than two digits, so no
    pair of values can stand for the row (e.g. a flat row with no evidence)."""
    top = np.sort(probs, axis=1)[:, ::-1]
    return [int(i) + 1 for i in np.nonzero(top[:, 2] >= top[:, 0])[0]]


def candidates(logits, cfg: SIConfig) -> List[Candidate]:
    """All candidates in test order (descending joint probability)."""
    probs = softmax_rows(logits)
    logp = np.log(np.maximum(probs, np.finfo(float).tiny))
    order = _ranked(probs)
    top1 = order[:, 0]
    top2 = order[:, 1]
    rows = np.arange(probs.shape[0])
    base_lp = logp[rows, top1]
    total = float(base_lp.sum())
    chosen = [g.position for g in gap_list(probs)[:cfg.max_iter]]

    def build(flips: Sequence[int]) -> Candidate:
        seq = top1.copy()
        lj = total
        for pos in flips:
            seq[pos - 1] = top2[pos - 1]
            lj += logp[pos - 1, top2[pos - 1]] - base_lp[pos - 1]
        return Candidate(tuple(int(d) for d in seq), frozenset(flips), lj)

    if cfg.literal:
        return [build([pos]) for pos in chosen]

    out = []
    for mask in range(1 << len(chosen)):
        out.append(build([p for k, p in enumerate(chosen) if mask >> k & 1]))
    # the unmodified combination is first: every flip swaps in a factor <= its own
    out.sort(key=lambda c: -c.log_joint)
    assert not out[0].flipped_positions or out[0].log_joint == total
    return out


def mpa(logits, cfg: SIConfig = SIConfig()) -> Union[SIResult, List[Candidate]]:
    """Checksum-filtered candidate search.

    Without voting, returns the first checksum-valid candidate as an
    :class:`SIResult` (or NoResult).  With ``cfg.voting`` returns every
    checksum-valid candidate in test order.
    """
    probs = softmax_rows(logits)
    if undetermined_rows(probs):
        return [] if cfg.voting else NO_RESULT
    cands = candidates(logits, cfg)
    if cfg.voting:
        return [c for c in cands if validate_checksum(c.sequence)]
    for rank, c in enumerate(cands):
        if validate_checksum(c.sequence):
            return SIResult(c.sequence, orientation=0, rank=rank, log_joint=c.log_joint,
                            evaluated=rank + 1)
    return replace(NO_RESULT, evaluated=len(cands))


def mpa_aug(src: LogitSource, img, cfg: SIConfig = SIConfig(max_iter=1)) -> SIResult:
    """Fast-track augmentation: stop at the first orientation that decodes."""
    cfg = replace(cfg, voting=False)
    evaluated = 0
    for i, deg in enumerate(ORIENTATIONS):
        res = mpa(src(rotate_exact(img, deg)), cfg)
        evaluated += res.evaluated
        if res.decoded:
            return replace(res, orientation=deg, evaluated=evaluated, calls=i + 1)
    return replace(NO_RESULT, evaluated=evaluated, calls=len(ORIENTATIONS))


def vote(pool: Sequence[Tuple[int, Candidate]]) -> SIResult:
    """Majority over ``(orientation, candidate)`` pairs, in pool order.

    Ties on count go to the larger summed log-joint, then to the earliest
    orientation the sequence appeared at.
    """
    groups: "OrderedDict[DigitSequence, list]" = OrderedDict()
    for orientation, cand in pool:
        g = groups.setdefault(cand.sequence, [0, 0.0, orientation])
        g[0] += 1
        g[1] += cand.log_joint
    if not groups:
        return NO_RESULT
    seq, (count, lj, orientation) = min(
        groups.items(), key=lambda kv: (-kv[1][0], -kv[1][1], kv[1][2])
    )
    return SIResult(seq, orientation=orientation, vote_count=count, log_joint=lj)


def mpa_aug_vote(src: LogitSource, img, cfg: SIConfig = SIConfig(max_iter=1, voting=True)) -> SIResult:
    """Run voting-mode MPA on all four orientations and vote over the pool."""
    cfg = replace(cfg, voting=True)
    pool = []
    for deg in ORIENTATIONS:
        for cand in mpa(src(rotate_exact(img, deg)), cfg):
            pool.append((deg, cand))
    res = vote(pool)
    return replace(res, calls=len(ORIENTATIONS), evaluated=len(pool))
