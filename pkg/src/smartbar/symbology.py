"""EAN-13 digit sequences, check digits and the 95-module bar pattern.

Digits are addressed 1-based from the left in the public helpers
(``digit(seq, 1)`` is the leading digit), while sequences themselves are
plain tuples of ints so they hash, compare and slice like any other value.
"""

from __future__ import annotations

from typing import Iterable, Sequence, Tuple

import numpy as np

LENGTH = 13
N_MODULES = 95

DigitSequence = Tuple[int, ...]

# GS1 odd-parity (L) codes; R is the complement of L, G is R reversed.
L_CODES = (
    "0001101", "0011001", "0010011", "0111101", "0100011",
    "0110001", "0101111", "0111011", "0110111", "0001011",
)
R_CODES = tuple("".join("1" if b == "0" else "0" for b in c) for c in L_CODES)
G_CODES = tuple(c[::-1] for c in R_CODES)

# Parity of the six left-half digits for each leading digit ("L"/"G").
PARITY_PATTERNS = (
    "LLLLLL", "LLGLGG", "LLGGLG", "LLGGGL", "LGLLGG",
    "LGGLLG", "LGGGLL", "LGLGLG", "LGLGGL", "LGGLGL",
)

START_GUARD = "101"
CENTER_GUARD = "01010"
END_GUARD = "101"

# module offsets of the 12 encoded digit cells
CELL_OFFSETS = tuple([3 + 7 * j for j in range(6)] + [50 + 7 * j for j in range(6)])


class MalformedPattern(ValueError):
    """A bar pattern that is not a well-formed EAN-13 symbol."""


def _bits(code: str) -> np.ndarray:
    return np.frombuffer(code.encode(), dtype=np.uint8) - ord("0")


L_TABLE = np.stack([_bits(c) for c in L_CODES])
G_TABLE = np.stack([_bits(c) for c in G_CODES])
R_TABLE = np.stack([_bits(c) for c in R_CODES])

_L_LOOKUP = {c: d for d, c in enumerate(L_CODES)}
_G_LOOKUP = {c: d for d, c in enumerate(G_CODES)}
_R_LOOKUP = {c: d for d, c in enumerate(R_CODES)}
_PARITY_LOOKUP = {p: d for d, p in enumerate(PARITY_PATTERNS)}


def checksum_weights(length: int = LENGTH) -> Tuple[int, ...]:
    """Weights alternating 1, 3 starting from the rightmost digit."""
    return tuple(1 if (length - 1 - i) % 2 == 0 else 3 for i in range(length))


WEIGHTS = checksum_weights()


def as_sequence(value: str | Iterable[int]) -> DigitSequence:
    """Coerce a 13-character digit string or an iterable of digits."""
    if isinstance(value, str):
        if len(value) != LENGTH or not value.isascii() or not value.isdigit():
            raise ValueError(f"expected {LENGTH} ASCII digits, got {value!r}")
        return tuple(int(c) for c in value)
    seq = tuple(int(d) for d in value)
    if len(seq) != LENGTH:
        raise ValueError(f"expected {LENGTH} digits, got {len(seq)}")
    if any(d < 0 or d > 9 for d in seq):
        raise ValueError(f"digits must lie in [0, 9]: {seq}")
    return seq


def to_text(seq: Sequence[int]) -> str:
    return "".join(str(int(d)) for d in seq)


def digit(seq: Sequence[int], position: int) -> int:
    """Return D[position] using 1-based indexing from the left."""
    if not 1 <= position <= len(seq):
        raise IndexError(position)
    return int(seq[position - 1])


def validate_checksum(seq: Sequence[int]) -> bool:
    total = sum(int(d) * w for d, w in zip(seq, checksum_weights(len(seq))))
    return total % 10 == 0


def compute_check_digit(prefix: Sequence[int]) -> int:
    if len(prefix) != LENGTH - 1:
        raise ValueError(f"expected {LENGTH - 1} digits, got {len(prefix)}")
    weights = WEIGHTS[:-1]
    total = sum(int(d) * w for d, w in zip(prefix, weights))
    return (10 - total % 10) % 10


def encode(seq: Sequence[int]) -> np.ndarray:
    """Encode 13 digits as a uint8 array of 95 modules (1 = dark)."""
    seq = as_sequence(seq)
    parity = PARITY_PATTERNS[seq[0]]
    parts = [START_GUARD]
    for p, d in zip(parity, seq[1:7]):
        parts.append(L_CODES[d] if p == "L" else G_CODES[d])
    parts.append(CENTER_GUARD)
    parts.extend(R_CODES[d] for d in seq[7:])
    parts.append(END_GUARD)
    return _bits("".join(parts)).copy()


def decode_exact(pattern: Sequence[int] | str) -> DigitSequence:
    """Invert :func:`encode`; raise :class:`MalformedPattern` on any mismatch."""
    if isinstance(pattern, str):
        text = pattern
    else:
        text = "".join("1" if int(b) else "0" for b in pattern)
    if len(text) != N_MODULES:
        raise MalformedPattern(f"expected {N_MODULES} modules, got {len(text)}")
    if text[:3] != START_GUARD or text[45:50] != CENTER_GUARD or text[92:] != END_GUARD:
        raise MalformedPattern("guard patterns not found")

    parity = []
    left = []
    for off in CELL_OFFSETS[:6]:
        cell = text[off:off + 7]
        if cell in _L_LOOKUP:
            parity.append("L")
            left.append(_L_LOOKUP[cell])
        elif cell in _G_LOOKUP:
            parity.append("G")
            left.append(_G_LOOKUP[cell])
        else:
            raise MalformedPattern(f"no L/G code matches cell at module {off}")
    first = _PARITY_LOOKUP.get("".join(parity))
    if first is None:
        raise MalformedPattern(f"invalid parity pattern {''.join(parity)}")

    right = []
    for off in CELL_OFFSETS[6:]:
        cell = text[off:off + 7]
        if cell not in _R_LOOKUP:
            raise MalformedPattern(f"no R code matches cell at module {off}")
        right.append(_R_LOOKUP[cell])
    return (first, *left, *right)


def pattern_text(pattern: Sequence[int]) -> str:
    return "".join("1" if int(b) else "0" for b in pattern)


def random_valid(rng: np.random.Generator) -> DigitSequence:
    """Draw a uniformly random checksum-valid sequence."""
    prefix = [int(d) for d in rng.integers(0, 10, size=LENGTH - 1)]
    return (*prefix, compute_check_digit(prefix))
