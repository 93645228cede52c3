"""Rendering of bar patterns and the synthetic degradations.

Images are 2-D ``uint8`` numpy arrays indexed ``[row, column]`` with 0 as
black and 255 as white.  Every random draw comes from the seed handed to
:func:`degrade`, so a (truth, conditions, seed) triple always reproduces
the same bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Tuple

import numpy as np
from scipy import ndimage

from .symbology import N_MODULES

WHITE = 255

# Documented parameter ranges; a spec may narrow them but not widen them.
DEFAULT_RANGES: Dict[str, Dict[str, Tuple[float, float]]] = {
    "norm": {},
    "dark": {"factor": (0.2, 0.5)},
    "overexposed": {"gain": (1.6, 2.4)},
    "occluded": {"count": (1, 3), "area": (0.1, 0.3)},
    "rpt": {"angle": (-60.0, 60.0), "jitter": (0.0, 0.1)},
    "ccw": {"amplitude": (0.05, 0.15)},
    "blur": {"sigma": (1.0, 3.0)},
    "noise": {"sigma": (5.0, 25.0)},
    "upside_down": {},
}


class CanvasTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class RenderOpts:
    module_width: int = 2
    bar_height: int = 180
    quiet_zone: int = 20
    canvas: int = 285

    def __post_init__(self):
        if self.module_width < 2:
            raise ValueError("module_width must be >= 2")
        if self.bar_height < 1 or self.quiet_zone < 0:
            raise ValueError("bar_height must be >= 1 and quiet_zone >= 0")

    @property
    def total_width(self) -> int:
        return N_MODULES * self.module_width + 2 * self.quiet_zone


@dataclass(frozen=True)
class DegradationSpec:
    kind: str
    params: Mapping[str, Tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in DEFAULT_RANGES:
            raise ValueError(f"unknown degradation kind {self.kind!r}")
        allowed = DEFAULT_RANGES[self.kind]
        for name, (lo, hi) in self.params.items():
            if name not in allowed:
                raise ValueError(f"{self.kind} has no parameter {name!r}")
            a, b = allowed[name]
            if not (a <= lo <= hi <= b):
                raise ValueError(f"{self.kind}.{name} range {(lo, hi)} outside {(a, b)}")

    def range(self, name: str) -> Tuple[float, float]:
        return tuple(self.params.get(name, DEFAULT_RANGES[self.kind][name]))

    def to_json(self) -> dict:
        return {"kind": self.kind, "params": {k: list(v) for k, v in sorted(self.params.items())}}

    @classmethod
    def from_json(cls, obj: Mapping) -> "DegradationSpec":
        return cls(obj["kind"], {k: tuple(v) for k, v in obj.get("params", {}).items()})


def render(pattern, opts: RenderOpts = RenderOpts()) -> np.ndarray:
    """Draw a 95-module pattern centred on a white square canvas."""
    pattern = np.asarray(pattern, dtype=np.uint8)
    if pattern.shape != (N_MODULES,):
        raise ValueError(f"pattern must have {N_MODULES} modules")
    if opts.total_width > opts.canvas or opts.bar_height > opts.canvas:
        raise CanvasTooSmall(
            f"barcode needs {opts.total_width}x{opts.bar_height} px, canvas is {opts.canvas}"
        )
    img = np.full((opts.canvas, opts.canvas), WHITE, dtype=np.uint8)
    strip = np.where(np.repeat(pattern, opts.module_width) == 1, 0, WHITE).astype(np.uint8)
    x0 = (opts.canvas - N_MODULES * opts.module_width) // 2
    y0 = (opts.canvas - opts.bar_height) // 2
    img[y0:y0 + opts.bar_height, x0:x0 + strip.size] = strip
    return img


def rotate_exact(img: np.ndarray, degrees: int) -> np.ndarray:
    """Lossless counter-clockwise rotation by a multiple of 90 degrees."""
    if degrees % 90:
        raise ValueError(f"degrees must be a multiple of 90, got {degrees}")
    return np.ascontiguousarray(np.rot90(img, k=(degrees // 90) % 4))


def _to_uint8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def _draw(rng: np.random.Generator, spec: DegradationSpec, name: str) -> float:
    lo, hi = spec.range(name)
    return float(lo) if lo == hi else float(rng.uniform(lo, hi))


def _bar_region(img: np.ndarray) -> Tuple[int, int, int, int]:
    rows, cols = np.nonzero(img < 128)
    if rows.size == 0:
        return 0, 0, img.shape[0], img.shape[1]
    return rows.min(), cols.min(), rows.max() + 1, cols.max() + 1


def _occlude(img, spec, rng):
    out = img.copy()
    r0, c0, r1, c1 = _bar_region(img)
    bh, bw = r1 - r0, c1 - c0
    lo, hi = spec.range("count")
    count = int(rng.integers(int(lo), int(hi) + 1))
    budget = _draw(rng, spec, "area") * bh * bw
    for _ in range(count):
        area = budget / count
        h = max(1, int(round(rng.uniform(0.2, 0.6) * bh)))
        w = max(1, min(bw, int(area // h)))
        top = r0 + int(rng.integers(0, bh - h + 1))
        left = c0 + int(rng.integers(0, bw - w + 1))
        out[top:top + h, left:left + w] = int(rng.integers(0, 256))
    return out


def _homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """3x3 matrix taking the four ``src`` points onto ``dst`` (x, y pairs)."""
    rows = []
    rhs = []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        rhs.extend([u, v])
    h = np.linalg.solve(np.array(rows, float), np.array(rhs, float))
    return np.append(h, 1.0).reshape(3, 3)


def _warp(img: np.ndarray, src_x: np.ndarray, src_y: np.ndarray) -> np.ndarray:
    out = ndimage.map_coordinates(
        img.astype(np.float64), [src_y, src_x], order=1, mode="constant", cval=WHITE
    )
    return _to_uint8(out)


def _rpt(img, spec, rng):
    h, w = img.shape
    angle = math.radians(_draw(rng, spec, "angle"))
    jitter = _draw(rng, spec, "jitter")
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    corners = np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], float)
    c, s = math.cos(angle), math.sin(angle)
    rel = corners - [cx, cy]
    # positive angle turns the content counter-clockwise on screen (y points down)
    moved = np.column_stack([c * rel[:, 0] + s * rel[:, 1], -s * rel[:, 0] + c * rel[:, 1]])
    moved += [cx, cy]
    moved += rng.uniform(-jitter, jitter, size=(4, 2)) * [w, h]
    inverse = _homography(moved, corners)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    den = inverse[2, 0] * xx + inverse[2, 1] * yy + inverse[2, 2]
    sx = (inverse[0, 0] * xx + inverse[0, 1] * yy + inverse[0, 2]) / den
    sy = (inverse[1, 0] * xx + inverse[1, 1] * yy + inverse[1, 2]) / den
    return _warp(img, sx, sy)


def _ccw(img, spec, rng):
    h, w = img.shape
    _, c0, _, c1 = _bar_region(img)
    amp = _draw(rng, spec, "amplitude") * (c1 - c0)
    phase = rng.uniform(0, 2 * math.pi)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cx = (c0 + c1 - 1) / 2.0
    # cylinder: magnify the centre, then bend the bars with a slow vertical wave
    sx = xx - amp * np.sin(math.pi * (xx - cx) / w)
    sx += 0.25 * amp * np.sin(2 * math.pi * yy / h + phase)
    sy = yy + 0.25 * amp * np.sin(2 * math.pi * xx / w + phase)
    return _warp(img, sx, sy)


def degrade(img: np.ndarray, spec: DegradationSpec, seed: int) -> np.ndarray:
    """Apply one degradation; all randomness is drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    kind = spec.kind
    if kind == "norm":
        return img.copy()
    if kind == "dark":
        return _to_uint8(img * _draw(rng, spec, "factor"))
    if kind == "overexposed":
        return _to_uint8(img * _draw(rng, spec, "gain"))
    if kind == "occluded":
        return _occlude(img, spec, rng)
    if kind == "rpt":
        return _rpt(img, spec, rng)
    if kind == "ccw":
        return _ccw(img, spec, rng)
    if kind == "blur":
        sigma = _draw(rng, spec, "sigma")
        return _to_uint8(ndimage.gaussian_filter(img.astype(np.float64), sigma, mode="nearest"))
    if kind == "noise":
        sigma = _draw(rng, spec, "sigma")
        return _to_uint8(img + rng.normal(0.0, sigma, size=img.shape))
    if kind == "upside_down":
        return rotate_exact(img, 180)
    raise ValueError(kind)


def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    magic, width, height, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic != b"P5" or maxval != 255:
        raise ValueError(f"{path}: only binary 8-bit PGM (P5) is supported")
    pos += 1
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    return pixels.reshape(height, width).copy()
