"""Seeded synthetic corpora built from the named condition presets."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np

from . import symbology
from .imaging import DegradationSpec, RenderOpts, degrade, read_pgm, render, write_pgm

_HEAVY_NOISE = DegradationSpec("noise", {"sigma": (25.0, 25.0)})
_ROTATED = DegradationSpec("rpt", {"jitter": (0.0, 0.0)})


def _specs(*kinds: str) -> Tuple[DegradationSpec, ...]:
    return tuple(DegradationSpec(k) for k in kinds)


# Condition combos and per-combo sample counts of the synthetic training mix.
# Specs apply left to right: occlusion, geometry, exposure, then blur/noise.
PRESETS = {
    "norm": _specs("norm"),
    "dark": _specs("dark"),
    "occluded": _specs("occluded"),
    "occluded+dark": _specs("occluded", "dark"),
    "rpt": _specs("rpt"),
    "rpt+dark": _specs("rpt", "dark"),
    "ccw": _specs("ccw"),
    "ccw+dark": _specs("ccw", "dark"),
    "occluded+rpt": _specs("occluded", "rpt"),
    "blur": _specs("blur"),
    "rpt+blur": _specs("rpt", "blur"),
    "ccw+blur": _specs("ccw", "blur"),
    "upside_down": _specs("upside_down"),
    "upside_down+dark": _specs("upside_down", "dark"),
    "upside_down+blur": _specs("upside_down", "blur"),
    "upside_down+ccw": _specs("ccw", "upside_down"),
    "upside_down+occluded": _specs("occluded", "upside_down"),
    "heavy_noise+rotated": (_ROTATED, _HEAVY_NOISE),
    "overexposed+occluded+rpt+ccw": _specs("occluded", "rpt", "ccw", "overexposed"),
    "dark+occluded+rpt+ccw": _specs("occluded", "rpt", "ccw", "dark"),
    "occluded+rpt+ccw": _specs("occluded", "rpt", "ccw"),
}

TABLE1_COUNTS = {
    "norm": 30000,
    "dark": 30000,
    "occluded": 20000,
    "occluded+dark": 20000,
    "rpt": 20000,
    "rpt+dark": 20000,
    "ccw": 20000,
    "ccw+dark": 20000,
    "occluded+rpt": 5000,
    "blur": 5000,
    "rpt+blur": 5000,
    "ccw+blur": 5000,
    "upside_down": 6000,
    "upside_down+dark": 6000,
    "upside_down+blur": 6000,
    "upside_down+ccw": 6000,
    "upside_down+occluded": 6000,
    "heavy_noise+rotated": 2000,
    "overexposed+occluded+rpt+ccw": 6000,
    "dark+occluded+rpt+ccw": 6000,
    "occluded+rpt+ccw": 6000,
}

Combo = Union[str, Sequence[DegradationSpec]]


@dataclass(frozen=True)
class Sample:
    image: np.ndarray
    truth: symbology.DigitSequence
    conditions: Tuple[DegradationSpec, ...]
    seed: int
    condition: str = "custom"

    def to_json(self, path: str | None = None) -> dict:
        rec = {
            "truth": symbology.to_text(self.truth),
            "condition": self.condition,
            "conditions": [c.to_json() for c in self.conditions],
            "seed": self.seed,
        }
        if path is not None:
            rec["file"] = path
        return rec


def table1_manifest(scale: float = 0.01) -> List[Tuple[str, int]]:
    """The full preset mix with counts multiplied by ``scale`` (rounded)."""
    return [(name, int(round(n * scale))) for name, n in TABLE1_COUNTS.items()]


def sample_seed(base_seed: int, combo_index: int, sample_index: int) -> int:
    state = np.random.SeedSequence([base_seed, combo_index, sample_index]).generate_state(2, np.uint32)
    return int(state[0]) << 32 | int(state[1])


def resolve(combo: Combo) -> Tuple[str, Tuple[DegradationSpec, ...]]:
    if isinstance(combo, str):
        if combo not in PRESETS:
            raise KeyError(f"unknown preset {combo!r}")
        return combo, PRESETS[combo]
    specs = tuple(combo)
    return "+".join(s.kind for s in specs), specs


def synthesize(truth, conditions: Sequence[DegradationSpec], seed: int,
               opts: RenderOpts = RenderOpts()) -> np.ndarray:
    """Render ``truth`` and apply ``conditions`` in order."""
    img = render(symbology.encode(truth), opts)
    for k, spec in enumerate(conditions):
        step_seed = np.random.SeedSequence([seed, k]).generate_state(1, np.uint32)[0]
        img = degrade(img, spec, int(step_seed))
    return img


def make_sample(name: str, conditions, seed: int, opts: RenderOpts = RenderOpts()) -> Sample:
    truth = symbology.random_valid(np.random.default_rng(seed))
    return Sample(synthesize(truth, conditions, seed, opts), truth, tuple(conditions), seed, name)


def generate_dataset(manifest: Iterable[Tuple[Combo, int]], base_seed: int,
                     opts: RenderOpts = RenderOpts(), jobs: int = 1) -> List[Sample]:
    jobs_list = []
    for ci, (combo, count) in enumerate(manifest):
        if count < 0:
            raise ValueError(f"negative count for {combo!r}")
        name, specs = resolve(combo)
        for si in range(count):
            jobs_list.append((name, specs, sample_seed(base_seed, ci, si)))

    def build(job):
        return make_sample(*job, opts=opts)

    if jobs <= 1:
        return [build(j) for j in jobs_list]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(build, jobs_list))


def load_manifest(path) -> List[Tuple[str, int]]:
    """Read a manifest: a JSON list of ``[preset, count]`` pairs or
    ``{"preset": ..., "count": ...}`` objects."""
    raw = json.loads(Path(path).read_text())
    out = []
    for item in raw:
        if isinstance(item, dict):
            out.append((str(item["preset"]), int(item["count"])))
        else:
            out.append((str(item[0]), int(item[1])))
    return out


def save_dataset(samples: Sequence[Sample], out_dir) -> Path:
    """Write one PGM per sample plus ``samples.jsonl``; returns the jsonl path."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    lines = []
    for i, s in enumerate(samples):
        rel = f"images/{i:06d}.pgm"
        write_pgm(out_dir / rel, s.image)
        lines.append(json.dumps(s.to_json(rel), sort_keys=True))
    index = out_dir / "samples.jsonl"
    index.write_text("\n".join(lines) + ("\n" if lines else ""))
    return index


def load_dataset(index_path) -> List[Sample]:
    index_path = Path(index_path)
    if index_path.is_dir():
        index_path = index_path / "samples.jsonl"
    samples = []
    for line in index_path.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        samples.append(Sample(
            image=read_pgm(index_path.parent / rec["file"]),
            truth=symbology.as_sequence(rec["truth"]),
            conditions=tuple(DegradationSpec.from_json(c) for c in rec["conditions"]),
            seed=int(rec["seed"]),
            condition=rec.get("condition", "custom"),
        ))
    return samples
