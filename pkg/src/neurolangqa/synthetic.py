"""Seeded generator for meta-analysis shaped fact files."""
from __future__ import annotations

import json
import math
import random
from dataclasses import asdict, dataclass
from pathlib import Path

BASE_TERMS = ("emotion", "pain", "memory", "attention", "language", "anxiety", "perception", "learning")


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    studies: int = 100
    terms: int = 20
    voxels: int = 125
    regions: int = 5
    term_density: float = 0.1
    focus_density: float = 0.05
    sigma: float = 2.0
    spacing: int = 2
    seed: int = 0

    def __post_init__(self):
        for name in ("studies", "terms", "voxels", "regions", "spacing"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("term_density", "focus_density"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.regions > self.voxels:
            raise ValueError("more regions than voxels")


def gaussian_weight(x, y, sigma: float) -> float:
    """Unnormalized 3D Gaussian density of the displacement ``x - y``."""
    d2 = sum((a - b) ** 2 for a, b in zip(x, y))
    return (2 * math.pi * sigma**2) ** -1.5 * math.exp(-0.5 * d2 / sigma**2)


def coactivation_weight(x, y, sigma: float) -> float | None:
    """Gaussian weight normalized to 1 at distance 0; None beyond 2 sigma."""
    d2 = sum((a - b) ** 2 for a, b in zip(x, y))
    if d2 > (2 * sigma) ** 2:
        return None
    return gaussian_weight(x, y, sigma) / gaussian_weight(x, x, sigma)


def term_names(n: int) -> list[str]:
    names = list(BASE_TERMS[:n])
    names.extend(f"term_{i:04d}" for i in range(len(names), n))
    return names


def voxel_grid(n: int, spacing: int) -> list[tuple]:
    """First ``n`` points of a cube lattice centred near the origin, in scan order."""
    side = max(1, math.ceil(n ** (1 / 3) - 1e-9))
    off = side // 2
    pts = []
    for i in range(side):
        for j in range(side):
            for k in range(side):
                pts.append(((i - off) * spacing, (j - off) * spacing, (k - off) * spacing))
    return pts[:n]


def _sample(rng: random.Random, population: list, density: float) -> list:
    k = max(1, round(density * len(population)))
    return [population[i] for i in sorted(rng.sample(range(len(population)), k))]


def _write(path: Path, rows) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write("\t".join(str(c) for c in row) + "\n")
            n += 1
    return n


def generate_synthetic(spec: SyntheticDatasetSpec, outdir) -> dict:
    """Write the TSV fact files and ``manifest.json``; return the manifest."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(spec.seed)
    studies = [f"s{i + 1}" for i in range(spec.studies)]
    terms = term_names(spec.terms)
    voxels = voxel_grid(spec.voxels, spec.spacing)

    term_rows = []
    focus_rows = []
    for s in studies:
        for t in _sample(rng, terms, spec.term_density):
            term_rows.append((t, s))
        for v in _sample(rng, voxels, spec.focus_density):
            focus_rows.append((*v, s))

    block = math.ceil(len(voxels) / spec.regions)
    region_rows = [(*v, f"region_{idx // block:03d}") for idx, v in enumerate(voxels)]

    foci = sorted({r[:3] for r in focus_rows})
    co_rows = []
    for v in voxels:
        for f in foci:
            w = coactivation_weight(v, f, spec.sigma)
            if w is not None:
                co_rows.append((*v, *f, repr(w)))

    files = {
        "TermInStudy": ("TermInStudy.tsv", term_rows, 2, "deterministic"),
        "FocusReported": ("FocusReported.tsv", focus_rows, 4, "deterministic"),
        "VoxelByRegionDestrieux": ("VoxelByRegionDestrieux.tsv", region_rows, 4, "deterministic"),
        "SelectedStudy": ("SelectedStudy.tsv", [(s, f"1/{len(studies)}") for s in studies], 1, "choice-group"),
        "FocusCoactivates": ("FocusCoactivates.tsv", co_rows, 6, "probabilistic"),
    }
    manifest = {"spec": asdict(spec), "truncation_radius": 2 * spec.sigma, "files": {}}
    for pred, (name, rows, arity, kind) in files.items():
        count = _write(out / name, rows)
        manifest["files"][pred] = {"path": name, "arity": arity, "kind": kind, "rows": count}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest
