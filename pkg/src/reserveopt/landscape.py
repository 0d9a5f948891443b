"""Gridded landscapes: generation, masking, patch extraction, file formats.

A landscape is an n x n raster of habitat suitability values in [0, 1] plus
per-parcel acquisition costs. A selection is a binary vector over parcels in
row-major order; masking a landscape by a selection yields the habitat that
remains, and contiguous habitable cells of that habitat form patches.

All values are immutable after construction, so landscapes, selections and
patch sets can be shared freely across worker threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

# Substream indices hung off one master seed. Suitability and cost use
# separate children so changing one never perturbs the other.
SUITABILITY_STREAM = 0
COST_STREAM = 1

_NEIGHBORS_4 = ((-1, 0), (1, 0), (0, -1), (0, 1))
_NEIGHBORS_8 = _NEIGHBORS_4 + ((-1, -1), (-1, 1), (1, -1), (1, 1))


class DimensionError(ValueError):
    """Raised for invalid grid sizes or mismatched vector lengths."""


def substream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for substream `index` of master seed `seed`."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


@dataclass(eq=False)
class Landscape:
    """Square raster of habitat suitability and acquisition cost.

    suitability values lie in [0, 1]; costs are strictly positive.
    """

    n: int
    suitability: np.ndarray
    cost: np.ndarray
    seed: int

    def __post_init__(self) -> None:
        self.suitability = np.asarray(self.suitability, dtype=np.float64)
        self.cost = np.asarray(self.cost, dtype=np.float64)
        if self.n < 2:
            raise DimensionError(f"landscape side must be >= 2, got {self.n}")
        if self.suitability.shape != (self.n, self.n) or self.cost.shape != (self.n, self.n):
            raise DimensionError("suitability and cost must both be n x n")
        if np.any(self.suitability < 0.0) or np.any(self.suitability > 1.0):
            raise ValueError("suitability values must lie in [0, 1]")
        if np.any(self.cost <= 0.0):
            raise ValueError("cost values must be strictly positive")
        self.suitability.setflags(write=False)
        self.cost.setflags(write=False)

    @property
    def parcels(self) -> int:
        return self.n * self.n

    def total_cost(self) -> float:
        """Cost of preserving every parcel."""
        return float(self.cost.sum())


@dataclass(eq=False)
class Selection:
    """Binary preservation decision per parcel, row-major order."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        self.bits = np.asarray(self.bits, dtype=np.uint8).ravel()
        if not np.isin(self.bits, (0, 1)).all():
            raise ValueError("selection entries must be exactly 0 or 1")
        self.bits.setflags(write=False)

    def __len__(self) -> int:
        return int(self.bits.size)

    def key(self) -> bytes:
        """Hashable exact representation, used for memoization."""
        return self.bits.tobytes()

    @classmethod
    def all_ones(cls, n: int) -> "Selection":
        return cls(np.ones(n * n, dtype=np.uint8))

    @classmethod
    def all_zeros(cls, n: int) -> "Selection":
        return cls(np.zeros(n * n, dtype=np.uint8))


@dataclass(eq=False)
class Habitat:
    """Suitability raster that remains after masking by a selection."""

    suitability: np.ndarray

    def __post_init__(self) -> None:
        self.suitability = np.asarray(self.suitability, dtype=np.float64)
        if self.suitability.ndim != 2 or self.suitability.shape[0] != self.suitability.shape[1]:
            raise DimensionError("habitat raster must be square")
        self.suitability.setflags(write=False)

    @property
    def n(self) -> int:
        return int(self.suitability.shape[0])


@dataclass(frozen=True)
class Patch:
    """One connected component of habitable parcels.

    ths is the total habitat suitability (sum over member cells), which
    drives carrying capacity in the simulator. Ids are 1-based and assigned
    in row-major order of each component's first-encountered cell.
    """

    id: int
    cells: frozenset
    ths: float
    centroid: tuple


@dataclass(eq=False)
class PatchSet:
    """All patches of a habitat at a given habitability threshold."""

    patches: tuple
    n: int
    threshold: float

    def __len__(self) -> int:
        return len(self.patches)

    def ths_vector(self) -> np.ndarray:
        return np.array([p.ths for p in self.patches], dtype=np.float64)

    def centroid_array(self) -> np.ndarray:
        return np.array([p.centroid for p in self.patches], dtype=np.float64).reshape(-1, 2)

    def habitable_cells(self) -> frozenset:
        out: set = set()
        for p in self.patches:
            out |= p.cells
        return frozenset(out)


def generate_landscape(n: int, seed: int) -> Landscape:
    """Generate an n x n landscape deterministically from `seed`.

    Suitability is i.i.d. Uniform[0, 1); cost is i.i.d. Uniform[1, 10) drawn
    from an independent substream of the same seed. Identical (n, seed)
    reproduces the arrays bit for bit.
    """
    if n < 2:
        raise DimensionError(f"landscape side must be >= 2, got {n}")
    suit = substream(seed, SUITABILITY_STREAM).random((n, n))
    cost = substream(seed, COST_STREAM).uniform(1.0, 10.0, (n, n))
    return Landscape(n=n, suitability=suit, cost=cost, seed=int(seed))


def mask(land: Landscape, sel: Selection) -> Habitat:
    """Habitat retained by a selection: per parcel, suitability times bit."""
    if len(sel) != land.parcels:
        raise DimensionError(f"selection length {len(sel)} != {land.parcels} parcels")
    bits = sel.bits.reshape(land.n, land.n)
    return Habitat(land.suitability * bits)


def selection_cost(land: Landscape, sel: Selection) -> float:
    """Total acquisition cost of the selected parcels."""
    if len(sel) != land.parcels:
        raise DimensionError(f"selection length {len(sel)} != {land.parcels} parcels")
    return float(np.dot(land.cost.ravel(), sel.bits.astype(np.float64)))


def extract_patches(habitat: Habitat, threshold: float = 0.5, adjacency: int = 4) -> PatchSet:
    """Label connected components of cells with suitability > threshold.

    Habitability is strict (> threshold). Adjacency is 4 (von Neumann,
    default) or 8. Patch ids follow row-major order of each component's
    first-encountered cell, so labelings are stable across runs.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    if adjacency == 4:
        offsets = _NEIGHBORS_4
    elif adjacency == 8:
        offsets = _NEIGHBORS_8
    else:
        raise ValueError(f"adjacency must be 4 or 8, got {adjacency}")

    suit = habitat.suitability
    n = habitat.n
    habitable = suit > threshold
    seen = np.zeros((n, n), dtype=bool)
    patches = []
    for r in range(n):
        for c in range(n):
            if not habitable[r, c] or seen[r, c]:
                continue
            stack = [(r, c)]
            seen[r, c] = True
            cells = []
            ths = 0.0
            while stack:
                i, j = stack.pop()
                cells.append((i, j))
                ths += suit[i, j]
                for di, dj in offsets:
                    a, b = i + di, j + dj
                    if 0 <= a < n and 0 <= b < n and habitable[a, b] and not seen[a, b]:
                        seen[a, b] = True
                        stack.append((a, b))
            rows = sum(i for i, _ in cells) / len(cells)
            cols = sum(j for _, j in cells) / len(cells)
            patches.append(
                Patch(id=len(patches) + 1, cells=frozenset(cells), ths=ths, centroid=(rows, cols))
            )
    return PatchSet(patches=tuple(patches), n=n, threshold=threshold)


# ---------------------------------------------------------------------------
# File formats (plain ASCII, bit-exact round trips)
# ---------------------------------------------------------------------------

def _format_row(row: Iterable[float]) -> str:
    # 17 significant digits round-trips any float64 exactly
    return " ".join(f"{v:.17g}" for v in row)


def landscape_to_text(land: Landscape) -> str:
    lines = [f"n {land.n}", f"seed {land.seed}"]
    lines += [_format_row(row) for row in land.suitability]
    lines.append("")
    lines += [_format_row(row) for row in land.cost]
    return "\n".join(lines) + "\n"


def landscape_from_text(text: str) -> Landscape:
    lines = text.splitlines()
    try:
        tag_n, n_str = lines[0].split()
        tag_s, seed_str = lines[1].split()
    except (IndexError, ValueError) as exc:
        raise ValueError("malformed landscape header") from exc
    if tag_n != "n" or tag_s != "seed":
        raise ValueError("malformed landscape header")
    n = int(n_str)
    seed = int(seed_str)
    suit_rows = lines[2 : 2 + n]
    blank = lines[2 + n]
    cost_rows = lines[3 + n : 3 + 2 * n]
    if blank.strip() != "" or len(suit_rows) != n or len(cost_rows) != n:
        raise ValueError("malformed landscape body")
    suit = np.array([[float(v) for v in row.split()] for row in suit_rows])
    cost = np.array([[float(v) for v in row.split()] for row in cost_rows])
    return Landscape(n=n, suitability=suit, cost=cost, seed=seed)


def save_landscape(land: Landscape, path) -> None:
    with open(path, "w") as fh:
        fh.write(landscape_to_text(land))


def load_landscape(path) -> Landscape:
    with open(path) as fh:
        return landscape_from_text(fh.read())


def selection_to_text(sel: Selection, n: int) -> str:
    if len(sel) != n * n:
        raise DimensionError(f"selection length {len(sel)} != {n * n}")
    grid = sel.bits.reshape(n, n)
    return "\n".join(" ".join(str(int(b)) for b in row) for row in grid) + "\n"


def selection_from_text(text: str) -> Selection:
    rows = [line.split() for line in text.splitlines() if line.strip()]
    n = len(rows)
    if any(len(row) != n for row in rows):
        raise DimensionError("selection file must be a square 0/1 grid")
    bits = np.array([[int(v) for v in row] for row in rows], dtype=np.uint8)
    return Selection(bits.ravel())


def save_selection(sel: Selection, n: int, path) -> None:
    with open(path, "w") as fh:
        fh.write(selection_to_text(sel, n))


def load_selection(path) -> Selection:
    with open(path) as fh:
        return selection_from_text(fh.read())
