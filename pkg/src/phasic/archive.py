"""Behavioral archive: a fixed grid over descriptor space plus a fitness queue.

The grid keeps, per cell, the single best policy whose episode behavior
descriptor landed there; replacement requires a strictly better fitness, so
the per-cell (and overall) best fitness never decreases.  The companion
queue simply retains the top-k policies by fitness regardless of behavior,
deduplicating exact parameter clones.  Both containers store frozen copies
of whatever was inserted — callers keep training their live objects without
disturbing archived snapshots.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from hashlib import sha256
from pathlib import Path

import numpy as np

from .nets import Policy, load_policy, save_policy


@dataclass(frozen=True)
class ArchiveEntry:
    policy: Policy
    fitness: float
    bd: np.ndarray
    obs_mean: np.ndarray | None = None
    obs_std: np.ndarray | None = None
    source: int = -1          # learner id that produced the snapshot
    iteration: int = -1
    order: int = -1           # global insertion counter (ties -> older wins)
    payload: dict | None = None  # full learner state for exploitation (in-memory only)


def bd_to_cell(bd: np.ndarray, cells_per_dim: int = 10) -> tuple:
    """Map a descriptor in [0,1]^d to integer grid coordinates.

    floor(bd * cells_per_dim), with the upper edge folded into the last cell
    so bd = 1.0 is valid.
    """
    bd = np.asarray(bd, dtype=np.float64)
    if np.any(bd < 0.0) or np.any(bd > 1.0):
        raise ValueError(f"behavior descriptor outside [0,1]: {bd}")
    idx = np.minimum((bd * cells_per_dim).astype(int), cells_per_dim - 1)
    return tuple(int(i) for i in idx)


class GridArchive:
    """Elite-per-cell archive over a [0,1]^d descriptor grid."""

    def __init__(self, dims: int = 2, cells_per_dim: int = 10):
        if dims < 1 or cells_per_dim < 1:
            raise ValueError("dims and cells_per_dim must be positive")
        self.dims = dims
        self.cells_per_dim = cells_per_dim
        self._cells: dict[tuple, ArchiveEntry] = {}
        self._counter = 0

    def __len__(self) -> int:
        return len(self._cells)

    @property
    def total_cells(self) -> int:
        return self.cells_per_dim ** self.dims

    def cell_of(self, bd) -> tuple:
        cell = bd_to_cell(bd, self.cells_per_dim)
        if len(cell) != self.dims:
            raise ValueError(f"descriptor has {len(cell)} dims, archive expects {self.dims}")
        return cell

    def add(self, policy: Policy, fitness: float, bd, *, obs_mean=None, obs_std=None,
            source: int = -1, iteration: int = -1, payload: dict | None = None) -> bool:
        """Insert if the cell is empty or the fitness strictly improves it."""
        fitness = float(fitness)
        if not np.isfinite(fitness):
            return False
        cell = self.cell_of(bd)
        incumbent = self._cells.get(cell)
        if incumbent is not None and fitness <= incumbent.fitness:
            return False
        entry = ArchiveEntry(
            policy=policy,
            fitness=fitness,
            bd=np.array(bd, dtype=np.float64),
            obs_mean=None if obs_mean is None else np.array(obs_mean, dtype=np.float64),
            obs_std=None if obs_std is None else np.array(obs_std, dtype=np.float64),
            source=source, iteration=iteration, order=self._counter, payload=payload)
        self._counter += 1
        self._cells[cell] = entry
        return True

    def entries(self) -> list:
        return list(self._cells.values())

    def cells(self) -> dict:
        return dict(self._cells)

    def best(self) -> ArchiveEntry | None:
        if not self._cells:
            return None
        return max(self._cells.values(), key=lambda e: (e.fitness, -e.order))

    def max_fitness(self) -> float:
        return self.best().fitness if self._cells else float("nan")

    def sample_uniform(self, rng: np.random.Generator) -> ArchiveEntry:
        if not self._cells:
            raise ValueError("cannot sample from an empty archive")
        keys = sorted(self._cells.keys())
        return self._cells[keys[rng.integers(len(keys))]]

    def top(self, m: int) -> list:
        """Best m entries by fitness (older entry wins ties).

        If fewer than m distinct entries exist, the best one is repeated to
        pad the list to length m; empty archive -> ValueError.
        """
        if m < 1:
            raise ValueError("m must be positive")
        if not self._cells:
            raise ValueError("cannot select from an empty archive")
        ranked = sorted(self._cells.values(), key=lambda e: (-e.fitness, e.order))
        out = ranked[:m]
        while len(out) < m:
            out.append(ranked[0])
        return out

    def heatmap(self) -> np.ndarray:
        """Dense fitness grid (NaN for empty cells), 2-D archives only."""
        if self.dims != 2:
            raise ValueError("heatmap requires a 2-D descriptor grid")
        grid = np.full((self.cells_per_dim, self.cells_per_dim), np.nan)
        for (i, j), entry in self._cells.items():
            grid[i, j] = entry.fitness
        return grid


class FitnessQueue:
    """Top-k policies by fitness, behavior-agnostic.

    At capacity a strictly better candidate evicts the worst element; among
    equal-fitness elements the older one is evicted first.  Exact parameter
    duplicates (same topology and bytes) are rejected outright.
    """

    def __init__(self, capacity: int = 10):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: list[ArchiveEntry] = []
        self._digests: set[str] = set()
        self._counter = 0

    def __len__(self) -> int:
        return len(self._items)

    @staticmethod
    def _digest(policy: Policy) -> str:
        h = sha256()
        h.update(json.dumps(policy.topology, sort_keys=True).encode())
        h.update(np.ascontiguousarray(policy.params).tobytes())
        return h.hexdigest()

    def add(self, policy: Policy, fitness: float, bd=None, *, obs_mean=None,
            obs_std=None, source: int = -1, iteration: int = -1,
            payload: dict | None = None) -> bool:
        fitness = float(fitness)
        if not np.isfinite(fitness):
            return False
        digest = self._digest(policy)
        if digest in self._digests:
            return False
        entry = ArchiveEntry(
            policy=policy, fitness=fitness,
            bd=np.zeros(0) if bd is None else np.array(bd, dtype=np.float64),
            obs_mean=None if obs_mean is None else np.array(obs_mean, dtype=np.float64),
            obs_std=None if obs_std is None else np.array(obs_std, dtype=np.float64),
            source=source, iteration=iteration, order=self._counter, payload=payload)
        self._counter += 1
        if len(self._items) >= self.capacity:
            # evict the worst; among equals the oldest goes first
            worst = min(self._items, key=lambda e: (e.fitness, e.order))
            if fitness <= worst.fitness:
                return False
            self._items.remove(worst)
            self._digests.discard(self._digest(worst.policy))
        self._items.append(entry)
        self._digests.add(digest)
        return True

    def entries(self) -> list:
        return sorted(self._items, key=lambda e: (-e.fitness, e.order))

    def best(self) -> ArchiveEntry | None:
        items = self.entries()
        return items[0] if items else None

    def max_fitness(self) -> float:
        best = self.best()
        return best.fitness if best is not None else float("nan")

    def sample_uniform(self, rng: np.random.Generator) -> ArchiveEntry:
        if not self._items:
            raise ValueError("cannot sample from an empty queue")
        ordered = sorted(self._items, key=lambda e: e.order)
        return ordered[rng.integers(len(ordered))]

    def top(self, m: int) -> list:
        if m < 1:
            raise ValueError("m must be positive")
        if not self._items:
            raise ValueError("cannot select from an empty queue")
        ranked = self.entries()
        out = ranked[:m]
        while len(out) < m:
            out.append(ranked[0])
        return out


def qd_metrics(archive: GridArchive, fitness_offset: float = 0.0) -> dict:
    """Coverage, QD-score, and max fitness for a grid archive.

    QD-score sums (fitness - offset) over filled cells, with the offset chosen
    per environment so every term is non-negative.  Empty archive reports
    coverage 0, QD-score 0, max fitness NaN.
    """
    entries = archive.entries()
    if not entries:
        return {"coverage": 0.0, "qd_score": 0.0, "max_fitness": float("nan"),
                "min_fitness": float("nan"), "filled_cells": 0,
                "total_cells": archive.total_cells}
    fits = np.array([e.fitness for e in entries])
    return {
        "coverage": len(entries) / archive.total_cells,
        "qd_score": float(np.sum(fits - fitness_offset)),
        "max_fitness": float(fits.max()),
        "min_fitness": float(fits.min()),
        "filled_cells": len(entries),
        "total_cells": archive.total_cells,
    }


# -- persistence -------------------------------------------------------------

def save_archive(archive: GridArchive, directory) -> None:
    """Write the archive as a manifest plus one policy blob per cell."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"dims": archive.dims, "cells_per_dim": archive.cells_per_dim,
                "counter": archive._counter, "cells": []}
    for cell, entry in sorted(archive.cells().items()):
        name = "cell_" + "_".join(str(c) for c in cell) + ".npz"
        extra = {}
        if entry.obs_mean is not None:
            extra["obs_mean"] = entry.obs_mean
            extra["obs_std"] = entry.obs_std
        save_policy(directory / name, entry.policy, extra=extra)
        manifest["cells"].append({
            "cell": list(cell), "file": name, "fitness": entry.fitness,
            "bd": entry.bd.tolist(), "source": entry.source,
            "iteration": entry.iteration, "order": entry.order,
            "has_normalizer": entry.obs_mean is not None})
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    grid = archive.heatmap() if archive.dims == 2 else None
    if grid is not None:
        np.savetxt(directory / "heatmap.csv", grid, delimiter=",", fmt="%.17g")


def load_archive(directory) -> GridArchive:
    directory = Path(directory)
    with open(directory / "manifest.json") as fh:
        manifest = json.load(fh)
    archive = GridArchive(dims=manifest["dims"], cells_per_dim=manifest["cells_per_dim"])
    for item in sorted(manifest["cells"], key=lambda c: c["order"]):
        policy, extra = load_policy(directory / item["file"])
        entry = ArchiveEntry(
            policy=policy, fitness=float(item["fitness"]),
            bd=np.array(item["bd"], dtype=np.float64),
            obs_mean=extra.get("obs_mean"), obs_std=extra.get("obs_std"),
            source=item["source"], iteration=item["iteration"], order=item["order"])
        archive._cells[tuple(item["cell"])] = entry
    archive._counter = manifest["counter"]
    return archive
