"""Population scoring and repertoire management: k-nearest-neighbor novelty,
score-based selection with duplication, unconditional insertion of the
generation's best, and descriptor refresh after autoencoder training."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import raster


def novelty(candidate, references, k: int) -> float:
    """Mean Euclidean distance from candidate to its k nearest references.

    With fewer than k references the mean runs over what is available; with
    none at all the score is 0. The candidate itself must not be in the
    reference set."""
    if k < 1:
        raise ValueError("k must be at least 1")
    c = np.asarray(candidate, dtype=np.float64)
    refs = np.asarray(references, dtype=np.float64)
    if refs.size == 0:
        return 0.0
    if refs.ndim != 2 or refs.shape[1] != c.shape[0]:
        raise ValueError(
            f"reference descriptors of dimension {refs.shape[-1] if refs.ndim == 2 else '?'} "
            f"do not match candidate dimension {c.shape[0]}")
    d2 = ((refs - c) ** 2).sum(axis=1)
    kk = min(k, d2.size)
    nearest = np.partition(d2, kk - 1)[:kk]
    return float(np.mean(np.sqrt(nearest)))


def novelty_scores(population_desc, archive_desc, k: int) -> np.ndarray:
    """Novelty of every population member against population + archive,
    excluding the member itself."""
    pop = np.asarray(population_desc, dtype=np.float64)
    m = pop.shape[0]
    refs = pop
    if archive_desc is not None and len(archive_desc):
        arc = np.asarray(archive_desc, dtype=np.float64)
        if arc.shape[1] != pop.shape[1]:
            raise ValueError(
                f"archive descriptor dimension {arc.shape[1]} does not match "
                f"population dimension {pop.shape[1]}")
        refs = np.vstack([pop, arc])
    d2 = ((pop[:, None, :] - refs[None, :, :]) ** 2).sum(axis=2)
    d2[np.arange(m), np.arange(m)] = np.inf  # exclude self
    kk = min(k, refs.shape[0] - 1)
    if kk < 1:
        return np.zeros(m)
    nearest = np.partition(d2, kk - 1, axis=1)[:, :kk]
    return np.sqrt(nearest).mean(axis=1)


@dataclass
class Individual:
    """One evaluated population member within a generation."""

    genome: object
    result: object = None
    descriptor: np.ndarray | None = None
    score: float = float("-inf")


def select_and_replace(individuals: list, q: int):
    """Stable descending sort by score (ties keep earlier index first,
    non-finite scores rank last); the q best are duplicated over the q worst
    and also returned for archive insertion."""
    m = len(individuals)
    if not 1 <= q <= m // 2:
        raise ValueError(f"need 1 <= Q <= M/2, got Q={q} with M={m}")
    scores = np.array([ind.score for ind in individuals], dtype=np.float64)
    keys = np.where(np.isfinite(scores), scores, -np.inf)
    order = np.argsort(-keys, kind="stable")
    best = [individuals[i] for i in order[:q]]
    new_pop = list(individuals)
    for j, worst_index in enumerate(order[m - q:]):
        new_pop[worst_index] = replace(best[j])
    return new_pop, best


@dataclass
class ArchiveEntry:
    """Stored policy: genome, its final observation (uint8 frame), the current
    descriptor, and the evaluation-only ground truth."""

    genome: object
    observation_u8: np.ndarray
    descriptor: np.ndarray
    ground_truth: tuple[float, float]
    generation: int
    score: float

    @property
    def observation(self) -> np.ndarray:
        return raster.to_observation(self.observation_u8)


class Archive:
    """Append-only repertoire. Size after generation g is always Q * g: the
    generation's best are inserted unconditionally, with no novelty threshold."""

    def __init__(self, descriptor_dim: int):
        self.descriptor_dim = descriptor_dim
        self.entries: list[ArchiveEntry] = []

    def __len__(self):
        return len(self.entries)

    def insert(self, entries):
        for e in entries:
            if e.descriptor.shape != (self.descriptor_dim,):
                raise ValueError(
                    f"entry descriptor shape {e.descriptor.shape} does not match "
                    f"archive dimension {self.descriptor_dim}")
            self.entries.append(e)

    def descriptor_matrix(self) -> np.ndarray:
        if not self.entries:
            return np.empty((0, self.descriptor_dim))
        return np.stack([e.descriptor for e in self.entries])

    def refresh_descriptors(self, encode):
        """Recompute every stored descriptor from its observation with the
        given encoder function; everything else is untouched."""
        for e in self.entries:
            e.descriptor = encode(e.observation)
