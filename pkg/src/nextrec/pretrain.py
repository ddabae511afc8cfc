"""POI embedding pre-training support: geographically biased random walks.

Walks mix two transition signals per step: a logistic kernel of pairwise
distance (near POIs preferred) and observed consecutive-visit frequencies,
weighted by ``rho``.  The walk corpus feeds the skip-gram trainer in
:mod:`nextrec.skipgram`; user embeddings are initialized from the visit
histories afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import DataError, GeoStats, TransitionGraph, pairwise_distances


@dataclass
class WalkConfig:
    rho: float = 0.0
    walks_per_node: int = 50
    walk_length: int = 20
    seed: int = 1

    def validate(self) -> None:
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must be in [0, 1]")
        if self.walks_per_node < 1:
            raise ValueError("walks_per_node must be >= 1")
        if self.walk_length < 2:
            raise ValueError("walk_length must be >= 2")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def geo_kernel(distance, stats: GeoStats):
    """Logistic kernel of standardized distance: 1/(1+exp(5*(d-mean)/std)).

    Strictly decreasing in distance; 0.5 at the mean distance.  Accepts
    scalars or arrays.
    """
    d = np.asarray(distance, dtype=float)
    if not np.all(np.isfinite(d)):
        raise DataError("non-finite distance passed to geo_kernel")
    if stats.std <= 0.0:
        raise DataError("geo kernel needs a positive distance standard deviation")
    out = expit(-5.0 * (d - stats.mean) / stats.std)
    return float(out) if np.isscalar(distance) else out


def walk_transition_distribution(i: int, graph: TransitionGraph, rho: float) -> np.ndarray | None:
    """Exact next-step distribution from POI ``i``, or None for a dead end.

    The geographic term puts kernel mass on every POI except ``i`` itself;
    the frequency term normalizes the observed transition counts.  When the
    frequency row is empty the geographic term carries all the mass; with
    ``rho == 0`` an empty row is a dead end.
    """
    n = graph.n_pois
    row = graph.counts.get(i, {})
    total = sum(row.values())

    geo_p = None
    if rho > 0.0:
        if graph.geo is None:
            raise DataError("rho > 0 requires geographic statistics (geo kernel enabled)")
        if n < 2:
            geo_p = None
        else:
            kappa = geo_kernel(pairwise_distances(graph.coords, i, graph.distance_mode), graph.geo)
            kappa[i] = 0.0
            geo_p = kappa / kappa.sum()

    if total == 0:
        return geo_p  # None when rho == 0 or no other POI exists

    freq_p = np.zeros(n, dtype=float)
    for j, c in row.items():
        freq_p[j] = c / total
    if rho == 0.0 or geo_p is None:
        return freq_p
    return rho * geo_p + (1.0 - rho) * freq_p


class TransitionSampler:
    """Per-node cached samplers over :func:`walk_transition_distribution`."""

    def __init__(self, graph: TransitionGraph, rho: float):
        self.graph = graph
        self.rho = rho
        self._rows: dict[int, tuple[np.ndarray, np.ndarray] | None] = {}

    def _row(self, i: int):
        if i not in self._rows:
            p = walk_transition_distribution(i, self.graph, self.rho)
            if p is None:
                self._rows[i] = None
            else:
                targets = np.nonzero(p)[0]
                cum = np.cumsum(p[targets])
                cum /= cum[-1]
                cum[-1] = 1.0
                self._rows[i] = (targets, cum)
        return self._rows[i]

    def sample_next(self, i: int, rng: np.random.Generator) -> int | None:
        row = self._row(i)
        if row is None:
            return None
        targets, cum = row
        return int(targets[np.searchsorted(cum, rng.random(), side="right")])


def generate_walks(graph: TransitionGraph, cfg: WalkConfig) -> list[list[int]]:
    """Generate ``walks_per_node`` walks of up to ``walk_length`` nodes per POI.

    Each walk draws from its own generator seeded by (seed, start node,
    walk index), so the corpus is bit-reproducible and independent of any
    parallel scheduling of start nodes.  Dead ends terminate a walk early.
    """
    cfg.validate()
    if graph.n_pois == 0:
        raise DataError("transition graph is empty")
    sampler = TransitionSampler(graph, cfg.rho)
    walks: list[list[int]] = []
    for node in range(graph.n_pois):
        for w in range(cfg.walks_per_node):
            rng = np.random.default_rng((cfg.seed, node, w))
            walk = [node]
            while len(walk) < cfg.walk_length:
                nxt = sampler.sample_next(walk[-1], rng)
                if nxt is None:
                    break
                walk.append(nxt)
            walks.append(walk)
    return walks


def init_user_embeddings(
    train_segments: dict[str, list],
    user_index: dict[str, int],
    poi_index: dict[str, int],
    poi_embeddings: np.ndarray,
) -> np.ndarray:
    """Visit-frequency weighted POI embedding average per user.

    Weighting each distinct POI embedding by its visit count and dividing
    by the training check-in count equals the plain mean over the user's
    training check-ins.
    """
    dim = poi_embeddings.shape[1]
    users = np.zeros((len(user_index), dim), dtype=float)
    for uid, dense in user_index.items():
        seq = train_segments.get(uid, [])
        if not seq:
            raise DataError(f"user {uid!r} has an empty training segment")
        rows = [poi_index[c.poi_id] for c in seq]
        users[dense] = poi_embeddings[rows].mean(axis=0)
    return users
