"""Forward computation of the intent model.

Three nonnegative intent vectors are extracted by one ReLU layer each: one
from the previous POI (optionally blended with its meta-data embedding and
driven by two temporal signals), one from the user (optionally blended with
user meta-data), and one per candidate POI.  A candidate's score is the
inner product of its intent with the sum of the other two.

Temporal signals: the elapsed time since the previous visit interpolates
between two transition matrices (saturating at the interval threshold), and
the hour-of-day slot of the query time selects a per-slot bias vector.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.sparse import csr_matrix

from .data import Dataset

INIT_SCALE = 0.08


@dataclass
class Hyperparams:
    dim: int = 60
    alpha: float = 0.3
    beta: float = 0.2
    pi_hours: float = 6.0
    slots: int = 24
    lam: float = 0.01
    gamma: float = 0.005
    use_meta: bool = True
    use_interval: bool = True
    use_timeslot: bool = True
    tz_offset_hours: float = 0.0

    def validate(self) -> None:
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not 0.0 <= self.alpha <= 1.0 or not 0.0 <= self.beta <= 1.0:
            raise ValueError("alpha and beta must be in [0, 1]")
        if self.pi_hours <= 0.0:
            raise ValueError("interval threshold must be positive")
        if self.slots < 1:
            raise ValueError("slots must be >= 1")

    def copy(self, **changes) -> "Hyperparams":
        return replace(self, **changes)


@dataclass(frozen=True)
class QueryContext:
    """Who asks, from which POI, and when."""

    user: int | None
    prev_poi: int
    prev_ts: int
    ts: int

    def __post_init__(self):
        if self.ts < self.prev_ts:
            raise ValueError("query time precedes the previous check-in")


class MetaIndex:
    """Row-stochastic membership matrices from users/POIs to their meta items.

    Multiplying by an embedding table yields the per-entity meta embedding
    (the arithmetic mean of its items); rows without items stay zero.
    """

    def __init__(
        self,
        poi_words: csr_matrix,
        user_words: csr_matrix,
        poi_word_ids: list[str],
        user_word_ids: list[str],
    ):
        self.poi_words = poi_words
        self.user_words = user_words
        self.poi_word_ids = poi_word_ids
        self.user_word_ids = user_word_ids
        self.poi_word_index = {w: i for i, w in enumerate(poi_word_ids)}
        self.user_word_index = {w: i for i, w in enumerate(user_word_ids)}


def _averaging_matrix(item_lists: list[list[int]], n_cols: int) -> csr_matrix:
    rows, cols, vals = [], [], []
    for r, items in enumerate(item_lists):
        if not items:
            continue
        w = 1.0 / len(items)
        for c in items:
            rows.append(r)
            cols.append(c)
            vals.append(w)
    return csr_matrix((vals, (rows, cols)), shape=(len(item_lists), n_cols))


def build_meta_index(dataset: Dataset) -> MetaIndex:
    poi_word_ids = sorted({w for p in dataset.pois.values() for w in p.meta_items})
    user_word_ids = sorted({w for u in dataset.users.values() for w in u.meta_items})
    pw_index = {w: i for i, w in enumerate(poi_word_ids)}
    uw_index = {w: i for i, w in enumerate(user_word_ids)}

    poi_lists: list[list[int]] = [[] for _ in range(dataset.n_pois)]
    for pid, dense in dataset.poi_index.items():
        poi_lists[dense] = [pw_index[w] for w in dataset.pois[pid].meta_items]
    user_lists: list[list[int]] = [[] for _ in range(dataset.n_users)]
    for uid, dense in dataset.user_index.items():
        user_lists[dense] = [uw_index[w] for w in dataset.users[uid].meta_items]

    return MetaIndex(
        poi_words=_averaging_matrix(poi_lists, len(poi_word_ids)),
        user_words=_averaging_matrix(user_lists, len(user_word_ids)),
        poi_word_ids=poi_word_ids,
        user_word_ids=user_word_ids,
    )


class Parameters:
    """Named tensor bag: embedding tables, transition matrices and biases.

    Which tensors exist depends on the feature flags: the interval signal
    owns ``W0``/``Wpi`` (otherwise a single ``W1``), the time-slot signal
    owns the bias table ``B`` (otherwise a single ``b1``), and meta-data
    owns the two item-embedding tables.
    """

    def __init__(
        self,
        tensors: dict[str, np.ndarray],
        user_ids: list[str],
        poi_ids: list[str],
        user_word_ids: list[str],
        poi_word_ids: list[str],
    ):
        self.tensors = tensors
        self.user_ids = user_ids
        self.poi_ids = poi_ids
        self.user_word_ids = user_word_ids
        self.poi_word_ids = poi_word_ids

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    @property
    def U(self) -> np.ndarray:
        return self.tensors["U"]

    @property
    def Q(self) -> np.ndarray:
        return self.tensors["Q"]

    def copy(self) -> "Parameters":
        return Parameters(
            {k: v.copy() for k, v in self.tensors.items()},
            list(self.user_ids),
            list(self.poi_ids),
            list(self.user_word_ids),
            list(self.poi_word_ids),
        )

    def squared_norm(self) -> float:
        return float(sum(np.sum(t * t) for t in self.tensors.values()))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.tensors.values())


def init_parameters(
    hp: Hyperparams,
    user_ids: list[str],
    poi_ids: list[str],
    user_word_ids: list[str],
    poi_word_ids: list[str],
    rng: np.random.Generator,
    poi_embeddings: np.ndarray | None = None,
    user_embeddings: np.ndarray | None = None,
) -> Parameters:
    """Fresh parameters; POI/user tables come from pre-training when given."""
    hp.validate()
    d = hp.dim

    def uni(*shape):
        return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)

    tensors: dict[str, np.ndarray] = {}
    if hp.use_interval:
        tensors["W0"] = uni(d, d)
        tensors["Wpi"] = uni(d, d)
    else:
        tensors["W1"] = uni(d, d)
    tensors["W2"] = uni(d, d)
    tensors["W3"] = uni(d, d)
    if hp.use_timeslot:
        tensors["B"] = uni(hp.slots, d)
    else:
        tensors["b1"] = uni(d)
    tensors["b2"] = uni(d)
    tensors["b3"] = uni(d)
    if hp.use_meta:
        tensors["M_user"] = uni(len(user_word_ids), d)
        tensors["M_poi"] = uni(len(poi_word_ids), d)

    if poi_embeddings is not None:
        if poi_embeddings.shape != (len(poi_ids), d):
            raise ValueError("POI embedding table shape mismatch")
        tensors["Q"] = poi_embeddings.copy()
    else:
        tensors["Q"] = uni(len(poi_ids), d)
    if user_embeddings is not None:
        if user_embeddings.shape != (len(user_ids), d):
            raise ValueError("user embedding table shape mismatch")
        tensors["U"] = user_embeddings.copy()
    else:
        tensors["U"] = uni(len(user_ids), d)

    if not hp.use_meta:
        user_word_ids, poi_word_ids = [], []
    return Parameters(tensors, list(user_ids), list(poi_ids), list(user_word_ids), list(poi_word_ids))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def slot_of(ts: int, hp: Hyperparams) -> int:
    local = ts + int(round(hp.tz_offset_hours * 3600.0))
    return (local // 3600) % hp.slots


def delta_hours(prev_ts: int, ts: int) -> float:
    if ts < prev_ts:
        raise ValueError("negative time interval")
    return (ts - prev_ts) / 3600.0


def interval_matrix(t_hours: float, w0: np.ndarray, wpi: np.ndarray, pi_hours: float) -> np.ndarray:
    """Linear interpolation between the two transition matrices, clamped at pi."""
    c0, cpi = interval_coefficients(t_hours, pi_hours)
    if c0 == 0.0:
        return wpi
    return c0 * w0 + cpi * wpi


def interval_coefficients(t_hours: float, pi_hours: float) -> tuple[float, float]:
    if not np.isfinite(t_hours) or t_hours < 0.0:
        raise ValueError(f"invalid time interval {t_hours!r}")
    if t_hours >= pi_hours:
        return 0.0, 1.0
    return (pi_hours - t_hours) / pi_hours, t_hours / pi_hours


def meta_embed_poi(poi: int, params: Parameters, meta: MetaIndex) -> np.ndarray:
    """Mean embedding of a POI's meta items; zero vector when it has none."""
    return np.asarray(meta.poi_words[poi] @ params["M_poi"]).reshape(-1)


def meta_embed_user(user: int, params: Parameters, meta: MetaIndex) -> np.ndarray:
    return np.asarray(meta.user_words[user] @ params["M_user"]).reshape(-1)


def poi_input(prev_poi: int, params: Parameters, hp: Hyperparams, meta: MetaIndex | None) -> np.ndarray:
    q = params.Q[prev_poi]
    if not hp.use_meta:
        return q
    return hp.alpha * q + (1.0 - hp.alpha) * meta_embed_poi(prev_poi, params, meta)


def user_input(user: int, params: Parameters, hp: Hyperparams, meta: MetaIndex | None) -> np.ndarray:
    u = params.U[user]
    if not hp.use_meta:
        return u
    return hp.beta * u + (1.0 - hp.beta) * meta_embed_user(user, params, meta)


def candidate_inputs(params: Parameters, hp: Hyperparams, meta: MetaIndex | None) -> np.ndarray:
    """Blended inputs for every candidate POI, as one (n_pois, dim) matrix."""
    if not hp.use_meta:
        return params.Q
    return hp.alpha * params.Q + (1.0 - hp.alpha) * (meta.poi_words @ params["M_poi"])


def transition_matrix(dt_hours: float, params: Parameters, hp: Hyperparams) -> np.ndarray:
    if hp.use_interval:
        return interval_matrix(dt_hours, params["W0"], params["Wpi"], hp.pi_hours)
    return params["W1"]


def intent_bias(ts: int, params: Parameters, hp: Hyperparams) -> np.ndarray:
    if hp.use_timeslot:
        return params["B"][slot_of(ts, hp)]
    return params["b1"]


def poi_intent(ctx: QueryContext, params: Parameters, hp: Hyperparams, meta: MetaIndex | None) -> np.ndarray:
    """Intent extracted from the previous POI under the temporal context."""
    if not 0 <= ctx.prev_poi < params.Q.shape[0]:
        raise KeyError(f"unknown previous POI id {ctx.prev_poi}")
    x = poi_input(ctx.prev_poi, params, hp, meta)
    t = transition_matrix(delta_hours(ctx.prev_ts, ctx.ts), params, hp)
    return relu(t @ x + intent_bias(ctx.ts, params, hp))


def user_intent(user: int, params: Parameters, hp: Hyperparams, meta: MetaIndex | None) -> np.ndarray:
    """Intent extracted from the user embedding (and user meta-data)."""
    if not 0 <= user < params.U.shape[0]:
        raise KeyError(
            f"unknown user id {user}; cold-start users are served via meta_user_intent"
        )
    return relu(params["W2"] @ user_input(user, params, hp, meta) + params["b2"])


def meta_user_intent(word_rows: list[int], params: Parameters) -> np.ndarray:
    """User intent from meta items alone (blend weight on the embedding set to 0)."""
    if not word_rows:
        raise ValueError("meta-only user intent needs at least one known meta item")
    m = params["M_user"][word_rows].mean(axis=0)
    return relu(params["W2"] @ m + params["b2"])


def candidate_intents(params: Parameters, hp: Hyperparams, meta: MetaIndex | None) -> np.ndarray:
    """Intent vectors of all candidate POIs, one batched matrix product."""
    x = candidate_inputs(params, hp, meta)
    return relu(x @ params["W3"].T + params["b3"])


def score(h_u: np.ndarray, h_q: np.ndarray, c: np.ndarray) -> float:
    if h_u.shape != h_q.shape or h_u.shape != c.shape:
        raise ValueError("intent dimension mismatch")
    return float((h_u + h_q) @ c)


def scores(ctx: QueryContext, params: Parameters, hp: Hyperparams, meta: MetaIndex | None) -> np.ndarray:
    """Scores of every candidate POI for the query context."""
    h_q = poi_intent(ctx, params, hp, meta)
    s = h_q if ctx.user is None else h_q + user_intent(ctx.user, params, hp, meta)
    return candidate_intents(params, hp, meta) @ s


def softmax(y: np.ndarray) -> np.ndarray:
    e = np.exp(y - np.max(y))
    return e / e.sum()


def predict_distribution(ctx: QueryContext, params: Parameters, hp: Hyperparams, meta: MetaIndex | None) -> np.ndarray:
    return softmax(scores(ctx, params, hp, meta))


def rank_descending(y: np.ndarray) -> np.ndarray:
    """Candidate ids sorted by descending score, ties by ascending id."""
    return np.lexsort((np.arange(len(y)), -y))


def rank_of(y: np.ndarray, target: int) -> int:
    """1-based rank of ``target`` under the ordering of :func:`rank_descending`."""
    s = y[target]
    better = int(np.sum(y > s))
    tied_before = int(np.sum((y == s) & (np.arange(len(y)) < target)))
    return 1 + better + tied_before


def recommend_topk(
    ctx: QueryContext,
    params: Parameters,
    hp: Hyperparams,
    meta: MetaIndex | None,
    k: int,
) -> list[tuple[int, float]]:
    """Top-k candidate dense ids with scores, deterministically ordered."""
    y = scores(ctx, params, hp, meta)
    if not 1 <= k <= len(y):
        raise ValueError(f"k must be in [1, {len(y)}]")
    order = rank_descending(y)[:k]
    return [(int(i), float(y[i])) for i in order]
