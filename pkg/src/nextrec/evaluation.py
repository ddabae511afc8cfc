"""Ranking metrics, the held-out evaluation protocol, cold-start user
scoring and hidden-dimension keyword tables.

Each evaluation instance has exactly one relevant POI (the one actually
visited), so average precision reduces to the reciprocal rank of the truth
and MAP to the mean reciprocal rank.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, Split, eval_instances
from .model import (
    Hyperparams,
    MetaIndex,
    Parameters,
    QueryContext,
    candidate_intents,
    meta_user_intent,
    poi_intent,
    rank_of,
    relu,
    scores,
)


def acc_at_k(ranks, k: int) -> float:
    """Fraction of instances whose true POI ranks within the top k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ValueError("no evaluation instances")
    return float(np.mean(ranks <= k))


def mean_average_precision(ranks) -> float:
    """Mean reciprocal rank; equals MAP for single-relevant-item instances."""
    ranks = np.asarray(ranks, dtype=float)
    if ranks.size == 0:
        raise ValueError("no evaluation instances")
    return float(np.mean(1.0 / ranks))


@dataclass
class EvalReport:
    acc1: float
    acc5: float
    acc10: float
    map: float
    count: int
    ranks: np.ndarray
    skipped: int = 0

    def metric_rows(self) -> list[tuple[str, float]]:
        return [("acc@1", self.acc1), ("acc@5", self.acc5), ("acc@10", self.acc10), ("map", self.map)]


def report_from_ranks(ranks, skipped: int = 0) -> EvalReport:
    ranks = np.asarray(ranks)
    return EvalReport(
        acc1=acc_at_k(ranks, 1),
        acc5=acc_at_k(ranks, 5),
        acc10=acc_at_k(ranks, 10),
        map=mean_average_precision(ranks),
        count=int(ranks.size),
        ranks=ranks,
        skipped=skipped,
    )


@dataclass
class RankRecord:
    """One scored instance, for the ranks table."""

    user_id: str
    prev_poi_id: str
    target_poi_id: str
    target_ts: int
    rank: int
    mode: str = "full"


def evaluate(
    params: Parameters,
    hp: Hyperparams,
    split: Split,
    dataset: Dataset,
    meta: MetaIndex | None,
    segment: str,
) -> EvalReport:
    report, _ = evaluate_with_records(params, hp, split, dataset, meta, segment)
    return report


def evaluate_with_records(
    params: Parameters,
    hp: Hyperparams,
    split: Split,
    dataset: Dataset,
    meta: MetaIndex | None,
    segment: str,
) -> tuple[EvalReport, list[RankRecord]]:
    """Rank the true next POI for every check-in in the segment.

    The previous POI of a segment's first target is the last check-in of
    the preceding segment.
    """
    instances = eval_instances(split, segment)
    if not instances:
        raise ValueError(f"no instances in segment {segment!r}")
    ranks = np.empty(len(instances), dtype=np.int64)
    records: list[RankRecord] = []
    for i, inst in enumerate(instances):
        ctx = QueryContext(
            user=dataset.user_index[inst.user_id],
            prev_poi=dataset.poi_index[inst.prev_poi_id],
            prev_ts=inst.prev_ts,
            ts=inst.target_ts,
        )
        y = scores(ctx, params, hp, meta)
        r = rank_of(y, dataset.poi_index[inst.target_poi_id])
        ranks[i] = r
        records.append(
            RankRecord(inst.user_id, inst.prev_poi_id, inst.target_poi_id, inst.target_ts, r)
        )
    return report_from_ranks(ranks), records


@dataclass
class ColdStartConfig:
    n_users: int = 200
    seed: int = 1


def cold_start_eval(
    params: Parameters,
    hp: Hyperparams,
    raw_dataset: Dataset,
    heldout_user_ids: list[str],
    meta: MetaIndex | None,
    cfg: ColdStartConfig | None = None,
) -> tuple[EvalReport, list[RankRecord]]:
    """Score one sampled transition per held-out user.

    The user has no embedding row; intent comes from meta items alone
    (blend weight on the user embedding set to 0) when any are known to
    the model, otherwise the previous-POI intent is used by itself.  A
    qualifying transition is a consecutive pair whose POIs both exist in
    the training vocabulary; users without one are counted as skipped.
    """
    cfg = cfg or ColdStartConfig()
    poi_index = {p: i for i, p in enumerate(params.poi_ids)}
    trained_users = set(params.user_ids)
    word_index = {w: i for i, w in enumerate(params.user_word_ids)}

    overlap = sorted(set(heldout_user_ids) & trained_users)
    if overlap:
        raise ValueError(f"held-out users present in training: {overlap[:3]}")
    candidates = sorted(set(heldout_user_ids))
    rng = np.random.default_rng((cfg.seed, 7))
    if len(candidates) > cfg.n_users:
        chosen = rng.choice(len(candidates), size=cfg.n_users, replace=False)
        candidates = [candidates[i] for i in sorted(chosen)]

    cand_intents = candidate_intents(params, hp, meta)
    ranks: list[int] = []
    records: list[RankRecord] = []
    skipped = 0
    for uid in candidates:
        seq = raw_dataset.sequences.get(uid, [])
        transitions = [
            (prev, cur)
            for prev, cur in zip(seq, seq[1:])
            if prev.poi_id in poi_index and cur.poi_id in poi_index
        ]
        if not transitions:
            skipped += 1
            continue
        prev, cur = transitions[int(rng.integers(len(transitions)))]
        ctx = QueryContext(
            user=None,
            prev_poi=poi_index[prev.poi_id],
            prev_ts=prev.timestamp,
            ts=cur.timestamp,
        )
        h_q = poi_intent(ctx, params, hp, meta)
        word_rows = []
        if hp.use_meta and uid in raw_dataset.users:
            items = raw_dataset.users[uid].meta_items
            word_rows = [word_index[w] for w in items if w in word_index]
            if items and len(word_rows) < len(items):
                warnings.warn(
                    f"user {uid!r}: {len(items) - len(word_rows)} meta items "
                    "unknown to the model were dropped",
                    stacklevel=2,
                )
        if word_rows:
            s = h_q + meta_user_intent(word_rows, params)
            mode = "meta"
        else:
            s = h_q
            mode = "poi-only"
        y = cand_intents @ s
        r = rank_of(y, poi_index[cur.poi_id])
        ranks.append(r)
        records.append(RankRecord(uid, prev.poi_id, cur.poi_id, cur.timestamp, r, mode))
    if not ranks:
        raise ValueError("no held-out user had a qualifying transition")
    return report_from_ranks(np.asarray(ranks), skipped=skipped), records


def word_contribution(word: int, params: Parameters) -> np.ndarray:
    """Nonnegative contribution of one meta word to each intent dimension."""
    m_poi = params["M_poi"]
    if not 0 <= word < m_poi.shape[0]:
        raise KeyError(f"unknown meta word id {word}")
    return relu(params["W3"] @ m_poi[word] + params["b3"])


def contribution_matrix(params: Parameters) -> np.ndarray:
    """Stacked word contributions: one row per meta word."""
    return relu(params["M_poi"] @ params["W3"].T + params["b3"])


def kappa_matrix(params: Parameters) -> tuple[np.ndarray, np.ndarray]:
    """Per-word dimension preferences: rows normalized to sum to 1.

    Returns (eligible, kappa): words whose contribution vector is all zero
    are ineligible and keep a zero row.
    """
    omega = contribution_matrix(params)
    totals = omega.sum(axis=1)
    eligible = totals > 0.0
    kappa = np.zeros_like(omega)
    kappa[eligible] = omega[eligible] / totals[eligible, None]
    return eligible, kappa


def dimension_keywords(
    dim: int, top_n: int, params: Parameters
) -> list[tuple[str, float]]:
    """Words preferring hidden dimension ``dim`` most, with their scores."""
    eligible, kappa = kappa_matrix(params)
    if dim < 0 or dim >= kappa.shape[1]:
        raise ValueError(f"dimension {dim} out of range")
    if not np.any(eligible):
        warnings.warn("all words have zero contribution; no keywords", stacklevel=2)
        return []
    idx = np.nonzero(eligible)[0]
    order = np.lexsort((idx, -kappa[idx, dim]))
    picked = idx[order][:top_n]
    return [(params.poi_word_ids[w], float(kappa[w, dim])) for w in picked]
