"""Pipeline stages behind the CLI: each writes its artifacts under the
configured output directory and is a pure function of (inputs, config).

Layout under ``outdir``::

    data/      preprocessed bundle: checkins.tsv pois.tsv users.tsv
               vocab.tsv stats.txt heldout_users.txt
    pretrain/  walks.txt poi_embeddings.txt user_embeddings.txt
    train/     model.next history.tsv history.png
    eval_*/    report.tsv ranks.tsv report.png
    interpret/ dims.txt dims.png
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import report as report_mod
from .config import RunConfig, write_config
from .data import (
    DataError,
    Dataset,
    Split,
    build_transition_graph,
    filter_activity,
    load_checkins,
    split_chronological,
)
from .evaluation import (
    ColdStartConfig,
    EvalReport,
    RankRecord,
    cold_start_eval,
    evaluate_with_records,
)
from .model import (
    Hyperparams,
    MetaIndex,
    Parameters,
    QueryContext,
    build_meta_index,
    candidate_intents,
    init_parameters,
    meta_user_intent,
    poi_intent,
    rank_descending,
    scores,
)
from .pretrain import generate_walks, init_user_embeddings
from .serialize import (
    load_model,
    read_embeddings,
    save_model,
    write_embeddings,
    write_vocab,
    write_walks,
)
from .skipgram import train_skipgram
from .train import TrainResult, train

MODEL_FILENAME = "model.next"


def _ensure_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def _meta_join(items: list[str]) -> str:
    return ",".join(items)


def dataset_stats(dataset: Dataset) -> list[tuple[str, str]]:
    n_users = dataset.n_users
    n_checkins = dataset.n_checkins
    avg_c = n_checkins / n_users
    avg_au = sum(len(u.meta_items) for u in dataset.users.values()) / n_users
    avg_aq = sum(len(p.meta_items) for p in dataset.pois.values()) / dataset.n_pois
    return [
        ("#User", str(n_users)),
        ("#POI", str(dataset.n_pois)),
        ("#Check-in", str(n_checkins)),
        ("#AvgC", f"{avg_c:.2f}"),
        ("#Avg(Au)", f"{avg_au:.2f}"),
        ("#Avg(Aq)", f"{avg_aq:.2f}"),
    ]


def run_preprocess(cfg: RunConfig) -> tuple[Dataset, Split, list[str]]:
    """Load, filter and split the corpus; write the canonical bundle."""
    if not cfg.checkins or not cfg.pois:
        raise DataError("preprocess needs checkins= and pois= paths")
    raw = load_checkins(cfg.checkins, cfg.pois, cfg.user_meta or None)
    filtered = filter_activity(raw, cfg.min_user_checkins, cfg.min_poi_users)
    split = split_chronological(filtered)
    heldout = sorted(set(raw.sequences) - set(filtered.sequences))

    out = _ensure_dir(cfg.data_dir())
    with open(out / "checkins.tsv", "w", encoding="utf-8") as fh:
        for uid in filtered.user_ids():
            for c in filtered.sequences[uid]:
                fh.write(f"{uid}\t{c.poi_id}\t{c.timestamp}\n")
    with open(out / "pois.tsv", "w", encoding="utf-8") as fh:
        for pid in filtered.poi_ids():
            p = filtered.pois[pid]
            fh.write(f"{pid}\t{p.latitude!r}\t{p.longitude!r}\t{_meta_join(p.meta_items)}\n")
    with open(out / "users.tsv", "w", encoding="utf-8") as fh:
        for uid in filtered.user_ids():
            fh.write(f"{uid}\t{_meta_join(filtered.users[uid].meta_items)}\n")
    meta = build_meta_index(filtered)
    write_vocab(out / "vocab.tsv", filtered, (meta.user_word_ids, meta.poi_word_ids))
    with open(out / "heldout_users.txt", "w", encoding="utf-8") as fh:
        for uid in heldout:
            fh.write(uid + "\n")
    stats = dataset_stats(filtered)
    with open(out / "stats.txt", "w", encoding="utf-8") as fh:
        for key, value in stats:
            fh.write(f"{key}\t{value}\n")
    write_config(out / "run_config.txt", cfg)
    for key, value in stats:
        print(f"{key}\t{value}")
    return filtered, split, heldout


def load_bundle(cfg: RunConfig) -> tuple[Dataset, Split]:
    """Reload the preprocessed bundle (already filtered; no re-filtering)."""
    data = cfg.data_dir()
    checkins = data / "checkins.tsv"
    if not checkins.exists():
        raise DataError(f"no preprocessed bundle under {data}; run preprocess first")
    dataset = load_checkins(checkins, data / "pois.tsv", data / "users.tsv")
    return dataset, split_chronological(dataset)


def pretrain_dir(cfg: RunConfig) -> Path:
    return Path(cfg.outdir) / "pretrain"


def run_pretrain(cfg: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    """Generate walks, train skip-gram POI embeddings, derive user embeddings."""
    dataset, split = load_bundle(cfg)
    use_geo = cfg.geo_kernel and cfg.rho > 0.0
    graph = build_transition_graph(
        dataset,
        split,
        distance_mode=cfg.distance,
        use_geo_kernel=use_geo,
        pair_cap=cfg.geo_pair_cap,
        seed=cfg.seed,
    )
    walks = generate_walks(graph, cfg.walk_config())
    out = _ensure_dir(pretrain_dir(cfg))
    write_walks(out / "walks.txt", walks, dataset.poi_ids())
    poi_emb, _losses = train_skipgram(walks, dataset.n_pois, cfg.skipgram_config())
    user_emb = init_user_embeddings(split.train, dataset.user_index, dataset.poi_index, poi_emb)
    write_embeddings(out / "poi_embeddings.txt", dataset.poi_ids(), poi_emb)
    write_embeddings(out / "user_embeddings.txt", dataset.user_ids(), user_emb)
    write_config(out / "run_config.txt", cfg)
    return poi_emb, user_emb


def _load_pretrained(cfg: RunConfig, dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    out = pretrain_dir(cfg)
    poi_path = out / "poi_embeddings.txt"
    if not poi_path.exists():
        raise DataError(f"no pretrained embeddings under {out}; run pretrain first (or pass --no-pretrain)")
    poi_ids, poi_emb = read_embeddings(poi_path)
    user_ids, user_emb = read_embeddings(out / "user_embeddings.txt")
    if poi_ids != dataset.poi_ids() or user_ids != dataset.user_ids():
        raise DataError("pretrained embedding vocabulary does not match the dataset bundle")
    return poi_emb, user_emb


def _build_meta(dataset: Dataset, hp: Hyperparams) -> MetaIndex | None:
    return build_meta_index(dataset) if hp.use_meta else None


def train_dir(cfg: RunConfig) -> Path:
    return Path(cfg.outdir) / "train"


def run_train(cfg: RunConfig, no_pretrain: bool = False) -> tuple[TrainResult, Path]:
    dataset, split = load_bundle(cfg)
    hp = cfg.hyperparams()
    meta = _build_meta(dataset, hp)
    if no_pretrain:
        poi_emb = user_emb = None
    else:
        poi_emb, user_emb = _load_pretrained(cfg, dataset)
    params = init_parameters(
        hp,
        dataset.user_ids(),
        dataset.poi_ids(),
        meta.user_word_ids if meta else [],
        meta.poi_word_ids if meta else [],
        rng=np.random.default_rng((cfg.seed, 3)),
        poi_embeddings=poi_emb,
        user_embeddings=user_emb,
    )
    result = train(split, dataset, params, hp, cfg.train_config(), meta)
    out = _ensure_dir(train_dir(cfg))
    model_path = out / MODEL_FILENAME
    save_model(model_path, result.params, hp)
    report_mod.write_history_tsv(out / "history.tsv", result.history)
    report_mod.save_history_figure(out / "history.png", result.history)
    write_config(out / "run_config.txt", cfg)
    return result, model_path


def _check_vocab(params: Parameters, dataset: Dataset, meta: MetaIndex | None) -> None:
    if params.user_ids != dataset.user_ids() or params.poi_ids != dataset.poi_ids():
        raise DataError("model archive vocabulary does not match the dataset bundle")
    if meta is not None and (
        params.user_word_ids != meta.user_word_ids or params.poi_word_ids != meta.poi_word_ids
    ):
        raise DataError("model archive meta vocabulary does not match the dataset bundle")


def run_evaluate(
    cfg: RunConfig,
    model_path,
    segment: str,
    heldout_path=None,
) -> tuple[EvalReport, list[RankRecord]]:
    """Score a segment and write report.tsv / ranks.tsv / report.png."""
    params, hp = load_model(model_path)
    if segment in ("validation", "test"):
        dataset, split = load_bundle(cfg)
        meta = _build_meta(dataset, hp)
        _check_vocab(params, dataset, meta)
        internal = "valid" if segment == "validation" else "test"
        result, records = evaluate_with_records(params, hp, split, dataset, meta, internal)
    elif segment == "coldstart":
        heldout_path = Path(heldout_path) if heldout_path else cfg.data_dir() / "heldout_users.txt"
        if not Path(heldout_path).exists():
            raise DataError(f"cold-start evaluation needs the held-out-user file ({heldout_path})")
        heldout = [ln.strip() for ln in Path(heldout_path).read_text(encoding="utf-8").splitlines() if ln.strip()]
        if not cfg.checkins or not cfg.pois:
            raise DataError("cold-start evaluation needs the raw checkins= and pois= paths")
        raw = load_checkins(cfg.checkins, cfg.pois, cfg.user_meta or None)
        dataset, _split = load_bundle(cfg)
        meta = _build_meta(dataset, hp)
        _check_vocab(params, dataset, meta)
        result, records = cold_start_eval(
            params,
            hp,
            raw,
            heldout,
            meta,
            ColdStartConfig(n_users=cfg.coldstart_users, seed=cfg.seed),
        )
    else:
        raise ValueError(f"unknown segment {segment!r}")

    out = _ensure_dir(Path(cfg.outdir) / f"eval_{segment}")
    report_mod.write_report_tsv(out / "report.tsv", result)
    report_mod.write_ranks_tsv(out / "ranks.tsv", records)
    report_mod.save_report_figure(out / "report.png", result)
    write_config(out / "run_config.txt", cfg)
    return result, records


def run_recommend(
    cfg: RunConfig,
    model_path,
    user_id: str | None,
    prev_poi_id: str,
    prev_ts: int,
    ts: int,
    k: int,
    cold_meta_items: list[str] | None = None,
) -> list[tuple[int, str, float]]:
    """Top-k recommendations as (rank, poi_id, score) rows."""
    params, hp = load_model(model_path)
    dataset, _split = load_bundle(cfg)
    meta = _build_meta(dataset, hp)
    _check_vocab(params, dataset, meta)
    poi_index = {p: i for i, p in enumerate(params.poi_ids)}
    if prev_poi_id not in poi_index:
        raise DataError(f"unknown previous POI {prev_poi_id!r} (cold-start POIs are not supported)")

    if user_id is not None:
        user_index = {u: i for i, u in enumerate(params.user_ids)}
        if user_id not in user_index:
            raise DataError(
                f"unknown user {user_id!r}; pass --cold-user-meta to score a cold-start user"
            )
        ctx = QueryContext(user_index[user_id], poi_index[prev_poi_id], prev_ts, ts)
        y = scores(ctx, params, hp, meta)
    else:
        ctx = QueryContext(None, poi_index[prev_poi_id], prev_ts, ts)
        h = poi_intent(ctx, params, hp, meta)
        if cold_meta_items:
            word_index = {w: i for i, w in enumerate(params.user_word_ids)}
            rows = [word_index[w] for w in cold_meta_items if w in word_index]
            if rows:
                h = h + meta_user_intent(rows, params)
        y = candidate_intents(params, hp, meta) @ h

    if not 1 <= k <= len(y):
        raise ValueError(f"K must be in [1, {len(y)}]")
    order = rank_descending(y)[:k]
    return [(r + 1, params.poi_ids[int(i)], float(y[i])) for r, i in enumerate(order)]


def run_interpret(cfg: RunConfig, model_path, top_n: int = 10) -> Path:
    params, hp = load_model(model_path)
    if not hp.use_meta or not params.poi_word_ids:
        raise DataError("model has no POI meta vocabulary; nothing to interpret")
    out = _ensure_dir(Path(cfg.outdir) / "interpret")
    report_mod.write_dims_txt(out / "dims.txt", params, top_n)
    report_mod.save_dims_figure(out / "dims.png", params)
    write_config(out / "run_config.txt", cfg)
    return out / "dims.txt"
