"""Check-in corpus ingestion, activity filtering, chronological splits and
transition/geography statistics.

File formats (UTF-8, tab-separated):

* check-ins: ``user_id<TAB>poi_id<TAB>timestamp_epoch_seconds``
* POIs:      ``poi_id<TAB>latitude<TAB>longitude<TAB>word1,word2,...``
  (the word list column is optional)
* user meta: ``user_id<TAB>item1,item2,...`` (the whole file is optional)

All identifiers are opaque strings; dense integer ids are internal and
assigned by sorting the original ids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

EARTH_RADIUS_M = 6_371_000.0


class DataError(Exception):
    """Raised for malformed input files and inconsistent datasets."""


@dataclass(frozen=True)
class CheckIn:
    user_id: str
    poi_id: str
    timestamp: int


@dataclass
class Poi:
    poi_id: str
    latitude: float
    longitude: float
    meta_items: list[str] = field(default_factory=list)


@dataclass
class UserRecord:
    user_id: str
    meta_items: list[str] = field(default_factory=list)


@dataclass
class Dataset:
    """Per-user chronological check-in sequences plus the POI/user tables.

    ``sequences`` are sorted by timestamp with ties broken by input order.
    ``user_index`` / ``poi_index`` map original ids to dense ids assigned
    in sorted original-id order.
    """

    users: dict[str, UserRecord]
    pois: dict[str, Poi]
    sequences: dict[str, list[CheckIn]]
    user_index: dict[str, int]
    poi_index: dict[str, int]

    @property
    def n_users(self) -> int:
        return len(self.user_index)

    @property
    def n_pois(self) -> int:
        return len(self.poi_index)

    @property
    def n_checkins(self) -> int:
        return sum(len(s) for s in self.sequences.values())

    def user_ids(self) -> list[str]:
        return sorted(self.user_index, key=self.user_index.get)

    def poi_ids(self) -> list[str]:
        return sorted(self.poi_index, key=self.poi_index.get)


@dataclass
class Split:
    """Chronological per-user train/validation/test partition (70/10/20)."""

    train: dict[str, list[CheckIn]]
    valid: dict[str, list[CheckIn]]
    test: dict[str, list[CheckIn]]

    def segment(self, name: str) -> dict[str, list[CheckIn]]:
        if name not in ("train", "valid", "test"):
            raise ValueError(f"unknown segment {name!r}")
        return getattr(self, name)


@dataclass
class GeoStats:
    mean: float
    std: float


@dataclass
class TransitionGraph:
    """Consecutive-visit counts over training data plus geographic statistics.

    ``counts[i][j]`` is the number of times POI ``j`` directly followed POI
    ``i`` inside one user's training segment.  ``geo`` is None when the
    distance kernel is disabled.
    """

    n_pois: int
    counts: dict[int, dict[int, int]]
    coords: np.ndarray  # (n_pois, 2) latitude/longitude (or planar x/y)
    distance_mode: str  # "haversine" | "planar"
    geo: GeoStats | None

    def out_degree(self, i: int) -> int:
        return sum(self.counts.get(i, {}).values())


def _index_map(keys) -> dict[str, int]:
    return {k: i for i, k in enumerate(sorted(keys))}


def _open_input(path):
    try:
        return open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None


def _parse_meta_list(text: str) -> list[str]:
    return [w for w in text.strip().split(",") if w]


def load_checkins(
    checkin_path: str,
    poi_path: str,
    user_meta_path: str | None = None,
) -> Dataset:
    """Load the raw corpus into a :class:`Dataset`.

    Sequences are sorted per user by timestamp (stable, so equal timestamps
    keep input order).  Every check-in must reference a POI present in the
    POI file; a POI id occurring twice with different coordinates is an
    error.
    """
    pois: dict[str, Poi] = {}
    with _open_input(poi_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) not in (3, 4):
                raise DataError(f"{poi_path}:{lineno}: expected 3 or 4 tab-separated fields")
            poi_id = parts[0]
            try:
                lat, lon = float(parts[1]), float(parts[2])
            except ValueError as exc:
                raise DataError(f"{poi_path}:{lineno}: bad coordinate: {exc}") from None
            if not poi_id or any(ch.isspace() for ch in poi_id):
                raise DataError(f"{poi_path}:{lineno}: empty or whitespace-containing poi_id")
            if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
                raise DataError(f"{poi_path}:{lineno}: coordinates out of range")
            meta = _parse_meta_list(parts[3]) if len(parts) == 4 else []
            prev = pois.get(poi_id)
            if prev is not None and (prev.latitude != lat or prev.longitude != lon):
                raise DataError(f"{poi_path}:{lineno}: conflicting coordinates for POI {poi_id!r}")
            pois[poi_id] = Poi(poi_id, lat, lon, meta)

    user_meta: dict[str, list[str]] = {}
    if user_meta_path is not None:
        with _open_input(user_meta_path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2 or not parts[0]:
                    raise DataError(f"{user_meta_path}:{lineno}: expected user_id<TAB>items")
                user_meta[parts[0]] = _parse_meta_list(parts[1])

    sequences: dict[str, list[CheckIn]] = {}
    with _open_input(checkin_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{checkin_path}:{lineno}: expected user_id<TAB>poi_id<TAB>timestamp")
            user_id, poi_id, ts_text = parts
            if not user_id or any(ch.isspace() for ch in user_id):
                raise DataError(f"{checkin_path}:{lineno}: empty or whitespace-containing user_id")
            if not poi_id:
                raise DataError(f"{checkin_path}:{lineno}: empty poi_id")
            try:
                ts = int(ts_text)
            except ValueError:
                raise DataError(f"{checkin_path}:{lineno}: bad timestamp {ts_text!r}") from None
            if ts <= 0:
                raise DataError(f"{checkin_path}:{lineno}: timestamp must be positive")
            if poi_id not in pois:
                raise DataError(f"{checkin_path}:{lineno}: unknown poi_id {poi_id!r}")
            sequences.setdefault(user_id, []).append(CheckIn(user_id, poi_id, ts))

    if not sequences:
        raise DataError(f"{checkin_path}: no check-ins found")
    for seq in sequences.values():
        seq.sort(key=lambda c: c.timestamp)  # stable: ties keep input order

    users = {uid: UserRecord(uid, user_meta.get(uid, [])) for uid in sequences}
    return Dataset(
        users=users,
        pois=pois,
        sequences=sequences,
        user_index=_index_map(users),
        poi_index=_index_map(pois),
    )


def filter_activity(
    dataset: Dataset,
    min_user_checkins: int = 10,
    min_poi_users: int = 10,
) -> Dataset:
    """Iteratively drop inactive users and rarely-visited POIs to a fixpoint.

    A user survives with at least ``min_user_checkins`` check-ins; a POI
    survives when visited by at least ``min_poi_users`` distinct users.
    Removing one side can invalidate the other, so removal repeats until
    both thresholds hold.  Index maps are rebuilt densely.
    """
    if min_user_checkins < 1 or min_poi_users < 1:
        raise ValueError("thresholds must be >= 1")

    sequences = {u: list(seq) for u, seq in dataset.sequences.items()}
    while True:
        sequences = {u: seq for u, seq in sequences.items() if len(seq) >= min_user_checkins}
        visitors: dict[str, set[str]] = {}
        for uid, seq in sequences.items():
            for c in seq:
                visitors.setdefault(c.poi_id, set()).add(uid)
        keep_pois = {p for p, us in visitors.items() if len(us) >= min_poi_users}
        trimmed = {
            u: [c for c in seq if c.poi_id in keep_pois] for u, seq in sequences.items()
        }
        trimmed = {u: seq for u, seq in trimmed.items() if seq}
        if trimmed == sequences and all(len(s) >= min_user_checkins for s in trimmed.values()):
            sequences = trimmed
            break
        sequences = trimmed
        if not sequences:
            raise DataError("dataset vanished under filter")
    if not sequences:
        raise DataError("dataset vanished under filter")

    kept_pois = {c.poi_id for seq in sequences.values() for c in seq}
    users = {u: dataset.users[u] for u in sequences}
    pois = {p: dataset.pois[p] for p in kept_pois}
    return Dataset(
        users=users,
        pois=pois,
        sequences=sequences,
        user_index=_index_map(users),
        poi_index=_index_map(pois),
    )


def split_chronological(dataset: Dataset) -> Split:
    """Per-user 70/10/20 chronological partition.

    Boundary arithmetic is exact: train takes ``floor(0.7 n)`` events,
    validation ``floor(0.1 n)``, the remainder goes to test.
    """
    train: dict[str, list[CheckIn]] = {}
    valid: dict[str, list[CheckIn]] = {}
    test: dict[str, list[CheckIn]] = {}
    for uid, seq in dataset.sequences.items():
        n = len(seq)
        if n < 3:
            raise DataError(f"user {uid!r} has {n} check-ins; cannot populate all segments")
        n_train = n * 7 // 10
        n_valid = n // 10
        train[uid] = seq[:n_train]
        valid[uid] = seq[n_train : n_train + n_valid]
        test[uid] = seq[n_train + n_valid :]
    return Split(train=train, valid=valid, test=test)


def build_transition_counts(train: dict[str, list[CheckIn]], poi_index: dict[str, int]) -> dict[int, dict[int, int]]:
    """Count consecutive POI pairs inside each user's training segment.

    Pairs never cross user boundaries (and, by construction of the input,
    never cross split boundaries).
    """
    counts: dict[int, dict[int, int]] = {}
    for seq in train.values():
        for prev, cur in zip(seq, seq[1:]):
            a, b = poi_index[prev.poi_id], poi_index[cur.poi_id]
            row = counts.setdefault(a, {})
            row[b] = row.get(b, 0) + 1
    return counts


def haversine_m(lat1, lon1, lat2, lon2):
    """Great-circle distance in meters; accepts scalars or numpy arrays."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(x, dtype=float)) for x in (lat1, lon1, lat2, lon2))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = np.sin(dlat / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def pairwise_distances(coords: np.ndarray, i: int, mode: str) -> np.ndarray:
    """Distances from POI ``i`` to every POI (self included, distance 0)."""
    if mode == "haversine":
        return haversine_m(coords[i, 0], coords[i, 1], coords[:, 0], coords[:, 1])
    if mode == "planar":
        return np.hypot(coords[:, 0] - coords[i, 0], coords[:, 1] - coords[i, 1])
    raise ValueError(f"unknown distance mode {mode!r}")


def compute_geo_stats(
    coords: np.ndarray,
    mode: str = "haversine",
    pair_cap: int = 0,
    seed: int = 0,
) -> GeoStats:
    """Mean and population standard deviation of all pairwise distances.

    All ``n(n-1)/2`` unordered pairs are used unless ``pair_cap`` is positive
    and smaller, in which case a seeded uniform sample of pairs estimates the
    statistics.  A zero standard deviation (all POIs effectively co-located,
    or a single pair) cannot feed the distance kernel.
    """
    n = coords.shape[0]
    if n < 2:
        raise DataError("geo stats need at least 2 POIs")
    total_pairs = n * (n - 1) // 2

    if pair_cap and total_pairs > pair_cap:
        rng = np.random.default_rng(seed)
        ii = rng.integers(0, n, size=pair_cap)
        jj = rng.integers(0, n - 1, size=pair_cap)
        jj = np.where(jj >= ii, jj + 1, jj)  # uniform over j != i
        if mode == "haversine":
            d = haversine_m(coords[ii, 0], coords[ii, 1], coords[jj, 0], coords[jj, 1])
        else:
            d = np.hypot(coords[jj, 0] - coords[ii, 0], coords[jj, 1] - coords[ii, 1])
        mean = float(d.mean())
        std = float(d.std())
    else:
        s = 0.0
        s2 = 0.0
        for i in range(n - 1):
            d = pairwise_distances(coords, i, mode)[i + 1 :]
            s += float(d.sum())
            s2 += float((d * d).sum())
        mean = s / total_pairs
        var = max(s2 / total_pairs - mean * mean, 0.0)
        std = math.sqrt(var)

    if not math.isfinite(mean) or not math.isfinite(std):
        raise DataError("non-finite pairwise distance encountered")
    if std <= 0.0:
        raise DataError(
            "pairwise distance standard deviation is zero; disable the "
            "distance kernel (geo_kernel=off) to proceed"
        )
    return GeoStats(mean=mean, std=std)


def build_transition_graph(
    dataset: Dataset,
    split: Split,
    distance_mode: str = "haversine",
    use_geo_kernel: bool = True,
    pair_cap: int = 0,
    seed: int = 0,
) -> TransitionGraph:
    """Assemble transition counts and geographic statistics for walk generation."""
    counts = build_transition_counts(split.train, dataset.poi_index)
    coords = np.zeros((dataset.n_pois, 2), dtype=float)
    for pid, dense in dataset.poi_index.items():
        p = dataset.pois[pid]
        coords[dense, 0] = p.latitude
        coords[dense, 1] = p.longitude
    geo = None
    if use_geo_kernel:
        geo = compute_geo_stats(coords, mode=distance_mode, pair_cap=pair_cap, seed=seed)
    return TransitionGraph(
        n_pois=dataset.n_pois,
        counts=counts,
        coords=coords,
        distance_mode=distance_mode,
        geo=geo,
    )


@dataclass(frozen=True)
class Instance:
    """One prediction instance: context plus the ground-truth next POI."""

    user_id: str
    prev_poi_id: str
    prev_ts: int
    target_ts: int
    target_poi_id: str


def training_instances(split: Split) -> list[Instance]:
    """Consecutive pairs within each user's training segment.

    The first training check-in has no previous POI and is never a target.
    Users are enumerated in sorted id order for determinism.
    """
    out: list[Instance] = []
    for uid in sorted(split.train):
        seq = split.train[uid]
        for prev, cur in zip(seq, seq[1:]):
            out.append(Instance(uid, prev.poi_id, prev.timestamp, cur.timestamp, cur.poi_id))
    return out


def eval_instances(split: Split, segment: str) -> list[Instance]:
    """One instance per check-in in ``segment`` ("valid" or "test").

    The previous POI is the chronologically preceding check-in, crossing
    into the earlier segment for the first target.
    """
    if segment not in ("valid", "test"):
        raise ValueError(f"unknown evaluation segment {segment!r}")
    out: list[Instance] = []
    for uid in sorted(split.train):
        if segment == "valid":
            context = split.train[uid]
            targets = split.valid[uid]
        else:
            context = split.train[uid] + split.valid[uid]
            targets = split.test[uid]
        if not targets:
            continue
        prev = context[-1]
        for cur in targets:
            out.append(Instance(uid, prev.poi_id, prev.timestamp, cur.timestamp, cur.poi_id))
            prev = cur
    return out
