import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nextrec.data import (
    DataError,
    build_transition_counts,
    compute_geo_stats,
    eval_instances,
    filter_activity,
    haversine_m,
    load_checkins,
    split_chronological,
    training_instances,
)

from corpora import make_dataset


def write_files(tmp_path, checkins, pois, users=None):
    tmp_path.mkdir(parents=True, exist_ok=True)
    cpath = tmp_path / "checkins.tsv"
    ppath = tmp_path / "pois.tsv"
    cpath.write_text("".join(f"{u}\t{p}\t{t}\n" for u, p, t in checkins), encoding="utf-8")
    ppath.write_text("".join(pois), encoding="utf-8")
    upath = None
    if users is not None:
        upath = tmp_path / "users.tsv"
        upath.write_text("".join(users), encoding="utf-8")
    return cpath, ppath, upath


class TestLoadCheckins:
    def test_single_user_sorted(self, tmp_path):
        c, p, _ = write_files(
            tmp_path,
            [("u1", "pa", 300), ("u1", "pb", 100), ("u1", "pa", 200)],
            ["pa\t1.0\t2.0\n", "pb\t1.5\t2.5\tcafe,bar\n"],
        )
        ds = load_checkins(c, p)
        assert [x.timestamp for x in ds.sequences["u1"]] == [100, 200, 300]
        assert ds.pois["pb"].meta_items == ["cafe", "bar"]
        assert ds.user_index == {"u1": 0}
        assert ds.poi_index == {"pa": 0, "pb": 1}

    def test_unknown_poi_rejected(self, tmp_path):
        c, p, _ = write_files(tmp_path, [("u1", "zz", 100)], ["pa\t1.0\t2.0\n"])
        with pytest.raises(DataError, match="checkins.tsv:1.*zz"):
            load_checkins(c, p)

    def test_shuffled_equals_sorted(self, tmp_path):
        rng = np.random.default_rng(3)
        rows = [(f"u{i % 4}", f"p{i % 5}", 1000 + int(t)) for i, t in enumerate(rng.choice(10_000, 60, replace=False))]
        pois = [f"p{i}\t{i / 10}\t{-i / 10}\n" for i in range(5)]
        c1, p1, _ = write_files(tmp_path / "a", sorted(rows, key=lambda r: r[2]), pois)
        shuffled = list(rows)
        rng.shuffle(shuffled)
        c2, p2, _ = write_files(tmp_path / "b", shuffled, pois)
        da, db = load_checkins(c1, p1), load_checkins(c2, p2)
        assert da.sequences == db.sequences
        assert da.user_index == db.user_index

    def test_malformed_row_names_line(self, tmp_path):
        c, p, _ = write_files(tmp_path, [("u1", "pa", 100)], ["pa\t1.0\t2.0\n"])
        c.write_text("u1\tpa\t100\nbadline\n", encoding="utf-8")
        with pytest.raises(DataError, match=":2"):
            load_checkins(c, p)

    def test_bad_timestamp(self, tmp_path):
        c, p, _ = write_files(tmp_path, [("u1", "pa", "xx")], ["pa\t1.0\t2.0\n"])
        with pytest.raises(DataError, match="timestamp"):
            load_checkins(c, p)

    def test_conflicting_poi_coordinates(self, tmp_path):
        c, p, _ = write_files(
            tmp_path, [("u1", "pa", 100)], ["pa\t1.0\t2.0\n", "pa\t1.0\t3.0\n"]
        )
        with pytest.raises(DataError, match="conflicting"):
            load_checkins(c, p)

    def test_user_meta_parsed(self, tmp_path):
        c, p, u = write_files(
            tmp_path,
            [("u1", "pa", 100)],
            ["pa\t1.0\t2.0\n"],
            users=["u1\tf1,f2\n", "u2\t\n"],
        )
        ds = load_checkins(c, p, u)
        assert ds.users["u1"].meta_items == ["f1", "f2"]
        assert "u2" not in ds.users  # no check-ins, not part of the dataset

    def test_out_of_range_coordinates(self, tmp_path):
        c, p, _ = write_files(tmp_path, [("u1", "pa", 100)], ["pa\t91.0\t2.0\n"])
        with pytest.raises(DataError, match="out of range"):
            load_checkins(c, p)


def _uniform_events(users, pois, per_user_visits):
    """Every listed user visits every listed POI ``per_user_visits`` times."""
    events = []
    ts = 1000
    for u in users:
        for _ in range(per_user_visits):
            for p in pois:
                events.append((u, p, ts))
                ts += 10
    return events


class TestFilterActivity:
    def test_cascading_fixpoint(self):
        # Twelve strong users keep the pool POIs alive; px is visited by
        # only nine weak users, each of which then drops below ten
        # check-ins and disappears on the following iteration.
        pool = [f"q{i}" for i in range(9)]
        strong = [f"v{i:02d}" for i in range(12)]
        weak = [f"u{i:02d}" for i in range(9)]
        events = _uniform_events(strong, pool, 2)  # 18 check-ins each
        ts = 10_000_000
        for u in weak:
            events.append((u, "px", ts))
            ts += 10
            for p in pool:
                events.append((u, p, ts))
                ts += 10
        pois = {p: (0.0, float(i), []) for i, p in enumerate(pool)}
        pois["px"] = (5.0, 5.0, [])
        ds = make_dataset(events, pois)
        out = filter_activity(ds, 10, 10)
        assert sorted(out.users) == strong
        assert sorted(out.pois) == pool
        assert out.n_checkins == 12 * 18

    def test_already_satisfying_unchanged(self):
        users = [f"v{i:02d}" for i in range(10)]
        pois = {f"q{i}": (0.0, float(i), []) for i in range(3)}
        ds = make_dataset(_uniform_events(users, list(pois), 4), pois)
        out = filter_activity(ds, 10, 10)
        assert out.sequences == ds.sequences
        assert out.poi_index == ds.poi_index

    def test_vanishing_dataset_errors(self):
        ds = make_dataset([("u1", "pa", 100), ("u1", "pa", 200)], {"pa": (0.0, 0.0, [])})
        with pytest.raises(DataError, match="vanished"):
            filter_activity(ds, 10, 10)

    def test_fixpoint_invariant(self):
        users = [f"v{i:02d}" for i in range(11)]
        pois = {f"q{i}": (0.0, float(i), []) for i in range(4)}
        events = _uniform_events(users, list(pois), 3)
        events += [(u, "rare", 99_000_000 + i) for i, u in enumerate(users[:4])]
        pois["rare"] = (9.0, 9.0, [])
        out = filter_activity(make_dataset(events, pois), 10, 10)
        visitors = {}
        for uid, seq in out.sequences.items():
            assert len(seq) >= 10
            for c in seq:
                visitors.setdefault(c.poi_id, set()).add(uid)
        assert all(len(v) >= 10 for v in visitors.values())


class TestSplit:
    @pytest.mark.parametrize("n,expected", [(10, (7, 1, 2)), (20, (14, 2, 4)), (13, (9, 1, 3))])
    def test_boundaries(self, n, expected):
        pois = {"pa": (0.0, 0.0, [])}
        ds = make_dataset([("u1", "pa", 100 + i) for i in range(n)], pois)
        sp = split_chronological(ds)
        assert (len(sp.train["u1"]), len(sp.valid["u1"]), len(sp.test["u1"])) == expected

    @given(st.integers(min_value=3, max_value=400))
    def test_concat_reproduces_sequence(self, n):
        pois = {"pa": (0.0, 0.0, [])}
        ds = make_dataset([("u1", "pa", 100 + i) for i in range(n)], pois)
        sp = split_chronological(ds)
        assert sp.train["u1"] + sp.valid["u1"] + sp.test["u1"] == ds.sequences["u1"]
        assert len(sp.train["u1"]) == n * 7 // 10
        assert len(sp.valid["u1"]) == n // 10

    def test_too_short_rejected(self):
        ds = make_dataset([("u1", "pa", 100), ("u1", "pa", 200)], {"pa": (0.0, 0.0, [])})
        with pytest.raises(DataError, match="cannot populate"):
            split_chronological(ds)


class TestTransitionCounts:
    def test_single_user_chain(self):
        pois = {"A": (0.0, 0.0, []), "B": (0.0, 1.0, [])}
        ds = make_dataset([("u", "A", 1), ("u", "B", 2), ("u", "A", 3)], pois)
        idx = ds.poi_index
        counts = build_transition_counts(ds.sequences, idx)
        assert counts[idx["A"]][idx["B"]] == 1
        assert counts[idx["B"]][idx["A"]] == 1

    def test_additive_over_users(self):
        pois = {"A": (0.0, 0.0, []), "B": (0.0, 1.0, [])}
        ds = make_dataset(
            [("u", "A", 1), ("u", "B", 2), ("v", "A", 1), ("v", "B", 2)], pois
        )
        counts = build_transition_counts(ds.sequences, ds.poi_index)
        assert counts[ds.poi_index["A"]][ds.poi_index["B"]] == 2

    def test_matches_bruteforce_counter(self):
        rng = np.random.default_rng(11)
        pois = {f"p{i}": (0.0, float(i), []) for i in range(6)}
        events = [
            (f"u{i % 5}", f"p{rng.integers(6)}", 1000 + i) for i in range(100)
        ]
        ds = make_dataset(events, pois)
        counts = build_transition_counts(ds.sequences, ds.poi_index)

        expected: dict[tuple[int, int], int] = {}
        for seq in ds.sequences.values():
            for a, b in zip(seq, seq[1:]):
                key = (ds.poi_index[a.poi_id], ds.poi_index[b.poi_id])
                expected[key] = expected.get(key, 0) + 1
        flat = {(i, j): c for i, row in counts.items() for j, c in row.items()}
        assert flat == expected
        assert sum(flat.values()) == sum(len(s) - 1 for s in ds.sequences.values())


class TestGeoStats:
    def test_single_pair_zero_std_errors(self):
        coords = np.array([[0.0, 0.0], [0.0, 0.009]])
        with pytest.raises(DataError, match="kernel"):
            compute_geo_stats(coords, mode="haversine")

    def test_collinear_planar(self):
        coords = np.array([[0.0, 0.0], [3.0, 0.0], [6.0, 0.0]])
        stats = compute_geo_stats(coords, mode="planar")
        assert stats.mean == pytest.approx(4.0)
        assert stats.std == pytest.approx(math.sqrt(2.0))

    def test_permutation_invariant(self):
        rng = np.random.default_rng(5)
        coords = rng.uniform(-1, 1, size=(12, 2))
        a = compute_geo_stats(coords, mode="planar")
        b = compute_geo_stats(coords[rng.permutation(12)], mode="planar")
        assert a.mean == pytest.approx(b.mean)
        assert a.std == pytest.approx(b.std)

    def test_scale_covariant_planar(self):
        rng = np.random.default_rng(6)
        coords = rng.uniform(-1, 1, size=(9, 2))
        a = compute_geo_stats(coords, mode="planar")
        b = compute_geo_stats(2.0 * coords, mode="planar")
        assert b.mean == pytest.approx(2.0 * a.mean)
        assert b.std == pytest.approx(2.0 * a.std)

    def test_pair_cap_sampling_close(self):
        rng = np.random.default_rng(7)
        coords = rng.uniform(-1, 1, size=(40, 2))
        exact = compute_geo_stats(coords, mode="planar")
        sampled = compute_geo_stats(coords, mode="planar", pair_cap=300, seed=1)
        assert sampled.mean == pytest.approx(exact.mean, rel=0.15)
        assert sampled.std == pytest.approx(exact.std, rel=0.25)

    def test_haversine_known_value(self):
        # one degree of latitude along a meridian
        d = haversine_m(0.0, 0.0, 1.0, 0.0)
        assert d == pytest.approx(2 * math.pi * 6_371_000 / 360, rel=1e-6)


class TestInstances:
    def test_training_instances_skip_first(self, toy_dataset):
        sp = split_chronological(toy_dataset)
        insts = training_instances(sp)
        per_user = {u: len(sp.train[u]) - 1 for u in sp.train}
        assert len(insts) == sum(per_user.values())
        firsts = {u: sp.train[u][0].timestamp for u in sp.train}
        assert all(i.target_ts != firsts[i.user_id] for i in insts)

    def test_eval_instances_cross_boundary(self, toy_dataset):
        sp = split_chronological(toy_dataset)
        for segment in ("valid", "test"):
            insts = eval_instances(sp, segment)
            seg = sp.segment(segment)
            assert len(insts) == sum(len(s) for s in seg.values())
        valid = eval_instances(sp, "valid")
        first = next(i for i in valid if i.user_id == "ua")
        assert first.prev_poi_id == sp.train["ua"][-1].poi_id
        test = eval_instances(sp, "test")
        first_t = next(i for i in test if i.user_id == "ua")
        assert first_t.prev_poi_id == sp.valid["ua"][-1].poi_id
