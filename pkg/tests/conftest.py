import numpy as np
import pytest

from nextrec.data import split_chronological
from nextrec.model import Hyperparams, build_meta_index, init_parameters

from corpora import make_dataset, ring_markov_corpus


@pytest.fixture
def toy_dataset():
    """Two users (ten check-ins each) over four POIs with meta words."""
    rounds = ["pa", "pb", "pc", "pd", "pb"]
    events = []
    for k, uid in enumerate(("ua", "ub")):
        ts = 1000 + 300 * k
        for i in range(10):
            events.append((uid, rounds[(i + k) % len(rounds)], ts))
            ts += 1000
    pois = {
        "pa": (0.0, 0.0, ["food"]),
        "pb": (0.1, 0.0, ["bar", "music"]),
        "pc": (0.0, 0.2, []),
        "pd": (0.3, 0.1, ["food", "park"]),
    }
    user_meta = {"ua": ["f1", "f2"], "ub": ["f2"]}
    return make_dataset(events, pois, user_meta)


def toy_world(hp: Hyperparams, seed: int = 0):
    """A small filtered world: dataset, split, meta index, random parameters."""
    dataset = ring_markov_corpus(
        n_pois=12, n_users=8, length=20, seed=seed, words_per_poi=2, n_words=6
    )
    split = split_chronological(dataset)
    meta = build_meta_index(dataset)
    params = init_parameters(
        hp,
        dataset.user_ids(),
        dataset.poi_ids(),
        meta.user_word_ids if hp.use_meta else [],
        meta.poi_word_ids if hp.use_meta else [],
        rng=np.random.default_rng(seed + 77),
    )
    return dataset, split, meta if hp.use_meta else None, params
