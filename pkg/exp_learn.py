import sys, time
sys.path.insert(0, "tests")
import numpy as np
from corpora import ring_markov_corpus, popularity_acc1
from nextrec.data import split_chronological, build_transition_graph, eval_instances
from nextrec.model import Hyperparams, init_parameters
from nextrec.pretrain import WalkConfig, generate_walks, init_user_embeddings
from nextrec.skipgram import SkipGramConfig, train_skipgram
from nextrec.train import TrainConfig, train
from nextrec.evaluation import evaluate


def run(dominance, gamma, seed, dim=16, max_epochs=50, patience=50, pretrained=True,
        sg_epochs=5, walks_per_node=50, walk_length=20):
    t0 = time.perf_counter()
    ds = ring_markov_corpus(n_pois=30, n_users=50, length=45, dominance=dominance, seed=seed)
    split = split_chronological(ds)
    hp = Hyperparams(dim=dim, gamma=gamma, use_meta=True)
    if pretrained:
        graph = build_transition_graph(ds, split, use_geo_kernel=False)
        walks = generate_walks(graph, WalkConfig(rho=0.0, walks_per_node=walks_per_node,
                                                 walk_length=walk_length, seed=seed))
        q, _ = train_skipgram(walks, ds.n_pois, SkipGramConfig(dim=dim, epochs=sg_epochs, seed=seed))
        u = init_user_embeddings(split.train, ds.user_index, ds.poi_index, q)
        t_pre = time.perf_counter() - t0
    else:
        q = u = None
        t_pre = 0.0
    params = init_parameters(hp, ds.user_ids(), ds.poi_ids(), [], [],
                             np.random.default_rng((seed, 3)), q, u)
    result = train(split, ds, params, hp, TrainConfig(max_epochs=max_epochs, patience=patience, seed=seed), None if not hp.use_meta else __import__("nextrec.model", fromlist=["build_meta_index"]).build_meta_index(ds))
    rep = evaluate(result.params, hp, split, ds, None if not hp.use_meta else __import__("nextrec.model", fromlist=["build_meta_index"]).build_meta_index(ds), "test")
    elapsed = time.perf_counter() - t0
    pop = popularity_acc1(split, eval_instances(split, "test"))
    print(f"dom={dominance} g={gamma} seed={seed} pre={pretrained} "
          f"acc1={rep.acc1:.3f} map={rep.map:.3f} pop={pop:.3f} "
          f"epochs={len(result.history)} best={result.best_epoch} "
          f"t_pre={t_pre:.1f}s total={elapsed:.1f}s")
    return rep, result


if __name__ == "__main__":
    for g in (0.02, 0.05):
        run(1.0, g, seed=0, max_epochs=20, patience=20)
