"""Skip-gram with hierarchical softmax, trained on random-walk token lists.

The output distribution is factorized over a binary Huffman tree built from
token frequencies: predicting a context token costs one logistic decision
per internal node on its root-to-leaf path.  Updates are plain SGD with a
linearly decaying learning rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit


@dataclass
class SkipGramConfig:
    dim: int = 60
    window: int = 10
    epochs: int = 5
    learning_rate: float = 0.025
    min_learning_rate: float = 1e-4
    seed: int = 1

    def validate(self) -> None:
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


class HuffmanTree:
    """Binary Huffman coding of a frequency table.

    ``points[w]`` lists the internal-node ids on the path from the root to
    leaf ``w`` (root first) and ``codes[w]`` the branch taken at each of
    them (0/1).  A vocabulary of one item has an empty path.
    """

    def __init__(self, freqs: np.ndarray):
        freqs = np.asarray(freqs, dtype=np.int64)
        if np.any(freqs <= 0):
            raise ValueError("every vocabulary item needs a positive frequency")
        v = len(freqs)
        self.n_leaves = v
        self.n_internal = max(v - 1, 0)
        if v == 1:
            self.points = [np.zeros(0, dtype=np.int64)]
            self.codes = [np.zeros(0, dtype=np.float64)]
            return

        # Merge the two lightest nodes repeatedly.  Leaves are pre-sorted by
        # ascending frequency (ties by id) so two cursors suffice: pos1 walks
        # the leaves, pos2 the internal nodes, which are created in
        # nondecreasing weight order.
        order = np.lexsort((np.arange(v), freqs))
        count = np.empty(2 * v - 1, dtype=np.int64)
        count[:v] = freqs[order]
        count[v:] = np.iinfo(np.int64).max
        parent = np.zeros(2 * v - 1, dtype=np.int64)
        binary = np.zeros(2 * v - 1, dtype=np.int8)
        pos1, pos2 = 0, v
        for a in range(v - 1):
            picks = []
            for _ in range(2):
                if pos1 < v and (pos2 >= v + a or count[pos1] <= count[pos2]):
                    picks.append(pos1)
                    pos1 += 1
                else:
                    picks.append(pos2)
                    pos2 += 1
            count[v + a] = count[picks[0]] + count[picks[1]]
            parent[picks[0]] = v + a
            parent[picks[1]] = v + a
            binary[picks[1]] = 1

        root = 2 * v - 2
        self.points = [np.zeros(0, dtype=np.int64)] * v
        self.codes = [np.zeros(0, dtype=np.float64)] * v
        for slot in range(v):
            word = int(order[slot])
            path_codes = []
            path_nodes = []
            node = slot
            while node != root:
                path_codes.append(binary[node])
                node = parent[node]
                path_nodes.append(node - v)  # internal-node id
            self.points[word] = np.asarray(path_nodes[::-1], dtype=np.int64)
            self.codes[word] = np.asarray(path_codes[::-1], dtype=np.float64)

    def leaf_probability(self, w: int, center_vec: np.ndarray, node_vecs: np.ndarray) -> float:
        """Probability of leaf ``w`` given an input vector; sums to 1 over leaves."""
        pts, cds = self.points[w], self.codes[w]
        if len(pts) == 0:
            return 1.0
        x = node_vecs[pts] @ center_vec
        return float(np.prod(expit((1.0 - 2.0 * cds) * x)))


def _pair_count(walks: list[list[int]], window: int) -> int:
    total = 0
    for walk in walks:
        m = len(walk)
        for pos in range(m):
            total += min(pos, window) + min(m - 1 - pos, window)
    return total


def train_skipgram(
    walks: list[list[int]],
    n_vocab: int,
    cfg: SkipGramConfig,
) -> tuple[np.ndarray, list[float]]:
    """Train skip-gram embeddings over the walk corpus.

    Returns the input-side embedding table (one row per vocabulary item)
    and the per-epoch average negative log path probability.  Every
    vocabulary item must occur in the walks (walk generation starts walks
    at every node, so this holds for any corpus it produced).
    """
    cfg.validate()
    if not walks:
        raise ValueError("empty walk corpus")
    freqs = np.zeros(n_vocab, dtype=np.int64)
    for walk in walks:
        for tok in walk:
            freqs[tok] += 1
    if np.any(freqs == 0):
        missing = int(np.argmax(freqs == 0))
        raise ValueError(f"vocabulary item {missing} never occurs in the walks")

    tree = HuffmanTree(freqs)
    rng = np.random.default_rng((cfg.seed, 0))
    syn0 = rng.uniform(-0.5 / cfg.dim, 0.5 / cfg.dim, size=(n_vocab, cfg.dim))
    syn1 = np.zeros((max(tree.n_internal, 1), cfg.dim))

    pairs_per_epoch = _pair_count(walks, cfg.window)
    total_pairs = pairs_per_epoch * cfg.epochs
    if total_pairs == 0:
        return syn0, []

    losses: list[float] = []
    done = 0
    for _ in range(cfg.epochs):
        epoch_loss = 0.0
        for walk in walks:
            m = len(walk)
            for pos in range(m):
                lo = max(0, pos - cfg.window)
                hi = min(m, pos + cfg.window + 1)
                contexts = walk[lo:pos] + walk[pos + 1 : hi]
                if not contexts:
                    continue
                lr = max(
                    cfg.min_learning_rate,
                    cfg.learning_rate * (1.0 - done / total_pairs),
                )
                done += len(contexts)
                pts = np.concatenate([tree.points[c] for c in contexts])
                if len(pts) == 0:
                    continue
                cds = np.concatenate([tree.codes[c] for c in contexts])
                v = syn0[walk[pos]]
                x = syn1[pts] @ v
                epoch_loss += float(np.sum(np.logaddexp(0.0, -(1.0 - 2.0 * cds) * x)))
                g = (1.0 - cds - expit(x)) * lr
                dv = g @ syn1[pts]
                np.add.at(syn1, pts, g[:, None] * v[None, :])
                syn0[walk[pos]] += dv
        losses.append(epoch_loss / pairs_per_epoch)
    return syn0, losses
