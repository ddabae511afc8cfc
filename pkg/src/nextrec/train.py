"""Cross-entropy training of all model parameters by per-instance SGD.

Gradients are derived analytically through the ReLU layers, the softmax
and the interval interpolation; :func:`gradient_check` verifies them
against central finite differences.  Regularization is applied as per-step
weight decay on the tensors touched by each instance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import evaluation as evaluate_mod
from .data import Dataset, Instance, Split, training_instances
from .model import (
    Hyperparams,
    MetaIndex,
    Parameters,
    candidate_inputs,
    delta_hours,
    interval_coefficients,
    poi_input,
    relu,
    slot_of,
    user_input,
)


class DivergenceError(Exception):
    """Raised when training produces a non-finite loss."""


@dataclass(frozen=True)
class TrainInstance:
    """Dense-id training instance: context plus 1-of-Q target."""

    user: int
    prev_poi: int
    prev_ts: int
    target_ts: int
    target: int


def to_dense_instances(
    instances: list[Instance], user_index: dict[str, int], poi_index: dict[str, int]
) -> list[TrainInstance]:
    return [
        TrainInstance(
            user_index[i.user_id],
            poi_index[i.prev_poi_id],
            i.prev_ts,
            i.target_ts,
            poi_index[i.target_poi_id],
        )
        for i in instances
    ]


@dataclass
class TrainConfig:
    max_epochs: int = 50
    patience: int = 5
    seed: int = 1

    def validate(self) -> None:
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class ForwardState:
    """Everything the backward pass needs from one instance's forward pass."""

    x_q: np.ndarray
    coef0: float
    coefpi: float
    trans: np.ndarray
    z_q: np.ndarray
    slot: int | None
    x_u: np.ndarray
    z_u: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    C: np.ndarray
    s: np.ndarray
    probs: np.ndarray
    loss: float

    def relu_masks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.z_q > 0.0, self.z_u > 0.0, self.Z > 0.0


def forward_state(
    inst: TrainInstance, params: Parameters, hp: Hyperparams, meta: MetaIndex | None
) -> ForwardState:
    dt = delta_hours(inst.prev_ts, inst.target_ts)
    if hp.use_interval:
        coef0, coefpi = interval_coefficients(dt, hp.pi_hours)
        trans = coef0 * params["W0"] + coefpi * params["Wpi"] if coef0 != 0.0 else params["Wpi"]
    else:
        coef0, coefpi = 0.0, 0.0
        trans = params["W1"]
    x_q = poi_input(inst.prev_poi, params, hp, meta)
    if hp.use_timeslot:
        slot = slot_of(inst.target_ts, hp)
        bias = params["B"][slot]
    else:
        slot = None
        bias = params["b1"]
    z_q = trans @ x_q + bias

    x_u = user_input(inst.user, params, hp, meta)
    z_u = params["W2"] @ x_u + params["b2"]

    X = candidate_inputs(params, hp, meta)
    Z = X @ params["W3"].T + params["b3"]
    C = relu(Z)

    s = relu(z_u) + relu(z_q)
    y = C @ s
    lse = float(logsumexp(y))
    probs = np.exp(y - lse)
    loss = lse - float(y[inst.target])
    return ForwardState(x_q, coef0, coefpi, trans, z_q, slot, x_u, z_u, X, Z, C, s, probs, loss)


@dataclass
class GradientSet:
    """Data-term gradients, shaped like the parameters they refer to.

    ``dense`` holds full tensors (candidate-side gradients reach every POI
    row through the softmax); ``rows`` holds the few touched rows of the
    user, user-meta and slot-bias tables.
    """

    dense: dict[str, np.ndarray] = field(default_factory=dict)
    rows: dict[str, dict[int, np.ndarray]] = field(default_factory=dict)

    def lookup(self, name: str, coord: tuple[int, ...]) -> float:
        if name in self.dense:
            return float(self.dense[name][coord])
        if name in self.rows:
            row = self.rows[name].get(coord[0])
            return 0.0 if row is None else float(row[coord[1]])
        return 0.0


def gradients_from_state(
    inst: TrainInstance,
    st: ForwardState,
    params: Parameters,
    hp: Hyperparams,
    meta: MetaIndex | None,
) -> GradientSet:
    g = GradientSet()
    mask_q, mask_u, mask_c = st.relu_masks()

    d_y = st.probs.copy()
    d_y[inst.target] -= 1.0
    d_s = st.C.T @ d_y

    # Candidate path: d loss / d Z, then into W3, b3 and the blended inputs.
    d_Z = np.outer(d_y, st.s)
    d_Z[~mask_c] = 0.0
    g.dense["W3"] = d_Z.T @ st.X
    g.dense["b3"] = d_Z.sum(axis=0)
    d_X = d_Z @ params["W3"]
    if hp.use_meta:
        g.dense["Q"] = hp.alpha * d_X
        g.dense["M_poi"] = (1.0 - hp.alpha) * (meta.poi_words.T @ d_X)
    else:
        g.dense["Q"] = d_X.copy()

    # User path.
    d_zu = np.where(mask_u, d_s, 0.0)
    g.dense["W2"] = np.outer(d_zu, st.x_u)
    g.dense["b2"] = d_zu
    d_xu = params["W2"].T @ d_zu
    if hp.use_meta:
        g.rows["U"] = {inst.user: hp.beta * d_xu}
        user_row = meta.user_words[inst.user]
        g.rows["M_user"] = {
            int(w): (1.0 - hp.beta) * weight * d_xu
            for w, weight in zip(user_row.indices, user_row.data)
        }
    else:
        g.rows["U"] = {inst.user: d_xu}

    # Previous-POI path.
    d_zq = np.where(mask_q, d_s, 0.0)
    d_trans = np.outer(d_zq, st.x_q)
    if hp.use_interval:
        g.dense["W0"] = st.coef0 * d_trans
        g.dense["Wpi"] = st.coefpi * d_trans
    else:
        g.dense["W1"] = d_trans
    if hp.use_timeslot:
        g.rows["B"] = {st.slot: d_zq}
    else:
        g.dense["b1"] = d_zq
    d_xq = st.trans.T @ d_zq
    if hp.use_meta:
        g.dense["Q"][inst.prev_poi] += hp.alpha * d_xq
        prev_row = meta.poi_words[inst.prev_poi]
        for w, weight in zip(prev_row.indices, prev_row.data):
            g.dense["M_poi"][int(w)] += (1.0 - hp.alpha) * weight * d_xq
    else:
        g.dense["Q"][inst.prev_poi] += d_xq
    return g


def instance_data_loss(
    inst: TrainInstance, params: Parameters, hp: Hyperparams, meta: MetaIndex | None
) -> float:
    """Negative log probability of the target POI (no regularizer)."""
    return forward_state(inst, params, hp, meta).loss


def instance_loss(
    inst: TrainInstance, params: Parameters, hp: Hyperparams, meta: MetaIndex | None
) -> float:
    """Full objective value: data term plus the squared-norm regularizer."""
    return instance_data_loss(inst, params, hp, meta) + hp.lam * params.squared_norm()


def instance_gradients(
    inst: TrainInstance, params: Parameters, hp: Hyperparams, meta: MetaIndex | None
) -> GradientSet:
    st = forward_state(inst, params, hp, meta)
    return gradients_from_state(inst, st, params, hp, meta)


def sgd_step(params: Parameters, grads: GradientSet, gamma: float, lam: float) -> None:
    """In-place update: theta <- theta - gamma * (g + 2 * lam * theta).

    Weight decay is applied only to parameters touched by the instance
    (every tensor in the gradient set; for row maps, only the stored rows).
    """
    for name, grad in grads.dense.items():
        t = params[name]
        t -= gamma * (grad + 2.0 * lam * t)
    for name, rowmap in grads.rows.items():
        t = params[name]
        for r, grad in rowmap.items():
            t[r] -= gamma * (grad + 2.0 * lam * t[r])


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    valid_map: float
    seconds: float


@dataclass
class TrainResult:
    params: Parameters
    history: list[EpochStats]
    best_epoch: int


def train(
    split: Split,
    dataset: Dataset,
    params: Parameters,
    hp: Hyperparams,
    cfg: TrainConfig,
    meta: MetaIndex | None,
) -> TrainResult:
    """SGD over shuffled training instances with MAP-based early stopping.

    After each epoch the validation segment is scored; the parameters with
    the best validation MAP so far are snapshotted and returned.  Training
    stops after ``patience`` epochs without improvement.
    """
    cfg.validate()
    instances = to_dense_instances(training_instances(split), dataset.user_index, dataset.poi_index)
    if not instances:
        raise ValueError("no training instances")

    best_map = -1.0
    best_epoch = 0
    best_params = params.copy()
    history: list[EpochStats] = []
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        started = time.perf_counter()
        rng = np.random.default_rng((cfg.seed, 100, epoch))
        order = rng.permutation(len(instances))
        total = 0.0
        for idx in order:
            inst = instances[idx]
            st = forward_state(inst, params, hp, meta)
            if not np.isfinite(st.loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, instance {idx}: {st.loss!r}"
                )
            total += st.loss
            grads = gradients_from_state(inst, st, params, hp, meta)
            sgd_step(params, grads, hp.gamma, hp.lam)
        if not params.all_finite():
            raise DivergenceError(f"non-finite parameter after epoch {epoch}")
        report = evaluate_mod.evaluate(params, hp, split, dataset, meta, "valid")
        elapsed = time.perf_counter() - started
        history.append(EpochStats(epoch, total / len(instances), report.map, elapsed))
        if report.map > best_map:
            best_map = report.map
            best_epoch = epoch
            best_params = params.copy()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return TrainResult(params=best_params, history=history, best_epoch=best_epoch)


def gradient_check(
    params: Parameters,
    hp: Hyperparams,
    inst: TrainInstance,
    meta: MetaIndex | None,
    eps: float = 1e-4,
    samples_per_tensor: int = 200,
    seed: int = 0,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Matrices and embedding tables are spot-checked on a seeded coordinate
    sample; bias vectors are checked in full.  Coordinates whose
    perturbation flips any ReLU activation between the two evaluation
    points sit on a kink and are excluded.
    """
    analytic = instance_gradients(inst, params, hp, meta)
    rng = np.random.default_rng((seed, 11))
    worst = 0.0
    for name, tensor in params.tensors.items():
        if tensor.size == 0:
            continue
        flat = tensor.reshape(-1)
        if tensor.ndim == 1 or tensor.size <= samples_per_tensor:
            picks = np.arange(tensor.size)
        else:
            picks = rng.choice(tensor.size, size=samples_per_tensor, replace=False)
        for k in picks:
            orig = flat[k]
            flat[k] = orig + eps
            st_plus = forward_state(inst, params, hp, meta)
            flat[k] = orig - eps
            st_minus = forward_state(inst, params, hp, meta)
            flat[k] = orig
            masks_plus = st_plus.relu_masks()
            masks_minus = st_minus.relu_masks()
            if not all(np.array_equal(a, b) for a, b in zip(masks_plus, masks_minus)):
                continue
            numeric = (st_plus.loss - st_minus.loss) / (2.0 * eps)
            coord = tuple(int(c) for c in np.unravel_index(k, tensor.shape))
            value = analytic.lookup(name, coord)
            err = abs(value - numeric) / max(abs(value), abs(numeric), 1e-3)
            worst = max(worst, err)
    return worst
