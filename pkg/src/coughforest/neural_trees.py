"""Soft (neural) decision trees and forests.

A tree of depth ``D`` has ``2**D - 1`` decision nodes stored in heap order
(children of node ``i`` are ``2i + 1`` and ``2i + 2``) and ``2**D`` leaves.
Node ``n`` sends a sample left with probability
``d_n = sigmoid(w_n . x[mask] + b_n)`` and right with ``1 - d_n``; the
probability of reaching a leaf is the product of branch probabilities on
its path. The tree outputs ``sum_l mu_l * softmax(leaf_logits)_l`` and a
forest averages its trees.

Training minimizes the negative log-likelihood of the forest output with
Adam, all parameters updated jointly.
"""

from dataclasses import dataclass
import json
import math

import numpy as np

from .errors import ConfigurationError, InvalidSignalError, NotFittedError

N_CLASSES = 2
LOG_FLOOR = 1e-12
INIT_SCALE = 0.05
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
MODEL_FORMAT = "coughforest.neural_forest"
MODEL_VERSION = 1


@dataclass(frozen=True)
class HyperParams:
    num_trees: int = 10
    depth: int = 10
    features_rate: float = 1.0
    learning_rate: float = 0.01
    batch_size: int = 256
    num_epochs: int = 1

    def __post_init__(self):
        for name in ("num_trees", "depth", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if int(self.num_epochs) < 0:
            raise ConfigurationError("num_epochs must be >= 0")
        if not 0.0 < float(self.features_rate) <= 1.0:
            raise ConfigurationError("features_rate must lie in (0, 1]")
        if not float(self.learning_rate) > 0:
            raise ConfigurationError("learning_rate must be positive")

    def as_dict(self):
        return {"num_trees": int(self.num_trees), "depth": int(self.depth),
                "features_rate": float(self.features_rate),
                "learning_rate": float(self.learning_rate),
                "batch_size": int(self.batch_size), "num_epochs": int(self.num_epochs)}


DEFAULT_HYPERPARAMS = HyperParams(10, 10, 1.0, 0.01, 256, 1)


@dataclass(eq=False)
class TreeParams:
    depth: int
    feature_mask: np.ndarray  # sorted indices into the input features
    weights: np.ndarray  # (n_internal, len(feature_mask))
    bias: np.ndarray  # (n_internal,)
    leaf_logits: np.ndarray  # (n_leaves, n_classes)

    @property
    def n_internal(self):
        return 2 ** self.depth - 1

    @property
    def n_leaves(self):
        return 2 ** self.depth

    def leaf_distributions(self):
        return softmax(self.leaf_logits)

    def copy(self):
        return TreeParams(self.depth, self.feature_mask.copy(), self.weights.copy(),
                          self.bias.copy(), self.leaf_logits.copy())


@dataclass(eq=False)
class ForestModel:
    trees: list
    n_features: int
    n_classes: int = N_CLASSES

    def __post_init__(self):
        for t in self.trees:
            if t.feature_mask.size and t.feature_mask.max() >= self.n_features:
                raise ConfigurationError("feature mask exceeds input dimensionality")
            if t.leaf_logits.shape[1] != self.n_classes:
                raise ConfigurationError("leaf logits have the wrong class count")

    def copy(self):
        return ForestModel([t.copy() for t in self.trees], self.n_features, self.n_classes)


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _mask_size(n_features, features_rate):
    m = math.ceil(features_rate * n_features - 1e-9)
    return min(m, n_features)


def init_tree(depth, n_features, features_rate, seed):
    """Random feature subset, small uniform decision weights, uniform leaves."""
    if depth < 1:
        raise ConfigurationError("depth must be >= 1")
    if not 0.0 < features_rate <= 1.0:
        raise ConfigurationError("features_rate must lie in (0, 1]")
    m = _mask_size(n_features, features_rate)
    if m < 1:
        raise ConfigurationError(
            f"features_rate {features_rate} selects no features out of {n_features}"
        )
    rng = np.random.default_rng(seed)
    mask = np.sort(rng.choice(n_features, size=m, replace=False))
    n_internal = 2 ** depth - 1
    weights = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(n_internal, m))
    return TreeParams(int(depth), mask.astype(np.int64), weights,
                      np.zeros(n_internal), np.zeros((2 ** depth, N_CLASSES)))


def tree_seeds(seed, num_trees):
    """Per-tree seeds; tree ``h`` gets the same seed whatever ``num_trees`` is."""
    root = np.random.SeedSequence(int(seed))
    return [int(child.generate_state(1, dtype=np.uint64)[0])
            for child in root.spawn(num_trees)]


def init_forest(n_features, hp, seed):
    return ForestModel([init_tree(hp.depth, n_features, hp.features_rate, s)
                        for s in tree_seeds(seed, hp.num_trees)], int(n_features))


def _check_input(X, n_features):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != n_features:
        raise ConfigurationError(f"expected {n_features} features, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidSignalError("input contains non-finite values")
    return X


def routing(tree, X):
    """Decision probabilities ``d`` (B, n_internal) and leaf reach ``mu`` per level.

    ``levels[L]`` has shape (B, 2**L); ``levels[depth]`` is the leaf routing.
    """
    Xm = X[:, tree.feature_mask]
    d = sigmoid(Xm @ tree.weights.T + tree.bias)
    mu = np.ones((X.shape[0], 1))
    levels = [mu]
    for level in range(tree.depth):
        lo = 2 ** level - 1
        dl = d[:, lo:2 * lo + 1]
        mu = np.stack([mu * dl, mu * (1.0 - dl)], axis=2).reshape(X.shape[0], -1)
        levels.append(mu)
    return Xm, d, levels


def leaf_routing(tree, x):
    """Leaf reach probabilities ``mu`` for one sample or a batch."""
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return routing(tree, X)[2][-1]


def tree_forward(tree, X):
    """Class distribution(s) of a single tree; ``X`` may be one row or a batch."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if not np.all(np.isfinite(X)):
        raise InvalidSignalError("input contains non-finite values")
    mu = routing(tree, X)[2][-1]
    out = mu @ tree.leaf_distributions()
    return out[0] if single else out


def _mean_over_trees(per_tree):
    # sorting along the tree axis makes the sum independent of tree order
    return np.sort(np.stack(per_tree), axis=0).sum(axis=0) / len(per_tree)


def forest_forward(model, X):
    """Average of the trees' class distributions."""
    if not model.trees:
        raise NotFittedError("forest has no trees")
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X = _check_input(X, model.n_features)
    out = _mean_over_trees([tree_forward(t, X) for t in model.trees])
    return out[0] if single else out


def predict_proba(model, X):
    """Positive-class probability per row."""
    return forest_forward(model, np.atleast_2d(np.asarray(X, dtype=np.float64)))[:, 1]


@dataclass(eq=False)
class TreeGrad:
    weights: np.ndarray
    bias: np.ndarray
    leaf_logits: np.ndarray


def _tree_backward(tree, Xm, d, levels, g_out):
    """Gradients of a scalar w.r.t. tree parameters given ``g_out = dL/dP_tree``."""
    pi = tree.leaf_distributions()
    mu_leaf = levels[-1]
    g_pi = mu_leaf.T @ g_out
    g_logits = pi * (g_pi - np.sum(g_pi * pi, axis=1, keepdims=True))

    g_mu = g_out @ pi.T
    g_d = np.empty_like(d)
    for level in range(tree.depth - 1, -1, -1):
        lo = 2 ** level - 1
        dl = d[:, lo:2 * lo + 1]
        g_left = g_mu[:, 0::2]
        g_right = g_mu[:, 1::2]
        g_d[:, lo:2 * lo + 1] = levels[level] * (g_left - g_right)
        g_mu = g_left * dl + g_right * (1.0 - dl)
    g_z = g_d * d * (1.0 - d)
    return TreeGrad(g_z.T @ Xm, g_z.sum(axis=0), g_logits)


def loss_and_gradients(model, X, y):
    """Mean NLL of the forest output and its gradient for every tree."""
    X = _check_input(X, model.n_features)
    y = np.asarray(y).astype(np.int64)
    if X.shape[0] == 0 or y.shape != (X.shape[0],):
        raise ConfigurationError("batch must be nonempty and aligned with labels")
    if not model.trees:
        raise NotFittedError("forest has no trees")
    k, B = len(model.trees), X.shape[0]
    cache = []
    per_tree = []
    for tree in model.trees:
        Xm, d, levels = routing(tree, X)
        cache.append((Xm, d, levels))
        per_tree.append(levels[-1] @ tree.leaf_distributions())
    p_forest = _mean_over_trees(per_tree)
    p_true = p_forest[np.arange(B), y]
    loss = float(-np.mean(np.log(np.maximum(p_true, LOG_FLOOR))))

    g_forest = np.zeros_like(p_forest)
    ok = p_true > LOG_FLOOR
    g_forest[np.arange(B)[ok], y[ok]] = -1.0 / (B * p_true[ok])
    g_tree = g_forest / k
    grads = [_tree_backward(t, *c, g_tree) for t, c in zip(model.trees, cache)]
    return loss, grads


class _Adam:
    def __init__(self, params, lr):
        self.lr = lr
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - ADAM_BETA1 ** self.t
        c2 = 1.0 - ADAM_BETA2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


def _flat_params(model):
    out = []
    for t in model.trees:
        out.extend([t.weights, t.bias, t.leaf_logits])
    return out


def _flat_grads(grads):
    out = []
    for g in grads:
        out.extend([g.weights, g.bias, g.leaf_logits])
    return out


def train(model, X, y, hp, seed=0):
    """Minibatch Adam on the forest NLL. Returns ``(new_model, epoch_losses)``.

    The input model is left untouched. Each epoch reshuffles the rows and
    records the sample-weighted mean batch loss.
    """
    X = _check_input(X, model.n_features)
    y = np.asarray(y).astype(np.int64)
    if y.shape != (X.shape[0],):
        raise ConfigurationError("X and y do not align")
    model = model.copy()
    history = []
    if hp.num_epochs == 0 or X.shape[0] == 0:
        return model, history
    rng = np.random.default_rng(seed)
    params = _flat_params(model)
    opt = _Adam(params, hp.learning_rate)
    n = X.shape[0]
    for _ in range(hp.num_epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, hp.batch_size):
            batch = order[start:start + hp.batch_size]
            loss, grads = loss_and_gradients(model, X[batch], y[batch])
            opt.step(params, _flat_grads(grads))
            total += loss * batch.size
        history.append(total / n)
    return model, history


def fit_forest(X, y, hp, seed=0):
    """Initialize and train a forest in one call; ``(model, history)``."""
    X = np.asarray(X, dtype=np.float64)
    init_seed, train_seed = tree_seeds(seed, 2)
    model = init_forest(X.shape[1], hp, init_seed)
    return train(model, X, y, hp, train_seed)


# --------------------------------------------------------------------------
# serialization


def model_to_dict(model):
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "n_features": int(model.n_features),
        "n_classes": int(model.n_classes),
        "trees": [
            {
                "depth": int(t.depth),
                "feature_mask": t.feature_mask.tolist(),
                "weights": t.weights.tolist(),
                "bias": t.bias.tolist(),
                "leaf_logits": t.leaf_logits.tolist(),
            }
            for t in model.trees
        ],
    }


def model_from_dict(d):
    if d.get("format") != MODEL_FORMAT:
        raise ConfigurationError("not a neural forest model")
    if d.get("version") != MODEL_VERSION:
        raise ConfigurationError(f"unsupported model version {d.get('version')}")
    trees = []
    for t in d["trees"]:
        depth = int(t["depth"])
        mask = np.asarray(t["feature_mask"], dtype=np.int64)
        w = np.asarray(t["weights"], dtype=np.float64).reshape(2 ** depth - 1, mask.size)
        trees.append(TreeParams(depth, mask, w, np.asarray(t["bias"], dtype=np.float64),
                                np.asarray(t["leaf_logits"], dtype=np.float64)))
    return ForestModel(trees, int(d["n_features"]), int(d["n_classes"]))


def save_model(model, path):
    """Write JSON (``.json``) or compressed numpy (``.npz``); float64 round-trips exactly."""
    path = str(path)
    if path.endswith(".npz"):
        arrays = {"meta": np.frombuffer(json.dumps({
            "format": MODEL_FORMAT, "version": MODEL_VERSION,
            "n_features": int(model.n_features), "n_classes": int(model.n_classes),
            "depths": [int(t.depth) for t in model.trees]}).encode(), dtype=np.uint8)}
        for h, t in enumerate(model.trees):
            arrays[f"t{h}_mask"] = t.feature_mask
            arrays[f"t{h}_weights"] = t.weights
            arrays[f"t{h}_bias"] = t.bias
            arrays[f"t{h}_leaf_logits"] = t.leaf_logits
        np.savez_compressed(path, **arrays)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(model_to_dict(model), fh)


def load_model(path):
    path = str(path)
    if path.endswith(".npz"):
        with np.load(path) as z:
            meta = json.loads(z["meta"].tobytes().decode())
            if meta.get("format") != MODEL_FORMAT or meta.get("version") != MODEL_VERSION:
                raise ConfigurationError("not a supported neural forest model")
            trees = [TreeParams(depth, z[f"t{h}_mask"], z[f"t{h}_weights"],
                                z[f"t{h}_bias"], z[f"t{h}_leaf_logits"])
                     for h, depth in enumerate(meta["depths"])]
        return ForestModel(trees, meta["n_features"], meta["n_classes"])
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
