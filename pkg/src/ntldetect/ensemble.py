"""Soft-voting classifier over latent consumption features.

Three members trained from scratch on the same data:

* a random forest of class-weighted Gini trees grown on bootstrap resamples
  with a sqrt-sized random feature subset per split,
* logistic-loss gradient boosting over depth-1 stumps with second-order
  leaf weights and per-round row subsampling,
* an L2-regularized logistic regression fitted by damped Newton iterations.

Prediction averages the members' class-probability rows with the voting
weights and takes the argmax (ties to class 0).  A "stacked" mode instead
trains the logistic regression as a meta learner on out-of-fold
probabilities of the two tree members.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DecisionTree",
    "ForestConfig",
    "ForestModel",
    "GbtConfig",
    "BoostedStumpsModel",
    "LogisticConfig",
    "LogisticModel",
    "EnsembleConfig",
    "EnsembleModel",
    "train_random_forest",
    "train_gbt_stumps",
    "train_logistic_regression",
    "ensemble_fit",
    "ensemble_predict_proba",
    "ensemble_predict",
    "grid_search_cv",
    "stratified_folds",
    "balanced_class_weights",
    "save_ensemble",
    "load_ensemble",
]

ENSEMBLE_SCHEMA_VERSION = 1


def balanced_class_weights(y: np.ndarray) -> np.ndarray:
    """Per-class weight n_samples / (n_classes * class count)."""
    y = np.asarray(y, dtype=np.int64)
    counts = np.bincount(y, minlength=2)
    if (counts == 0).any():
        raise ValueError("both classes must be present")
    return len(y) / (2.0 * counts)


def _weighted_gini(w1: np.ndarray, w_total: np.ndarray) -> np.ndarray:
    """Gini impurity given class-1 weight mass and total mass."""
    with np.errstate(invalid="ignore", divide="ignore"):
        p1 = np.where(w_total > 0, w1 / w_total, 0.0)
    return 1.0 - p1**2 - (1.0 - p1) ** 2


@dataclass
class _Node:
    feature: int = -1
    threshold: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None
    proba: np.ndarray | None = None  # set on leaves

    def is_leaf(self) -> bool:
        return self.proba is not None


class DecisionTree:
    """Binary classification tree, weighted Gini splits at value midpoints.

    ``max_features`` bounds how many randomly ordered features are examined
    per split; if none of them yields a valid split the search continues
    down the permutation, so a consistent dataset can always be driven to
    purity when ``min_samples_leaf`` is 1.
    """

    def __init__(self, max_features: int | None = None, min_samples_leaf: int = 1,
                 max_depth: int | None = None):
        self.max_features = max_features
        self.min_samples_leaf = min_samples_leaf
        self.max_depth = max_depth
        self.root: _Node | None = None

    def fit(self, X, y, sample_weight, rng: np.random.Generator):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        w = np.asarray(sample_weight, dtype=np.float64)
        self.root = self._grow(X, y, w, np.arange(len(y)), rng, depth=0)
        return self

    def _leaf(self, y, w, idx) -> _Node:
        mass = np.array([w[idx][y[idx] == 0].sum(), w[idx][y[idx] == 1].sum()])
        total = mass.sum()
        proba = mass / total if total > 0 else np.array([0.5, 0.5])
        return _Node(proba=proba)

    def _best_split_on_feature(self, values, y, w, idx):
        """(score, threshold) minimizing weighted child Gini, or None."""
        order = np.argsort(values[idx], kind="stable")
        sorted_idx = idx[order]
        v = values[sorted_idx]
        cls1 = (y[sorted_idx] == 1).astype(np.float64) * w[sorted_idx]
        mass = w[sorted_idx]
        cum1 = np.cumsum(cls1)
        cum_mass = np.cumsum(mass)
        total1 = cum1[-1]
        total_mass = cum_mass[-1]

        # Split after position i (left = first i+1 samples); only between
        # distinct consecutive values, and both sides >= min_samples_leaf.
        n = len(v)
        cut = np.flatnonzero(v[:-1] < v[1:])
        if cut.size == 0:
            return None
        counts_left = cut + 1
        valid = (counts_left >= self.min_samples_leaf) & (n - counts_left >= self.min_samples_leaf)
        cut = cut[valid]
        if cut.size == 0:
            return None
        left1, left_mass = cum1[cut], cum_mass[cut]
        right1, right_mass = total1 - left1, total_mass - left_mass
        score = (
            left_mass * _weighted_gini(left1, left_mass)
            + right_mass * _weighted_gini(right1, right_mass)
        ) / total_mass
        best = int(np.argmin(score))
        threshold = (v[cut[best]] + v[cut[best] + 1]) / 2.0
        return float(score[best]), threshold

    def _grow(self, X, y, w, idx, rng, depth) -> _Node:
        node_y = y[idx]
        if (
            len(idx) < 2 * self.min_samples_leaf
            or (node_y == node_y[0]).all()
            or (self.max_depth is not None and depth >= self.max_depth)
        ):
            return self._leaf(y, w, idx)

        d = X.shape[1]
        budget = self.max_features if self.max_features is not None else d
        order = rng.permutation(d)
        best = None  # (score, feature, threshold)
        examined = 0
        for f in order:
            found = self._best_split_on_feature(X[:, f], y, w, idx)
            examined += 1
            if found is not None:
                score, threshold = found
                if best is None or score < best[0] - 1e-15:
                    best = (score, int(f), threshold)
            # Stop once the budget is met and some valid split exists.
            if examined >= budget and best is not None:
                break
        if best is None:
            return self._leaf(y, w, idx)

        _, feature, threshold = best
        mask = X[idx, feature] <= threshold
        node = _Node(feature=feature, threshold=threshold)
        node.left = self._grow(X, y, w, idx[mask], rng, depth + 1)
        node.right = self._grow(X, y, w, idx[~mask], rng, depth + 1)
        return node

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.empty((len(X), 2))
        for i, row in enumerate(X):
            node = self.root
            while not node.is_leaf():
                node = node.left if row[node.feature] <= node.threshold else node.right
            out[i] = node.proba
        return out

    def to_dict(self) -> dict:
        def pack(node):
            if node.is_leaf():
                return {"proba": node.proba.tolist()}
            return {
                "feature": node.feature,
                "threshold": node.threshold,
                "left": pack(node.left),
                "right": pack(node.right),
            }

        return pack(self.root)

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        def unpack(spec):
            if "proba" in spec:
                return _Node(proba=np.asarray(spec["proba"], float))
            node = _Node(feature=spec["feature"], threshold=spec["threshold"])
            node.left = unpack(spec["left"])
            node.right = unpack(spec["right"])
            return node

        tree = cls()
        tree.root = unpack(d)
        return tree


@dataclass
class ForestConfig:
    n_estimators: int = 300
    max_features: str = "sqrt"
    criterion: str = "gini"
    min_samples_leaf: int = 5
    class_weight: str = "balanced"

    def to_dict(self) -> dict:
        return {
            "n_estimators": self.n_estimators,
            "max_features": self.max_features,
            "criterion": self.criterion,
            "min_samples_leaf": self.min_samples_leaf,
            "class_weight": self.class_weight,
        }


@dataclass
class ForestModel:
    trees: list[DecisionTree]
    tree_seeds: list[int]
    config: ForestConfig
    bootstrap_indices: list[np.ndarray] = field(default_factory=list)

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if not self.trees:
            return np.full((len(X), 2), 0.5)
        acc = np.zeros((len(X), 2))
        for tree in self.trees:
            acc += tree.predict_proba(X)
        return acc / len(self.trees)

    def predict(self, X) -> np.ndarray:
        return _argmax_class(self.predict_proba(X))


def _resolve_max_features(rule: str, d: int) -> int | None:
    if rule == "sqrt":
        return max(1, int(np.floor(np.sqrt(d))))
    if rule == "all":
        return None
    raise ValueError(f"unknown max_features rule {rule!r}")


def train_random_forest(
    X, y, config: ForestConfig | None = None, seed: int = 0,
    bootstrap_indices: list[np.ndarray] | None = None,
) -> ForestModel:
    """Grow the forest: each tree fits a bootstrap resample with balanced
    class weights computed on the full training labels.

    ``bootstrap_indices`` overrides the seeded resamples (used to verify
    that training is row-order invariant once resamples are pinned).
    """
    if config is None:
        config = ForestConfig()
    if config.criterion != "gini":
        raise ValueError("only the gini criterion is supported")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if config.n_estimators > 0:
        class_w = balanced_class_weights(y) if config.class_weight == "balanced" else np.ones(2)
    sample_w = None if config.n_estimators == 0 else class_w[y]
    n, d = X.shape
    max_features = _resolve_max_features(config.max_features, d)

    root_rng = np.random.default_rng(seed)
    tree_seeds = [int(s) for s in root_rng.integers(0, 2**63 - 1, size=config.n_estimators)]
    trees: list[DecisionTree] = []
    used_indices: list[np.ndarray] = []
    for t, tree_seed in enumerate(tree_seeds):
        rng = np.random.default_rng(tree_seed)
        if bootstrap_indices is not None:
            idx = np.asarray(bootstrap_indices[t], dtype=np.int64)
            rng.integers(0, n, size=n)  # keep the split-rng stream aligned
        else:
            idx = rng.integers(0, n, size=n)
        used_indices.append(idx)
        tree = DecisionTree(
            max_features=max_features,
            min_samples_leaf=config.min_samples_leaf,
        )
        tree.fit(X[idx], y[idx], sample_w[idx], rng)
        trees.append(tree)
    return ForestModel(trees=trees, tree_seeds=tree_seeds, config=config,
                       bootstrap_indices=used_indices)


@dataclass
class GbtConfig:
    objective: str = "binary:logistic"
    learning_rate: float = 0.03
    n_estimators: int = 500
    max_depth: int = 1
    subsample: float = 0.4
    reg_lambda: float = 1.0

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "learning_rate": self.learning_rate,
            "n_estimators": self.n_estimators,
            "max_depth": self.max_depth,
            "subsample": self.subsample,
        }


@dataclass
class Stump:
    """Depth-1 regression tree; a non-split stump has feature -1."""

    feature: int
    threshold: float
    left_value: float
    right_value: float

    def predict(self, X) -> np.ndarray:
        if self.feature < 0:
            return np.full(len(X), self.left_value)
        return np.where(X[:, self.feature] <= self.threshold, self.left_value, self.right_value)


@dataclass
class BoostedStumpsModel:
    stumps: list[Stump]
    base_score: float  # log-odds of the class-1 prior
    config: GbtConfig
    train_log_loss: list[float] = field(default_factory=list)
    subsample_indices: list[np.ndarray] = field(default_factory=list)

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        raw = np.full(len(X), self.base_score)
        for stump in self.stumps:
            raw += self.config.learning_rate * stump.predict(X)
        return raw

    def predict_proba(self, X) -> np.ndarray:
        p1 = _sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X) -> np.ndarray:
        return _argmax_class(self.predict_proba(X))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _log_loss(y: np.ndarray, p: np.ndarray) -> float:
    eps = 1e-12
    p = np.clip(p, eps, 1 - eps)
    return float(-(y * np.log(p) + (1 - y) * np.log(1 - p)).mean())


def _fit_stump(X, g, h, reg_lambda) -> Stump:
    """Second-order stump fit: maximize the usual gain over all features and
    midpoint thresholds; fall back to a single Newton leaf when nothing
    improves on not splitting."""
    n, d = X.shape
    G, H = g.sum(), h.sum()
    no_split = G**2 / (H + reg_lambda)
    best_gain = 0.0
    best = None
    for f in range(d):
        order = np.argsort(X[:, f], kind="stable")
        v = X[order, f]
        cg = np.cumsum(g[order])
        ch = np.cumsum(h[order])
        cut = np.flatnonzero(v[:-1] < v[1:])
        if cut.size == 0:
            continue
        GL, HL = cg[cut], ch[cut]
        GR, HR = G - GL, H - HL
        gain = 0.5 * (GL**2 / (HL + reg_lambda) + GR**2 / (HR + reg_lambda) - no_split)
        k = int(np.argmax(gain))
        if gain[k] > best_gain + 1e-15:
            best_gain = float(gain[k])
            threshold = (v[cut[k]] + v[cut[k] + 1]) / 2.0
            best = (f, threshold, GL[k], HL[k], GR[k], HR[k])
    if best is None:
        return Stump(-1, 0.0, -G / (H + reg_lambda), 0.0)
    f, threshold, GL, HL, GR, HR = best
    return Stump(f, threshold, -GL / (HL + reg_lambda), -GR / (HR + reg_lambda))


def train_gbt_stumps(
    X, y, config: GbtConfig | None = None, seed: int = 0,
    subsample_indices: list[np.ndarray] | None = None,
) -> BoostedStumpsModel:
    """Logistic-loss boosting: each round fits one stump to the gradient and
    hessian statistics of a fresh without-replacement row subsample, with
    Newton leaf values -sum(g)/(sum(h) + lambda).

    ``subsample_indices`` pins each round's rows (used to verify row-order
    invariance); otherwise they derive from ``seed``.
    """
    if config is None:
        config = GbtConfig()
    if config.objective != "binary:logistic":
        raise ValueError("only binary:logistic is supported")
    if config.max_depth != 1:
        raise ValueError("only depth-1 stumps are supported")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(np.unique(y)) < 2:
        raise ValueError("both classes must be present")

    prior = y.mean()
    base = float(np.log(prior / (1.0 - prior)))
    raw = np.full(len(y), base)
    rng = np.random.default_rng(seed)
    model = BoostedStumpsModel(stumps=[], base_score=base, config=config)
    n_sub = max(1, int(np.floor(config.subsample * len(y))))
    for round_no in range(config.n_estimators):
        p = _sigmoid(raw)
        model.train_log_loss.append(_log_loss(y, p))
        g = p - y
        h = p * (1.0 - p)
        if subsample_indices is not None:
            idx = np.asarray(subsample_indices[round_no], dtype=np.int64)
        elif config.subsample < 1.0:
            idx = rng.choice(len(y), size=n_sub, replace=False)
        else:
            idx = np.arange(len(y))
        model.subsample_indices.append(idx)
        stump = _fit_stump(X[idx], g[idx], h[idx], config.reg_lambda)
        model.stumps.append(stump)
        raw += config.learning_rate * stump.predict(X)
    model.train_log_loss.append(_log_loss(y, _sigmoid(raw)))
    return model


@dataclass
class LogisticConfig:
    penalty: str = "l2"
    C: float = 100.0
    tol: float = 1e-8
    max_iter: int = 200

    def to_dict(self) -> dict:
        return {"penalty": self.penalty, "C": self.C}


@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float
    config: LogisticConfig
    converged: bool = True
    n_iter: int = 0

    def decision_function(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.weights + self.bias

    def predict_proba(self, X) -> np.ndarray:
        p1 = _sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X) -> np.ndarray:
        return _argmax_class(self.predict_proba(X))


def train_logistic_regression(X, y, config: LogisticConfig | None = None) -> LogisticModel:
    """Damped Newton minimization of mean log-loss + (1/C) * ||w||^2 / 2.

    The bias is unpenalized.  Iterates until the gradient norm drops below
    ``tol``; if ``max_iter`` is exhausted first the model is still returned
    with ``converged=False``.
    """
    if config is None:
        config = LogisticConfig()
    if config.penalty != "l2":
        raise ValueError("only the l2 penalty is supported")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(np.unique(y)) < 2:
        raise ValueError("both classes must be present")
    n, d = X.shape
    Xb = np.concatenate([X, np.ones((n, 1))], axis=1)
    theta = np.zeros(d + 1)
    reg = np.full(d + 1, 1.0 / config.C)
    reg[-1] = 0.0  # bias unpenalized

    def objective(t):
        p = _sigmoid(Xb @ t)
        return _log_loss(y, p) + 0.5 * (reg * t * t).sum()

    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        p = _sigmoid(Xb @ theta)
        grad = Xb.T @ (p - y) / n + reg * theta
        gnorm = float(np.linalg.norm(grad))
        if gnorm < config.tol:
            converged = True
            break
        S = p * (1.0 - p)
        H = (Xb.T * S) @ Xb / n + np.diag(reg + 1e-12)
        step = np.linalg.solve(H, grad)
        # Backtracking keeps Newton honest far from the optimum.
        scale, current = 1.0, objective(theta)
        for _ in range(30):
            candidate = theta - scale * step
            if objective(candidate) <= current:
                theta = candidate
                break
            scale *= 0.5
        else:
            theta = theta - scale * step
    else:
        p = _sigmoid(Xb @ theta)
        grad = Xb.T @ (p - y) / n + reg * theta
        converged = bool(np.linalg.norm(grad) < config.tol)
    return LogisticModel(weights=theta[:-1], bias=float(theta[-1]), config=config,
                         converged=converged, n_iter=it)


def _argmax_class(proba: np.ndarray) -> np.ndarray:
    # Ties resolve toward class 0.
    return (proba[:, 1] > proba[:, 0]).astype(np.int64)


@dataclass
class EnsembleConfig:
    forest: ForestConfig = field(default_factory=ForestConfig)
    gbt: GbtConfig = field(default_factory=GbtConfig)
    logistic: LogisticConfig = field(default_factory=LogisticConfig)
    mode: str = "soft-vote"  # or "stacked"
    weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    stack_folds: int = 5

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "weights": list(self.weights),
            "random_forest": self.forest.to_dict(),
            "xgboost": self.gbt.to_dict(),
            "logistic_regression": self.logistic.to_dict(),
        }


@dataclass
class EnsembleModel:
    forest: ForestModel
    gbt: BoostedStumpsModel
    logistic: LogisticModel | None
    meta: LogisticModel | None
    config: EnsembleConfig

    @property
    def mode(self) -> str:
        return self.config.mode

    def _member_probas(self, X) -> list[np.ndarray]:
        members = [self.forest.predict_proba(X), self.gbt.predict_proba(X)]
        if self.logistic is not None:
            members.append(self.logistic.predict_proba(X))
        return members

    def predict_proba(self, X) -> np.ndarray:
        if self.mode == "stacked":
            base = np.column_stack(
                [self.forest.predict_proba(X)[:, 1], self.gbt.predict_proba(X)[:, 1]]
            )
            return self.meta.predict_proba(base)
        probas = self._member_probas(X)
        w = np.asarray(self.config.weights, dtype=np.float64)
        w = w / w.sum()
        out = np.zeros_like(probas[0])
        for wj, pj in zip(w, probas):
            out += wj * pj
        return out

    def predict(self, X) -> np.ndarray:
        return _argmax_class(self.predict_proba(X))

    def fit(self, X, y):  # estimator protocol for grid search
        fitted = ensemble_fit(X, y, self.config, seed=0)
        self.__dict__.update(fitted.__dict__)
        return self


def stratified_folds(y: np.ndarray, k: int, seed: int = 0) -> list[np.ndarray]:
    """Deterministic stratified k-fold indices; fold sizes differ by at most
    one and class ratios are preserved to within one sample."""
    y = np.asarray(y, dtype=np.int64)
    counts = np.bincount(y, minlength=2)
    if k > counts[counts > 0].min():
        raise ValueError(f"k={k} exceeds the smallest class count")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    offset = 0
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        rng.shuffle(idx)
        for j, i in enumerate(idx):
            folds[(offset + j) % k].append(int(i))
        offset += len(idx)
    return [np.sort(np.array(f, dtype=np.int64)) for f in folds]


def ensemble_fit(X, y, config: EnsembleConfig | None = None, seed: int = 0) -> EnsembleModel:
    """Train all members on the same training set.

    In "soft-vote" mode the three members vote with ``config.weights``.  In
    "stacked" mode the logistic regression becomes a meta learner fitted on
    out-of-fold class-1 probabilities of the forest and the boosted stumps.
    """
    if config is None:
        config = EnsembleConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**63 - 1, size=3)

    forest = train_random_forest(X, y, config.forest, seed=int(seeds[0]))
    gbt = train_gbt_stumps(X, y, config.gbt, seed=int(seeds[1]))

    if config.mode == "soft-vote":
        logistic = train_logistic_regression(X, y, config.logistic)
        return EnsembleModel(forest, gbt, logistic, None, config)
    if config.mode != "stacked":
        raise ValueError(f"unknown mode {config.mode!r}")

    k = min(config.stack_folds, int(np.bincount(y, minlength=2).min()))
    oof = np.zeros((len(y), 2))
    for f, fold in enumerate(stratified_folds(y, k, seed=int(seeds[2]))):
        train_idx = np.setdiff1d(np.arange(len(y)), fold)
        fold_forest = train_random_forest(X[train_idx], y[train_idx], config.forest,
                                          seed=int(seeds[0]) % (2**62) + f)
        fold_gbt = train_gbt_stumps(X[train_idx], y[train_idx], config.gbt,
                                    seed=int(seeds[1]) % (2**62) + f)
        oof[fold, 0] = fold_forest.predict_proba(X[fold])[:, 1]
        oof[fold, 1] = fold_gbt.predict_proba(X[fold])[:, 1]
    meta = train_logistic_regression(oof, y, config.logistic)
    return EnsembleModel(forest, gbt, None, meta, config)


def ensemble_predict_proba(model: EnsembleModel, X) -> np.ndarray:
    return model.predict_proba(X)


def ensemble_predict(model: EnsembleModel, X) -> np.ndarray:
    return model.predict(X)


def _config_with_overrides(config: EnsembleConfig, params: dict) -> EnsembleConfig:
    import copy

    out = copy.deepcopy(config)
    for key, value in params.items():
        section, _, name = key.partition(".")
        target = {"forest": out.forest, "gbt": out.gbt, "logistic": out.logistic}.get(section)
        if target is None or not hasattr(target, name):
            raise KeyError(f"unknown grid parameter {key!r}")
        setattr(target, name, value)
    return out


def grid_search_cv(
    X,
    y,
    grid: dict[str, list],
    k: int = 10,
    seed: int = 0,
    config: EnsembleConfig | None = None,
    builder=None,
) -> tuple[dict, list[tuple[dict, float]]]:
    """Exhaustive parameter search under stratified k-fold validation.

    ``grid`` maps dotted parameter names (e.g. "forest.n_estimators") to
    value lists; cells are visited in lexicographic parameter order with
    values in the given order.  Returns the cell with the best mean
    validation accuracy (ties to the earliest cell) plus every cell's score.
    ``builder(params)`` may replace the default soft-vote ensemble factory;
    it must return an object with fit(X, y) and predict(X).
    """
    if not grid:
        raise ValueError("empty grid")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    folds = stratified_folds(y, k, seed=seed)
    if config is None:
        config = EnsembleConfig()
    if builder is None:
        def builder(params):
            return EnsembleModel(None, None, None, None, _config_with_overrides(config, params))

    names = sorted(grid)
    results: list[tuple[dict, float]] = []
    for combo in itertools.product(*(grid[n] for n in names)):
        params = dict(zip(names, combo))
        scores = []
        for fold in folds:
            train_idx = np.setdiff1d(np.arange(len(y)), fold)
            est = builder(params)
            est.fit(X[train_idx], y[train_idx])
            pred = est.predict(X[fold])
            scores.append(float((pred == y[fold]).mean()))
        results.append((params, float(np.mean(scores))))
    best = max(results, key=lambda r: r[1])  # max keeps the earliest on ties
    return best[0], results


def _stump_to_dict(s: Stump) -> dict:
    return {"feature": s.feature, "threshold": s.threshold,
            "left": s.left_value, "right": s.right_value}


def save_ensemble(model: EnsembleModel, path) -> None:
    doc = {
        "schema_version": ENSEMBLE_SCHEMA_VERSION,
        "mode": model.mode,
        "config": model.config.to_dict(),
        "forest": {
            "trees": [t.to_dict() for t in model.forest.trees],
            "tree_seeds": model.forest.tree_seeds,
            "config": model.forest.config.to_dict(),
        },
        "gbt": {
            "stumps": [_stump_to_dict(s) for s in model.gbt.stumps],
            "base_score": model.gbt.base_score,
            "config": model.gbt.config.to_dict(),
        },
        "logistic": None
        if model.logistic is None
        else {"weights": model.logistic.weights.tolist(), "bias": model.logistic.bias},
        "meta": None
        if model.meta is None
        else {"weights": model.meta.weights.tolist(), "bias": model.meta.bias},
        "weights": list(model.config.weights),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_ensemble(path) -> EnsembleModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != ENSEMBLE_SCHEMA_VERSION:
        raise ValueError(
            f"schema version mismatch: expected {ENSEMBLE_SCHEMA_VERSION}, "
            f"got {doc.get('schema_version')}"
        )
    fc = ForestConfig(**doc["forest"]["config"])
    forest = ForestModel(
        trees=[DecisionTree.from_dict(t) for t in doc["forest"]["trees"]],
        tree_seeds=doc["forest"]["tree_seeds"],
        config=fc,
    )
    gc_doc = dict(doc["gbt"]["config"])
    gbt = BoostedStumpsModel(
        stumps=[Stump(s["feature"], s["threshold"], s["left"], s["right"]) for s in doc["gbt"]["stumps"]],
        base_score=doc["gbt"]["base_score"],
        config=GbtConfig(**gc_doc),
    )
    config = EnsembleConfig(
        forest=fc, gbt=gbt.config, mode=doc["mode"], weights=tuple(doc["weights"])
    )
    logistic = None
    if doc["logistic"]:
        logistic = LogisticModel(
            weights=np.asarray(doc["logistic"]["weights"], float),
            bias=doc["logistic"]["bias"],
            config=LogisticConfig(),
        )
    meta = None
    if doc["meta"]:
        meta = LogisticModel(
            weights=np.asarray(doc["meta"]["weights"], float),
            bias=doc["meta"]["bias"],
            config=LogisticConfig(),
        )
    return EnsembleModel(forest, gbt, logistic, meta, config)
