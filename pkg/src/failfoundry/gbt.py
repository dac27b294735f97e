"""Second-order gradient-boosted trees for binary logistic loss.

Trees are grown greedily with exact split enumeration over sorted feature
values. Missing values are routed by a default direction learned per node:
during split search both placements of the missing rows are scored and the
better one is kept.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_labels, as_matrix, prepare_predict, require_both_classes

FORMAT_TAG = "failfoundry-gbt v1"


@dataclass
class GbtParams:
    n_trees: int = 100
    max_depth: int = 6
    learning_rate: float = 0.1
    colsample_bytree: float = 1.0
    min_child_weight: float = 1.0
    l2_reg: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if int(self.n_trees) != self.n_trees or self.n_trees < 0:
            raise ValueError("n_trees must be a non-negative integer")
        if int(self.max_depth) != self.max_depth or self.max_depth < 1:
            raise ValueError("max_depth must be a positive integer")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        if not 0.0 < self.colsample_bytree <= 1.0:
            raise ValueError("colsample_bytree must lie in (0, 1]")
        if self.min_child_weight < 0 or self.l2_reg < 0:
            raise ValueError("min_child_weight and l2_reg must be >= 0")
        self.n_trees = int(self.n_trees)
        self.max_depth = int(self.max_depth)


# The three parameter sets used for the level-1 models in stacking.
STACK_PARAM_SETS = (
    {"max_depth": 15, "colsample_bytree": 0.7},
    {"max_depth": 5, "colsample_bytree": 0.7},
    {"max_depth": 15, "colsample_bytree": 0.3},
)


@dataclass
class Tree:
    """Flat binary tree. Leaves have ``feature == -1``.

    Rows with ``x < threshold`` go left; missing values follow
    ``default_left``. Leaf weights already include the learning rate.
    """

    feature: list = field(default_factory=list)
    threshold: list = field(default_factory=list)
    default_left: list = field(default_factory=list)
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    weight: list = field(default_factory=list)
    gain: list = field(default_factory=list)

    def add_node(self):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.default_left.append(False)
        self.left.append(-1)
        self.right.append(-1)
        self.weight.append(0.0)
        self.gain.append(0.0)
        return len(self.feature) - 1

    @property
    def n_nodes(self):
        return len(self.feature)

    def depth(self):
        depth = {0: 0}
        best = 0
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                for c in (self.left[i], self.right[i]):
                    depth[c] = depth[i] + 1
                    best = max(best, depth[c])
        return best

    def freeze(self):
        self._arrays = (
            np.asarray(self.feature, dtype=np.int64),
            np.asarray(self.threshold, dtype=np.float64),
            np.asarray(self.default_left, dtype=bool),
            np.asarray(self.left, dtype=np.int64),
            np.asarray(self.right, dtype=np.int64),
            np.asarray(self.weight, dtype=np.float64),
        )
        return self

    def predict(self, X):
        if getattr(self, "_arrays", None) is None or len(self._arrays[0]) != self.n_nodes:
            self.freeze()
        feat, thr, dleft, left, right, weight = self._arrays
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            rows = np.flatnonzero(feat[node] >= 0)
            if len(rows) == 0:
                break
            nd = node[rows]
            x = X[rows, feat[nd]]
            go_left = np.where(np.isnan(x), dleft[nd], x < thr[nd])
            node[rows] = np.where(go_left, left[nd], right[nd])
        return weight[node]


@dataclass
class TreeEnsemble:
    trees: list
    base_score: float
    params: GbtParams
    feature_names: list

    @property
    def n_features(self):
        return len(self.feature_names)

    def raw_margin(self, X):
        margin = np.full(X.shape[0], logit(self.base_score))
        for tree in self.trees:
            margin += tree.predict(X)
        return margin


@dataclass
class FeatureImportance:
    gains: np.ndarray
    feature_names: list


def _best_split(Xn, g, h, G, H, lam, mcw):
    """Best split of one node. Returns ``(gain, feature_pos, threshold,
    default_left)`` or None."""
    m, q = Xn.shape
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=0)
    gs = g[order]
    hs = h[order]
    n_valid = m - np.isnan(Xn).sum(axis=0)
    cg = np.cumsum(gs, axis=0)
    ch = np.cumsum(hs, axis=0)
    last = np.maximum(n_valid - 1, 0)
    cols = np.arange(q)
    g_valid = np.where(n_valid > 0, cg[last, cols], 0.0)
    h_valid = np.where(n_valid > 0, ch[last, cols], 0.0)
    g_miss = G - g_valid
    h_miss = H - h_valid

    # Candidate i separates sorted positions <= i from > i.
    pos = np.arange(m - 1)[:, None]
    with np.errstate(invalid="ignore"):
        ok = (pos + 1 < n_valid[None, :]) & (xs[:-1] < xs[1:])
    gl_r, hl_r = cg[:-1], ch[:-1]
    gl_l, hl_l = gl_r + g_miss, hl_r + h_miss
    # Final row: all present values left, missing values right.
    has_both = (n_valid > 0) & (n_valid < m)
    GL = np.concatenate([np.stack([gl_r, gl_l], axis=1),
                         np.stack([g_valid, g_valid], axis=0)[None]], axis=0)
    HL = np.concatenate([np.stack([hl_r, hl_l], axis=1),
                         np.stack([h_valid, h_valid], axis=0)[None]], axis=0)
    valid = np.concatenate([np.stack([ok, ok], axis=1),
                            np.stack([has_both, np.zeros(q, dtype=bool)], axis=0)[None]], axis=0)
    GR = G - GL
    HR = H - HL
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - G * G / (H + lam))
    valid &= (HL >= mcw) & (HR >= mcw) & np.isfinite(gain)
    gain = np.where(valid, gain, -np.inf)
    # Feature-major flattening so ties resolve to the lowest feature index.
    flat = np.transpose(gain, (2, 0, 1)).ravel()
    k = int(np.argmax(flat))
    best = flat[k]
    if not best > 0.0:
        return None
    j, rest = divmod(k, gain.shape[0] * 2)
    i, direction = divmod(rest, 2)
    if i == m - 1:
        return best, j, np.inf, False
    lo, hi = xs[i, j], xs[i + 1, j]
    thr = 0.5 * (lo + hi)
    if not lo < thr:
        thr = hi
    return best, j, thr, bool(direction == 1)


def _grow_tree(X, g, h, features, params):
    tree = Tree()
    lam = params.l2_reg
    mcw = params.min_child_weight
    lr = params.learning_rate

    def grow(idx, depth):
        node = tree.add_node()
        G = float(g[idx].sum())
        H = float(h[idx].sum())
        split = None
        if depth < params.max_depth and len(idx) >= 2:
            split = _best_split(X[np.ix_(idx, features)], g[idx], h[idx], G, H, lam, mcw)
        if split is None:
            denom = H + lam
            tree.weight[node] = -lr * G / denom if denom > 0 else 0.0
            return node
        gain, jpos, thr, dleft = split
        j = int(features[jpos])
        x = X[idx, j]
        go_left = np.where(np.isnan(x), dleft, x < thr)
        tree.feature[node] = j
        tree.threshold[node] = float(thr)
        tree.default_left[node] = dleft
        tree.gain[node] = float(gain)
        left = grow(idx[go_left], depth + 1)
        right = grow(idx[~go_left], depth + 1)
        tree.left[node] = left
        tree.right[node] = right
        return node

    grow(np.arange(X.shape[0]), 0)
    return tree.freeze()


def logistic_loss(y, margin):
    """Mean logistic loss for labels ``y`` and raw margins."""
    return float(np.mean(np.logaddexp(0.0, margin) - y * margin))


def fit(d, params=None, y=None):
    """Fit a boosted ensemble; see :class:`GradientBoostedTreesClassifier`."""
    clf = GradientBoostedTreesClassifier(**vars(params or GbtParams()))
    clf.fit(d, y)
    return clf.ensemble_


def predict_proba(m, d):
    """Positive-class probabilities for every row of ``d``."""
    X = prepare_predict(d, m.feature_names)
    return expit(m.raw_margin(X))


def importance(m):
    """Gain summed over every split node, per feature."""
    gains = np.zeros(m.n_features)
    for tree in m.trees:
        for f, gain in zip(tree.feature, tree.gain):
            if f >= 0:
                gains[f] += gain
    return FeatureImportance(gains, list(m.feature_names))


def top_k_features(fi, k):
    """Indices of the ``k`` largest nonzero gains, ties by ascending index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    gains = np.asarray(fi.gains if isinstance(fi, FeatureImportance) else fi, dtype=np.float64)
    order = np.lexsort((np.arange(len(gains)), -gains))
    return [int(j) for j in order[:k] if gains[j] > 0]


class GradientBoostedTreesClassifier(ClassifierMixin, BaseEstimator):
    """Boosted regression trees on the logistic loss with Newton leaf values.

    Parameters
    ----------
    n_trees : int
        Boosting rounds.
    max_depth : int
        Maximum depth of each tree.
    learning_rate : float
        Shrinkage applied to every leaf weight.
    colsample_bytree : float
        Fraction of features drawn (once per tree) as split candidates.
    min_child_weight : float
        Minimum hessian sum in each child of a split.
    l2_reg : float
        L2 penalty on leaf weights.
    seed : int
        Seed for column subsampling.

    Attributes
    ----------
    ensemble_ : TreeEnsemble
    feature_importances_ : ndarray
        Total split gain per feature.
    train_loss_ : ndarray
        Mean training logistic loss before the first round and after each round.
    """

    def __init__(self, n_trees=100, max_depth=6, learning_rate=0.1, colsample_bytree=1.0,
                 min_child_weight=1.0, l2_reg=1.0, seed=0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.colsample_bytree = colsample_bytree
        self.min_child_weight = min_child_weight
        self.l2_reg = l2_reg
        self.seed = seed

    def fit(self, X, y=None):
        params = GbtParams(**self.get_params())
        Xa, names = as_matrix(X)
        y = as_labels(y, X, Xa.shape[0])
        require_both_classes(y)
        self.classes_ = np.array([0, 1])
        n, p = Xa.shape
        if p == 0:
            raise ValueError("no features")
        base = float(y.mean())
        rng = np.random.default_rng(params.seed)
        n_cols = max(1, int(round(params.colsample_bytree * p)))
        margin = np.full(n, logit(base))
        losses = [logistic_loss(y, margin)]
        trees = []
        for _ in range(params.n_trees):
            if n_cols < p:
                features = np.sort(rng.choice(p, size=n_cols, replace=False))
            else:
                features = np.arange(p)
            prob = expit(margin)
            g = prob - y
            h = prob * (1.0 - prob)
            tree = _grow_tree(Xa, g, h, features, params)
            margin = margin + tree.predict(Xa)
            losses.append(logistic_loss(y, margin))
            trees.append(tree)
        self.ensemble_ = TreeEnsemble(trees, base, params, names)
        self.train_loss_ = np.array(losses)
        self.n_features_in_ = p
        self.feature_names_ = names
        return self

    @property
    def feature_importances_(self):
        check_is_fitted(self, "ensemble_")
        return importance(self.ensemble_).gains

    def decision_function(self, X):
        check_is_fitted(self, "ensemble_")
        return self.ensemble_.raw_margin(prepare_predict(X, self.ensemble_.feature_names))

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X, threshold=0.5):
        return (self.predict_proba(X)[:, 1] > threshold).astype(np.int64)


# ---------------------------------------------------------------------------
# Text serialization
# ---------------------------------------------------------------------------

def dumps(m):
    """Line-oriented text form: header lines, then one node per line
    (``node_id kind feature threshold default left right weight gain``)."""
    lines = [FORMAT_TAG, f"base_score {m.base_score!r}"]
    for key, value in vars(m.params).items():
        lines.append(f"param {key} {value!r}")
    for j, name in enumerate(m.feature_names):
        lines.append(f"feature {j} {name}")
    for t, tree in enumerate(m.trees):
        lines.append(f"tree {t} {tree.n_nodes}")
        for i in range(tree.n_nodes):
            kind = "split" if tree.feature[i] >= 0 else "leaf"
            lines.append(" ".join([
                str(i), kind, str(tree.feature[i]), repr(float(tree.threshold[i])),
                "L" if tree.default_left[i] else "R", str(tree.left[i]), str(tree.right[i]),
                repr(float(tree.weight[i])), repr(float(tree.gain[i]))]))
    return "\n".join(lines) + "\n"


def loads(text):
    lines = text.splitlines()
    if not lines or lines[0].strip() != FORMAT_TAG:
        raise ValueError("not a failfoundry gbt model file")
    base = None
    params = {}
    names = []
    trees = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts:
            continue
        head = parts[0]
        if head == "base_score":
            base = float(parts[1])
        elif head == "param":
            value = parts[2]
            params[parts[1]] = float(value) if "." in value or "e" in value else int(value)
        elif head == "feature":
            names.append(line.split(" ", 2)[2])
        elif head == "tree":
            trees.append(Tree())
        else:
            if len(parts) != 9:
                raise ValueError(f"line {lineno}: expected 9 fields, got {len(parts)}")
            tree = trees[-1]
            node = tree.add_node()
            if node != int(parts[0]):
                raise ValueError(f"line {lineno}: nodes must be listed in id order")
            tree.feature[node] = int(parts[2]) if parts[1] == "split" else -1
            tree.threshold[node] = float(parts[3])
            tree.default_left[node] = parts[4] == "L"
            tree.left[node] = int(parts[5])
            tree.right[node] = int(parts[6])
            tree.weight[node] = float(parts[7])
            tree.gain[node] = float(parts[8])
    if base is None:
        raise ValueError("missing base_score")
    return TreeEnsemble([t.freeze() for t in trees], base, GbtParams(**params), names)


def save(m, path):
    with open(path, "w") as fh:
        fh.write(dumps(m))


def load(path):
    with open(path) as fh:
        return loads(fh.read())
