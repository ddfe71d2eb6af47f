"""Binary CART classifier with Gini impurity.

Candidate thresholds are midpoints between consecutive distinct values of a
feature within the node. Among splits of equal impurity the lowest feature
index wins, then the lowest threshold. ``x <= threshold`` goes left.
"""

from __future__ import annotations

import numpy as np

_TIE_RTOL = 1e-12


class DecisionTree:
    def __init__(self, max_depth: int = 100):
        if max_depth < 0:
            raise ValueError("max_depth must be non-negative")
        self.max_depth = max_depth
        self.n_classes = 0
        # flat node arrays; feature == -1 marks a leaf
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[int] = []

    def _new_node(self, cls):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(int(cls))
        return len(self.value) - 1

    @staticmethod
    def best_split(X: np.ndarray, y: np.ndarray, n_classes: int):
        """Return ``(feature, threshold, score)`` minimizing ``n * weighted Gini``, or None."""
        n, d = X.shape
        order = np.argsort(X, axis=0, kind="stable")
        xs = np.take_along_axis(X, order, axis=0)
        onehot = np.eye(n_classes)[y]  # (n, C)
        left = np.cumsum(onehot[order], axis=0)[:-1]  # (n-1, d, C): counts with i+1 rows left
        total = onehot.sum(axis=0)
        right = total - left
        n_left = np.arange(1, n, dtype=np.float64)[:, None]
        n_right = n - n_left
        score = (n_left - (left ** 2).sum(axis=2) / n_left) + (n_right - (right ** 2).sum(axis=2) / n_right)
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            return None
        score = np.where(valid, score, np.inf)
        best = score.min()
        tied = score <= best + _TIE_RTOL * max(1.0, abs(best))
        # lowest feature first; within a feature, the lowest threshold is the earliest position
        feat = int(np.flatnonzero(tied.any(axis=0))[0])
        pos = int(np.flatnonzero(tied[:, feat])[0])
        thr = 0.5 * (xs[pos, feat] + xs[pos + 1, feat])
        return feat, float(thr), float(score[pos, feat])

    def fit(self, X, y, n_classes: int | None = None) -> "DecisionTree":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if X.shape[0] == 0:
            raise ValueError("cannot fit a tree on zero rows")
        self.n_classes = int(n_classes or y.max() + 1)
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []
        root = self._new_node(np.argmax(np.bincount(y, minlength=self.n_classes)))
        stack = [(root, np.arange(X.shape[0]), 0)]
        while stack:
            node, idx, depth = stack.pop()
            ys = y[idx]
            if depth >= self.max_depth or np.all(ys == ys[0]):
                continue
            split = self.best_split(X[idx], ys, self.n_classes)
            if split is None:
                continue
            f, t, _ = split
            go_left = X[idx, f] <= t
            li, ri = idx[go_left], idx[~go_left]
            self.feature[node], self.threshold[node] = f, t
            lnode = self._new_node(np.argmax(np.bincount(y[li], minlength=self.n_classes)))
            rnode = self._new_node(np.argmax(np.bincount(y[ri], minlength=self.n_classes)))
            self.left[node], self.right[node] = lnode, rnode
            stack.append((rnode, ri, depth + 1))
            stack.append((lnode, li, depth + 1))
        return self

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        feature = np.array(self.feature)
        threshold = np.array(self.threshold)
        left, right = np.array(self.left), np.array(self.right)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = feature[node] >= 0
        while active.any():
            i = np.flatnonzero(active)
            nd = node[i]
            go_left = X[i, feature[nd]] <= threshold[nd]
            node[i] = np.where(go_left, left[nd], right[nd])
            active = feature[node] >= 0
        return np.array(self.value)[node]

    @property
    def depth(self) -> int:
        depths = {0: 0}
        for i, f in enumerate(self.feature):
            if f >= 0:
                depths[self.left[i]] = depths[self.right[i]] = depths[i] + 1
        return max(depths.values())


def fit_decision_tree(train, max_depth: int = 100) -> DecisionTree:
    """Fit on the continuous feature columns and label of a SampleTable."""
    n_classes = len(train.label_column.categories)
    return DecisionTree(max_depth).fit(train.feature_matrix(), train.labels(), n_classes)
