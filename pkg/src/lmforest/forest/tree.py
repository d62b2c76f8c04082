"""Single-tree growth over a scored outcome.

Nodes are stored as flat arrays in creation order (depth-first, left child
before right). Feature subsets are drawn from a generator keyed by
(tree key, node counter), so regrowing a tree reproduces it bit for bit
regardless of scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimators import aalen_johansen, nelson_aalen
from .splits import cr_sweep, gini_sweep, logrank_sweep


@dataclass
class Tree:
    feature: np.ndarray    # split feature, -1 at leaves
    threshold: np.ndarray  # split threshold (x <= threshold goes left)
    left: np.ndarray
    right: np.ndarray
    payload: np.ndarray    # index into payloads at leaves, -1 otherwise
    depth: np.ndarray
    payloads: list

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())


class GiniScorer:
    kind = "classification"

    def __init__(self, y: np.ndarray, n_classes: int):
        self.y = y
        self.n_classes = n_classes

    def can_split(self, idx: np.ndarray) -> bool:
        first = self.y[idx[0]]
        return bool(np.any(self.y[idx] != first))

    def sweep(self, idx_sorted: np.ndarray) -> np.ndarray:
        return gini_sweep(self.y[idx_sorted], self.n_classes)

    def payload(self, idx: np.ndarray):
        counts = np.bincount(self.y[idx], minlength=self.n_classes)
        return counts / counts.sum()


class LogrankScorer:
    kind = "survival"

    def __init__(self, time: np.ndarray, status: np.ndarray):
        self.time = time
        self.status = status

    def can_split(self, idx: np.ndarray) -> bool:
        return bool(np.any(self.status[idx] == 1))

    def sweep(self, idx_sorted: np.ndarray) -> np.ndarray:
        return logrank_sweep(self.time[idx_sorted], self.status[idx_sorted])

    def payload(self, idx: np.ndarray):
        return nelson_aalen(self.time[idx], self.status[idx])


class CompetingRisksScorer:
    kind = "competing_risks"

    def __init__(self, time, status, cause_weights, subdistribution: bool):
        self.time = time
        self.status = status
        self.cause_weights = np.asarray(cause_weights, dtype=float)
        self.subdistribution = subdistribution
        weighted = [k for k, w in zip((1, 2, 3), self.cause_weights) if w > 0]
        self._weighted_causes = np.array(weighted, dtype=np.int64)

    def can_split(self, idx: np.ndarray) -> bool:
        return bool(np.any(np.isin(self.status[idx], self._weighted_causes)))

    def sweep(self, idx_sorted: np.ndarray) -> np.ndarray:
        return cr_sweep(
            self.time[idx_sorted],
            self.status[idx_sorted],
            self.cause_weights,
            self.subdistribution,
        )

    def payload(self, idx: np.ndarray):
        return aalen_johansen(self.time[idx], self.status[idx])


def _node_rng(tree_key: tuple[int, int], node_id: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence((tree_key[0], tree_key[1], node_id)))
    )


def grow_tree(
    X: np.ndarray,
    scorer,
    mtry: int,
    nodesize: int,
    tree_key: tuple[int, int],
) -> Tree:
    n, p = X.shape
    mtry = min(mtry, p)
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    payload_idx: list[int] = []
    depth: list[int] = []
    payloads: list = []

    def new_node(d: int) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        payload_idx.append(-1)
        depth.append(d)
        return len(feature) - 1

    root = new_node(0)
    stack: list[tuple[int, np.ndarray]] = [(root, np.arange(n))]
    while stack:
        node_id, idx = stack.pop()
        size = idx.size
        best_stat = 0.0
        best = None
        if size >= 2 * nodesize and scorer.can_split(idx):
            rng = _node_rng(tree_key, node_id)
            for f in rng.permutation(p)[:mtry]:
                xv = X[idx, f]
                order = np.argsort(xv, kind="stable")
                xs = xv[order]
                boundary = xs[:-1] < xs[1:]
                sizes = np.arange(1, size)
                boundary &= (sizes >= nodesize) & (size - sizes >= nodesize)
                if not boundary.any():
                    continue
                stats = scorer.sweep(idx[order])
                stats[~boundary] = -np.inf
                b = int(np.argmax(stats))
                if stats[b] > best_stat:
                    best_stat = float(stats[b])
                    best = (int(f), b, order, xs)
        if best is None:
            payloads.append(scorer.payload(idx))
            payload_idx[node_id] = len(payloads) - 1
            continue
        f, b, order, xs = best
        cut = xs[b] + (xs[b + 1] - xs[b]) / 2.0
        if cut >= xs[b + 1]:  # midpoint rounded up between adjacent floats
            cut = xs[b]
        feature[node_id] = f
        threshold[node_id] = float(cut)
        left_id = new_node(depth[node_id] + 1)
        right_id = new_node(depth[node_id] + 1)
        left[node_id] = left_id
        right[node_id] = right_id
        stack.append((right_id, idx[order[b + 1 :]]))
        stack.append((left_id, idx[order[: b + 1]]))

    return Tree(
        np.array(feature, dtype=np.int32),
        np.array(threshold, dtype=float),
        np.array(left, dtype=np.int32),
        np.array(right, dtype=np.int32),
        np.array(payload_idx, dtype=np.int32),
        np.array(depth, dtype=np.int32),
        payloads,
    )


def tree_leaves(tree: Tree, X: np.ndarray) -> np.ndarray:
    """Payload index of the leaf each row of X falls into."""
    n = X.shape[0]
    node = np.zeros(n, dtype=np.int64)
    while True:
        f = tree.feature[node]
        live = f >= 0
        if not live.any():
            break
        rows = np.flatnonzero(live)
        go_left = X[rows, f[live]] <= tree.threshold[node[rows]]
        node[rows] = np.where(go_left, tree.left[node[rows]], tree.right[node[rows]])
    return tree.payload[node]


def min_depth_by_feature(tree: Tree, n_features: int) -> np.ndarray:
    """Shallowest split depth per feature; unused features get max depth + 1."""
    out = np.full(n_features, tree.max_depth + 1, dtype=float)
    internal = tree.feature >= 0
    for f, d in zip(tree.feature[internal], tree.depth[internal]):
        if d < out[f]:
            out[f] = d
    return out
