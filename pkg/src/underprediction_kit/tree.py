"""CART-style binary decision tree over binary features, with leaf statistics."""

from __future__ import annotations

import logging
from collections.abc import Iterator, Sequence
from dataclasses import dataclass

import numpy as np

from .analytic_model import LeafSizeHistogram
from .dataset import EncodedDataset
from .errors import EmptyDatasetError

log = logging.getLogger(__name__)

# Relative slack when comparing split scores, so float noise never breaks a tie.
_TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class TreeParams:
    """Growth limits. Defaults match a fully grown Gini tree."""

    max_depth: int | None = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    seed: int | None = None
    """None breaks equal-score ties by lowest feature index; an int by a seeded order."""

    def __post_init__(self) -> None:
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError(f"max_depth must be >= 0, got {self.max_depth}")
        if self.min_samples_split < 2:
            raise ValueError(f"min_samples_split must be >= 2, got {self.min_samples_split}")
        if self.min_samples_leaf < 1:
            raise ValueError(f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}")


@dataclass(frozen=True)
class Leaf:
    leaf_id: int
    size: int
    target_count: int

    @property
    def rate(self) -> float:
        return self.target_count / self.size

    @property
    def predicted_class(self) -> int:
        # S > 0.5, compared on integers
        return int(2 * self.target_count > self.size)


@dataclass(frozen=True)
class Split:
    """Internal node. Rows with feature == 0 go left, == 1 go right."""

    feature: int
    left: Node
    right: Node
    size: int
    target_count: int


Node = Leaf | Split


@dataclass(frozen=True, eq=False)
class DecisionTree:
    root: Node
    feature_names: tuple[str, ...]
    params: TreeParams

    def leaves(self) -> Iterator[Leaf]:
        stack: list[Node] = [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, Leaf):
                yield node
            else:
                stack += [node.right, node.left]

    @property
    def n_leaves(self) -> int:
        return sum(1 for _ in self.leaves())

    @property
    def depth(self) -> int:
        def walk(node: Node) -> int:
            if isinstance(node, Leaf):
                return 0
            return 1 + max(walk(node.left), walk(node.right))

        return walk(self.root)

    def leaf_for(self, row: Sequence[int] | np.ndarray) -> Leaf:
        if len(row) != len(self.feature_names):
            raise ValueError(f"row has {len(row)} values, tree expects {len(self.feature_names)}")
        node = self.root
        while isinstance(node, Split):
            node = node.right if row[node.feature] else node.left
        return node

    def apply(self, features: np.ndarray) -> np.ndarray:
        """Leaf id reached by every row of a feature matrix."""
        out = np.empty(features.shape[0], dtype=np.int64)
        stack: list[tuple[Node, np.ndarray]] = [(self.root, np.arange(features.shape[0]))]
        while stack:
            node, idx = stack.pop()
            if isinstance(node, Leaf):
                out[idx] = node.leaf_id
                continue
            goes_right = features[idx, node.feature].astype(bool)
            stack.append((node.left, idx[~goes_right]))
            stack.append((node.right, idx[goes_right]))
        return out

    def predict_many(self, features: np.ndarray) -> np.ndarray:
        classes = np.zeros(self.n_leaves, dtype=np.uint8)
        for leaf in self.leaves():
            classes[leaf.leaf_id] = leaf.predicted_class
        return classes[self.apply(features)]


# ── Training ────────────────────────────────────────────────────────


def _child_impurity(n1: np.ndarray, t1: np.ndarray, n: int, t: int) -> np.ndarray:
    """Size-weighted Gini of the two children for every candidate feature (×n/2)."""
    n0, t0 = n - n1, t - t1
    with np.errstate(divide="ignore", invalid="ignore"):
        right = np.where(n1 > 0, t1 * (n1 - t1) / n1, 0.0)
        left = np.where(n0 > 0, t0 * (n0 - t0) / n0, 0.0)
    return np.asarray(left + right, dtype=float)


class _Builder:
    def __init__(self, x: np.ndarray, y: np.ndarray, params: TreeParams) -> None:
        self.x = x
        self.y = y
        self.params = params
        self.next_leaf = 0
        m = x.shape[1]
        if params.seed is None:
            self.rank = np.arange(m)
        else:
            order = np.random.default_rng(params.seed).permutation(m)
            self.rank = np.empty(m, dtype=np.int64)
            self.rank[order] = np.arange(m)

    def leaf(self, n: int, t: int) -> Leaf:
        node = Leaf(leaf_id=self.next_leaf, size=n, target_count=t)
        self.next_leaf += 1
        return node

    def best_feature(self, idx: np.ndarray) -> int | None:
        x = self.x[idx]
        y = self.y[idx].astype(np.int64)
        n, t = len(idx), int(y.sum())
        n1 = x.sum(axis=0, dtype=np.int64)
        t1 = x.T.astype(np.int64) @ y
        min_leaf = self.params.min_samples_leaf
        valid = (n1 >= min_leaf) & (n - n1 >= min_leaf)
        if not valid.any():
            return None
        score = _child_impurity(n1, t1, n, t)
        best = score[valid].min()
        ties = np.flatnonzero(valid & (score <= best + _TIE_TOLERANCE * max(1.0, abs(best))))
        return int(ties[np.argmin(self.rank[ties])])

    def grow(self, idx: np.ndarray, depth: int) -> Node:
        n = len(idx)
        t = int(self.y[idx].sum())
        p = self.params
        if (
            t in (0, n)
            or n < p.min_samples_split
            or n < 2 * p.min_samples_leaf
            or (p.max_depth is not None and depth >= p.max_depth)
        ):
            return self.leaf(n, t)
        feature = self.best_feature(idx)
        if feature is None:
            return self.leaf(n, t)
        goes_right = self.x[idx, feature].astype(bool)
        left = self.grow(idx[~goes_right], depth + 1)
        right = self.grow(idx[goes_right], depth + 1)
        return Split(feature=feature, left=left, right=right, size=n, target_count=t)


def train(
    d: EncodedDataset, params: TreeParams | None = None, *, rows: np.ndarray | None = None
) -> DecisionTree:
    """Greedy Gini tree over the binary features of `d` (optionally a subset of its rows).

    A node with a non-constant target is split on any feature that leaves both children
    non-empty, even at zero gain, so an unlimited tree only stops at purity, exhausted
    features, or the params limits.
    """
    params = params or TreeParams()
    idx = np.arange(d.n_rows) if rows is None else np.asarray(rows, dtype=np.int64)
    if idx.size == 0:
        raise EmptyDatasetError("cannot train a tree on zero rows")
    builder = _Builder(d.features, d.target, params)
    tree = DecisionTree(builder.grow(idx, 0), d.feature_names, params)
    log.debug("Tree trained on %d rows: %d leaves, depth %d", idx.size, tree.n_leaves, tree.depth)
    return tree


def predict(tree: DecisionTree, row: Sequence[int] | np.ndarray) -> tuple[int, float]:
    """(class, leaf S) for one row; class is 1 only when S > 0.5."""
    leaf = tree.leaf_for(row)
    return leaf.predicted_class, leaf.rate


# ── Leaf statistics ─────────────────────────────────────────────────


@dataclass(frozen=True)
class LeafStat:
    leaf_id: int
    size: int
    target_rate: float
    """Leaf S as trained."""
    group_counts: tuple[int, int]
    """Rows with the group feature equal to 0 and to 1."""


@dataclass(frozen=True)
class LeafStats:
    group_feature: str
    leaves: tuple[LeafStat, ...]

    @property
    def sizes(self) -> list[int]:
        return [leaf.size for leaf in self.leaves]

    def histogram(self) -> LeafSizeHistogram:
        return LeafSizeHistogram.from_sizes(self.sizes)

    def group_sizes(self, g: int) -> list[int]:
        return [leaf.group_counts[g] for leaf in self.leaves]

    def group_histogram(self, g: int) -> LeafSizeHistogram:
        """Histogram where a leaf's size is its count of group-g members."""
        return LeafSizeHistogram.from_sizes(self.group_sizes(g))


def leaf_statistics(
    tree: DecisionTree,
    d: EncodedDataset,
    group_feature: str,
    *,
    rows: np.ndarray | None = None,
    membership: np.ndarray | None = None,
) -> LeafStats:
    """Route rows of `d` (its training rows) and count per-leaf sizes and group members.

    `membership` (a boolean mask over the rows of `d`) replaces the group feature's
    column, for groups that are not a feature of `d` itself.
    """
    idx = np.arange(d.n_rows) if rows is None else np.asarray(rows, dtype=np.int64)
    leaf_ids = tree.apply(d.features[idx])
    column = d.column(group_feature) if membership is None else membership
    group = np.asarray(column)[idx].astype(bool)
    n_leaves = tree.n_leaves
    sizes = np.bincount(leaf_ids, minlength=n_leaves)
    ones = np.bincount(leaf_ids[group], minlength=n_leaves)
    stats = tuple(
        LeafStat(
            leaf_id=leaf.leaf_id,
            size=int(sizes[leaf.leaf_id]),
            target_rate=leaf.rate,
            group_counts=(int(sizes[leaf.leaf_id] - ones[leaf.leaf_id]), int(ones[leaf.leaf_id])),
        )
        for leaf in sorted(tree.leaves(), key=lambda leaf: leaf.leaf_id)
    )
    return LeafStats(group_feature=group_feature, leaves=stats)


# ── Text dump ───────────────────────────────────────────────────────


def render_tree(tree: DecisionTree) -> str:
    lines: list[str] = []

    def walk(node: Node, indent: str, label: str) -> None:
        rate = node.target_count / node.size
        head = f"{indent}{label}n={node.size} pos={node.target_count} S={rate:.3f}"
        if isinstance(node, Leaf):
            lines.append(f"{head} leaf#{node.leaf_id} -> {node.predicted_class}")
            return
        lines.append(head)
        name = tree.feature_names[node.feature]
        walk(node.left, indent + "  ", f"{name}=0: ")
        walk(node.right, indent + "  ", f"{name}=1: ")

    walk(tree.root, "", "")
    return "\n".join(lines) + "\n"
