"""Behavior-space distances and per-class agglomerative clustering.

An object's row of compression distances is treated as its behavior
profile. Profiles are compared either with a plain Euclidean distance or
with a class-grouped variant that takes the Euclidean norm inside each
class's block of columns and sums the per-class norms. Trees are built
with Ward linkage on precomputed distances, every k-cluster cut is scored
with the mean silhouette, and the best-scoring cut wins.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    DimensionError,
    InvalidDistance,
    InvalidInput,
    InvalidPartition,
    TooFewLeaves,
    UndefinedSilhouette,
)

LINKAGE_CRITERIA = ("ward", "single", "complete", "average")


@dataclass(frozen=True)
class BehaviorMatrix:
    """Behavior profiles: one row per object, one column per retained object.

    ``class_index_map`` maps each class label to the column indices holding
    that class's objects; together the index lists cover every column
    exactly once.
    """

    row_ids: tuple[str, ...]
    col_ids: tuple[str, ...]
    values: np.ndarray
    class_index_map: dict[str, list[int]]

    def __post_init__(self):
        if self.values.shape != (len(self.row_ids), len(self.col_ids)):
            raise InvalidInput("behavior values must be rows x columns")
        covered = sorted(i for idx in self.class_index_map.values() for i in idx)
        if covered != list(range(len(self.col_ids))):
            raise InvalidPartition("class index map must cover every column exactly once")

    def row_of(self, object_id: str) -> np.ndarray:
        return self.values[self.row_ids.index(object_id)]


def behavior_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Euclidean distance between two behavior profiles."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise DimensionError(f"profile shapes differ: {p.shape} vs {q.shape}")
    return float(np.sqrt(np.sum((p - q) ** 2)))


def class_grouped_distance(
    p: np.ndarray, q: np.ndarray, class_index_map: dict[str, list[int]]
) -> float:
    """Sum of per-class Euclidean norms of the profile difference.

    Splitting the columns by class and summing the block norms never
    undercuts the plain Euclidean distance (the norm of a concatenation
    is at most the sum of the block norms), and with a single class the
    two coincide.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise DimensionError(f"profile shapes differ: {p.shape} vs {q.shape}")
    covered = sorted(i for idx in class_index_map.values() for i in idx)
    if covered != list(range(len(p))):
        raise InvalidPartition("class index map must cover every column exactly once")
    diff = p - q
    total = 0.0
    for label in sorted(class_index_map):
        idx = class_index_map[label]
        total += float(np.sqrt(np.sum(diff[idx] ** 2)))
    return total


def pairwise_rows(
    rows: np.ndarray, class_index_map: dict[str, list[int]] | None = None
) -> np.ndarray:
    """All-pairs profile distances; grouped when an index map is given."""
    rows = np.asarray(rows, dtype=np.float64)
    n = len(rows)
    out = np.zeros((n, n), dtype=np.float64)
    groups = (
        [np.asarray(class_index_map[label]) for label in sorted(class_index_map)]
        if class_index_map
        else [np.arange(rows.shape[1])]
    )
    for i in range(n):
        diff = rows - rows[i]
        acc = np.zeros(n, dtype=np.float64)
        for idx in groups:
            acc += np.sqrt(np.sum(diff[:, idx] ** 2, axis=1))
        out[i] = acc
    return out


def symmetrize(values: np.ndarray) -> np.ndarray:
    """Average a matrix with its transpose."""
    return (values + values.T) / 2.0


def condense(square: np.ndarray) -> np.ndarray:
    """Upper triangle of a symmetric square matrix, row-major."""
    square = np.asarray(square, dtype=np.float64)
    n = square.shape[0]
    if square.shape != (n, n):
        raise InvalidInput("expected a square matrix")
    return square[np.triu_indices(n, k=1)]


@dataclass(frozen=True)
class Dendrogram:
    """Merge tree over labeled leaves.

    Leaves are nodes 0..n-1 in ``leaf_ids`` order; merge t creates node
    n + t. Each merge records (left, right, height, size).
    """

    leaf_ids: tuple[str, ...]
    merges: tuple[tuple[int, int, float, int], ...]

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_ids)

    def labels_at(self, k: int) -> np.ndarray:
        """Cluster labels for the k-cluster cut, numbered by first leaf."""
        n = self.n_leaves
        if not 1 <= k <= n:
            raise InvalidInput(f"cannot cut {n} leaves into {k} clusters")
        parent = list(range(n + len(self.merges)))

        def find(a: int) -> int:
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for t, (left, right, _height, _size) in enumerate(self.merges[: n - k]):
            node = n + t
            parent[find(left)] = node
            parent[find(right)] = node
        roots: dict[int, int] = {}
        labels = np.empty(n, dtype=np.int64)
        for leaf in range(n):
            root = find(leaf)
            labels[leaf] = roots.setdefault(root, len(roots))
        return labels

    def node_heights(self) -> np.ndarray:
        heights = np.zeros(self.n_leaves + len(self.merges))
        for t, (_, _, height, _) in enumerate(self.merges):
            heights[self.n_leaves + t] = height
        return heights

    def to_newick(self) -> str:
        """Newick text with branch lengths (parent height minus child height)."""
        heights = self.node_heights()

        def name(leaf: str) -> str:
            if any(c in leaf for c in "(),:;' \t\n"):
                return "'" + leaf.replace("'", "''") + "'"
            return leaf

        def render(node: int, parent_height: float) -> str:
            branch = parent_height - heights[node]
            if node < self.n_leaves:
                return f"{name(self.leaf_ids[node])}:{branch:.10g}"
            left, right, height, _ = self.merges[node - self.n_leaves]
            inner = f"({render(left, height)},{render(right, height)})"
            return f"{inner}:{branch:.10g}"

        if not self.merges:
            return name(self.leaf_ids[0]) + ";"
        root = self.n_leaves + len(self.merges) - 1
        left, right, height, _ = self.merges[-1]
        return f"({render(left, height)},{render(right, height)});"

    def to_json_dict(self) -> dict:
        return {
            "leaves": list(self.leaf_ids),
            "merges": [[l, r, h, s] for l, r, h, s in self.merges],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)


def dendrogram_from_json(text: str) -> Dendrogram:
    data = json.loads(text)
    return Dendrogram(
        leaf_ids=tuple(data["leaves"]),
        merges=tuple((int(l), int(r), float(h), int(s)) for l, r, h, s in data["merges"]),
    )


def _ward_update(
    d_ak: float, d_bk: float, d_ab: float, n_a: int, n_b: int, n_k: int
) -> float:
    # Lance-Williams recurrence for Ward linkage on plain distances
    t = n_a + n_b + n_k
    sq = ((n_a + n_k) * d_ak**2 + (n_b + n_k) * d_bk**2 - n_k * d_ab**2) / t
    return float(np.sqrt(max(sq, 0.0)))


def linkage(
    condensed: np.ndarray, criterion: str = "ward", leaf_ids=None
) -> Dendrogram:
    """Agglomerative merge sequence over precomputed pairwise distances.

    Uses a lazy-deletion heap, so each step pops the globally smallest
    active pair in O(log n). Ties on distance resolve to the smallest
    (older id, younger id) pair, which makes the sequence reproducible.
    Only Ward's criterion is implemented; the others are reserved names.
    """
    if criterion not in LINKAGE_CRITERIA:
        raise InvalidInput(f"unknown linkage criterion {criterion!r}")
    if criterion != "ward":
        raise NotImplementedError(f"linkage criterion {criterion!r} is reserved")

    condensed = np.asarray(condensed, dtype=np.float64)
    if condensed.ndim != 1:
        raise InvalidInput("expected condensed (1-D) distances")
    if not np.all(np.isfinite(condensed)) or np.any(condensed < 0):
        raise InvalidDistance("distances must be finite and non-negative")
    # recover n from n*(n-1)/2
    n = int(round((1 + np.sqrt(1 + 8 * len(condensed))) / 2))
    if n * (n - 1) // 2 != len(condensed):
        raise InvalidInput("condensed length is not a triangular number")
    if n < 2:
        raise TooFewLeaves("need at least two leaves to build a tree")
    if leaf_ids is None:
        leaf_ids = tuple(str(i) for i in range(n))
    else:
        leaf_ids = tuple(leaf_ids)
        if len(leaf_ids) != n:
            raise InvalidInput("leaf_ids must match the distance count")

    total = 2 * n - 1
    dist = np.zeros((total, total), dtype=np.float64)
    iu = np.triu_indices(n, k=1)
    dist[iu] = condensed
    dist.T[iu] = condensed

    size = np.ones(total, dtype=np.int64)
    alive = np.zeros(total, dtype=bool)
    alive[:n] = True

    heap: list[tuple[float, int, int]] = [
        (float(dist[i, j]), i, j) for i in range(n) for j in range(i + 1, n)
    ]
    heapq.heapify(heap)

    merges: list[tuple[int, int, float, int]] = []
    for step in range(n - 1):
        while True:
            height, a, b = heapq.heappop(heap)
            if alive[a] and alive[b]:
                break
        node = n + step
        size[node] = size[a] + size[b]
        alive[a] = alive[b] = False
        merges.append((a, b, height, int(size[node])))
        others = np.flatnonzero(alive[:node])
        for k in others:
            d = _ward_update(
                float(dist[a, k]), float(dist[b, k]), height,
                int(size[a]), int(size[b]), int(size[k]),
            )
            dist[node, k] = dist[k, node] = d
            heapq.heappush(heap, (d, int(k), node))
        alive[node] = True
    return Dendrogram(leaf_ids=leaf_ids, merges=tuple(merges))


def cophenetic_distances(tree: Dendrogram) -> np.ndarray:
    """Leaf-pair distances given by the height of their lowest common merge."""
    n = tree.n_leaves
    members: list[list[int]] = [[i] for i in range(n)]
    out = np.zeros((n, n), dtype=np.float64)
    for left, right, height, _ in tree.merges:
        for i in members[left]:
            for j in members[right]:
                out[i, j] = out[j, i] = height
        members.append(members[left] + members[right])
    return out


@dataclass(frozen=True)
class Partition:
    """One k-cluster cut of a tree, with silhouette scores once evaluated."""

    labels: tuple[int, ...]
    k: int
    mean_silhouette: float | None = None
    per_cluster_silhouette: dict[int, float] | None = None


def enumerate_partitions(tree: Dendrogram) -> list[Partition]:
    """Every cut with 2..n-1 clusters, ordered by increasing k."""
    n = tree.n_leaves
    if n < 3:
        raise TooFewLeaves("need at least three leaves to enumerate cuts")
    return [Partition(labels=tuple(tree.labels_at(k).tolist()), k=k) for k in range(2, n)]


def silhouette(labels, pairwise: np.ndarray) -> tuple[float, dict[int, float]]:
    """Mean silhouette and per-cluster means over a pairwise distance matrix.

    Samples in singleton clusters score 0, as does any sample whose intra
    and inter distances are both zero.
    """
    labels = np.asarray(labels)
    pairwise = np.asarray(pairwise, dtype=np.float64)
    n = len(labels)
    if pairwise.shape != (n, n):
        raise DimensionError("pairwise matrix must match the label count")
    unique = np.unique(labels)
    if len(unique) < 2:
        raise UndefinedSilhouette("silhouette needs at least two clusters")
    masks = {c: labels == c for c in unique}
    scores = np.zeros(n, dtype=np.float64)
    for i in range(n):
        own = labels[i]
        own_size = int(masks[own].sum())
        if own_size == 1:
            scores[i] = 0.0
            continue
        a = (pairwise[i, masks[own]].sum() - pairwise[i, i]) / (own_size - 1)
        b = min(
            float(pairwise[i, masks[c]].mean()) for c in unique if c != own
        )
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    per_cluster = {
        int(c): float(scores[masks[c]].mean()) for c in unique
    }
    return float(scores.mean()), per_cluster


def score_partition(partition: Partition, pairwise: np.ndarray) -> Partition:
    mean, per_cluster = silhouette(partition.labels, pairwise)
    return replace(partition, mean_silhouette=mean, per_cluster_silhouette=per_cluster)


def best_partition(
    tree: Dendrogram, pairwise: np.ndarray, use_cophenetic: bool = False
) -> Partition:
    """The cut with the highest mean silhouette; ties go to fewer clusters.

    By default cuts are scored against the distances the tree was built
    from. The cophenetic flag scores them against tree heights instead.
    """
    if use_cophenetic:
        pairwise = cophenetic_distances(tree)
    best: Partition | None = None
    for part in enumerate_partitions(tree):
        scored = score_partition(part, pairwise)
        if best is None or scored.mean_silhouette > best.mean_silhouette:
            best = scored
    return best
