"""Reference selection and the inductive embedding built on it.

Per class, the behavior profiles are clustered, the best silhouette cut
is kept, and the strongest clusters contribute reference objects. Each
(cluster, reference) pair then defines one embedding coordinate: a new
sample's distances to the cluster members are compared against the
weighted member rows and aggregated to a single number. The model only
ever needs distances to training objects, so unseen samples embed without
refitting anything.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .clustering import (
    Dendrogram,
    Partition,
    best_partition,
    condense,
    linkage,
    pairwise_rows,
    symmetrize,
)
from .distances import DistanceMatrix, RowStats
from .errors import (
    ClassTooSmall,
    IncompleteRow,
    InvalidCount,
    InvalidInput,
)

F_AGGREGATES = ("min", "max", "mean", "median", "euclidean_norm")
WEIGHTING_MODES = ("row_scale", "distance_scale")
REF_STRATEGIES = ("centroid_closest", "iterative_farthest")


def norm01(v: np.ndarray) -> np.ndarray:
    """Shift to zero minimum and divide by the spread, floored at 1.

    The floor keeps near-constant vectors near zero instead of blowing
    them up to the full unit range.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise InvalidInput("cannot normalize an empty vector")
    shifted = v - v.min()
    return shifted / max(float(shifted.max()), 1.0)


@dataclass(frozen=True)
class SelectionPolicy:
    """Which clusters of a scored partition to keep.

    ``top_n`` keeps the N best-scoring clusters; ``above_tree_average``
    keeps those whose per-cluster silhouette exceeds the partition's mean
    silhouette. Either way the best-ranked cluster is always kept.
    """

    kind: str  # "top_n" | "above_tree_average"
    n: int | None = None

    def __post_init__(self):
        if self.kind not in ("top_n", "above_tree_average"):
            raise InvalidInput(f"unknown selection policy {self.kind!r}")
        if self.kind == "top_n" and (self.n is None or self.n < 0):
            raise InvalidInput("top_n needs a non-negative count")


@dataclass(frozen=True)
class SteeringConfig:
    """Knobs for model building; defaults follow the standard pipeline."""

    policy: SelectionPolicy = field(
        default_factory=lambda: SelectionPolicy("above_tree_average")
    )
    refs_per_cluster: int = 1
    ref_strategy: str = "centroid_closest"
    f_aggregate: str = "mean"
    weighting_mode: str = "row_scale"
    use_cophenetic: bool = False

    def __post_init__(self):
        if self.f_aggregate not in F_AGGREGATES:
            raise InvalidInput(f"unknown aggregator {self.f_aggregate!r}")
        if self.weighting_mode not in WEIGHTING_MODES:
            raise InvalidInput(f"unknown weighting mode {self.weighting_mode!r}")
        if self.ref_strategy not in REF_STRATEGIES:
            raise InvalidInput(f"unknown reference strategy {self.ref_strategy!r}")
        if self.refs_per_cluster < 1:
            raise InvalidCount("refs_per_cluster must be at least 1")


@dataclass(frozen=True)
class SelectedCluster:
    """A kept cluster: members as indices into the partition's leaves."""

    cluster_label: int
    member_indices: tuple[int, ...]
    score: float
    rank: int


def select_clusters(partition: Partition, policy: SelectionPolicy) -> list[SelectedCluster]:
    """Rank clusters by silhouette and keep those the policy admits.

    Ranking ties resolve to the smaller cluster label. At least one
    cluster (the best ranked) is always returned.
    """
    if partition.per_cluster_silhouette is None:
        raise InvalidInput("partition must be scored before cluster selection")
    scores = partition.per_cluster_silhouette
    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    if policy.kind == "top_n":
        kept = ranked[: max(1, min(policy.n, len(ranked)))] if policy.n else ranked[:1]
    else:
        kept = [item for item in ranked if item[1] > partition.mean_silhouette]
        if not kept:
            kept = ranked[:1]
    labels = np.asarray(partition.labels)
    out = []
    for rank, (cluster_label, score) in enumerate(kept):
        members = tuple(int(i) for i in np.flatnonzero(labels == cluster_label))
        out.append(SelectedCluster(cluster_label, members, float(score), rank))
    return out


def _row_distances(submatrix: np.ndarray) -> np.ndarray:
    """Pairwise Euclidean distances between the rows of a member submatrix."""
    return pairwise_rows(submatrix)


def select_references(submatrix: np.ndarray, strategy: str, r: int) -> list[int]:
    """Pick ``r`` member indices to act as the cluster's references.

    centroid_closest snaps the row-space mean to the nearest member and
    then takes that member's r-1 closest peers, so growing r only appends.
    iterative_farthest starts from the member with the largest summed row
    distance and repeatedly adds the member farthest from the chosen set
    (max-min rule). All ties resolve to the lowest index.
    """
    submatrix = np.asarray(submatrix, dtype=np.float64)
    size = submatrix.shape[0]
    if submatrix.shape != (size, size):
        raise InvalidInput("expected a square member submatrix")
    if strategy not in REF_STRATEGIES:
        raise InvalidInput(f"unknown reference strategy {strategy!r}")
    if not 1 <= r <= size:
        raise InvalidCount(f"cannot pick {r} references from {size} members")
    if size == 1:
        return [0]
    rd = _row_distances(submatrix)
    if strategy == "centroid_closest":
        centroid = submatrix.mean(axis=0)
        to_centroid = np.sqrt(np.sum((submatrix - centroid) ** 2, axis=1))
        medoid = int(np.argmin(to_centroid))  # argmin takes the first, lowest index
        order = np.lexsort((np.arange(size), rd[medoid]))
        rest = [int(i) for i in order if i != medoid]
        return [medoid] + rest[: r - 1]
    first = int(np.argmax(rd.sum(axis=1)))
    chosen = [first]
    while len(chosen) < r:
        remaining = [i for i in range(size) if i not in chosen]
        gaps = [min(rd[i, j] for j in chosen) for i in remaining]
        chosen.append(remaining[int(np.argmax(gaps))])
    return chosen


def _weights_from_distances(d: np.ndarray) -> np.ndarray:
    return 1.0 - norm01(d)


def reference_weights(submatrix: np.ndarray, ref_index: int) -> np.ndarray:
    """Member weights for one reference: 1 minus the normalized row distance.

    The reference weighs 1 at its own position; the farthest member drops
    to 0 whenever the cluster has any spread at all.
    """
    submatrix = np.asarray(submatrix, dtype=np.float64)
    size = submatrix.shape[0]
    if not 0 <= ref_index < size:
        raise InvalidCount(f"reference index {ref_index} out of range")
    d = np.sqrt(np.sum((submatrix - submatrix[ref_index]) ** 2, axis=1))
    return _weights_from_distances(d)


def weights_for_vector(ref_vector: np.ndarray, submatrix: np.ndarray) -> np.ndarray:
    """Weights for a reference described only by its distances to members.

    Covers references that are not themselves cluster members; for a
    member's own row this matches reference_weights exactly.
    """
    ref_vector = np.asarray(ref_vector, dtype=np.float64)
    submatrix = np.asarray(submatrix, dtype=np.float64)
    if ref_vector.shape != (submatrix.shape[0],):
        raise InvalidInput("reference vector must match the member count")
    d = np.sqrt(np.sum((submatrix - ref_vector) ** 2, axis=1))
    return _weights_from_distances(d)


@dataclass(frozen=True)
class ModelCluster:
    """One kept cluster with its member submatrix and references."""

    class_label: str
    member_ids: tuple[str, ...]
    submatrix: np.ndarray  # symmetrized distances among members
    references: tuple[tuple[str, np.ndarray], ...]  # (id, member weights)


@dataclass(frozen=True)
class EmbeddingModel:
    """Everything needed to embed any sample from its distance row."""

    clusters: tuple[ModelCluster, ...]
    f_aggregate: str
    weighting_mode: str
    measure: str
    codec: str
    row_stats: RowStats | None = None

    @property
    def feature_names(self) -> list[str]:
        return [
            f"{cluster.class_label}/{ref_id}"
            for cluster in self.clusters
            for ref_id, _ in cluster.references
        ]

    @property
    def n_features(self) -> int:
        return sum(len(c.references) for c in self.clusters)

    @property
    def member_ids_required(self) -> set[str]:
        return {mid for c in self.clusters for mid in c.member_ids}


_AGG = {
    "min": np.min,
    "max": np.max,
    "mean": np.mean,
    "median": np.median,
    "euclidean_norm": np.linalg.norm,
}


def _feature_value(
    sample: np.ndarray, cluster: ModelCluster, weights: np.ndarray,
    f_aggregate: str, weighting_mode: str,
) -> float:
    sub = cluster.submatrix
    c = len(cluster.member_ids)
    d = np.empty(c, dtype=np.float64)
    for m in range(c):
        if weighting_mode == "row_scale":
            diff = sample - weights[m] * sub[m]
            d[m] = np.sqrt(np.sum(diff**2))
        else:
            diff = sample - sub[m]
            d[m] = weights[m] * np.sqrt(np.sum(diff**2))
    return float(_AGG[f_aggregate](d))


def embed_row(model: EmbeddingModel, row: dict[str, float]) -> np.ndarray:
    """Embed one sample from its distances to the training objects.

    ``row`` maps training object ids to the sample's distance under the
    model's measure; it must cover every member of every kept cluster.
    """
    out = np.empty(model.n_features, dtype=np.float64)
    pos = 0
    for cluster in model.clusters:
        try:
            sample = np.array([row[mid] for mid in cluster.member_ids], dtype=np.float64)
        except KeyError as missing:
            raise IncompleteRow(
                f"sample row lacks a distance to member {missing.args[0]!r}"
            ) from None
        for _ref_id, weights in cluster.references:
            out[pos] = _feature_value(
                sample, cluster, weights, model.f_aggregate, model.weighting_mode
            )
            pos += 1
    return out


def embed_rows(model: EmbeddingModel, row_ids, values: np.ndarray, col_ids) -> np.ndarray:
    """Embed many samples at once; identical to embed_row per sample."""
    col_pos = {cid: i for i, cid in enumerate(col_ids)}
    missing = model.member_ids_required - set(col_pos)
    if missing:
        raise IncompleteRow(f"rows lack distances to members {sorted(missing)}")
    out = np.empty((len(row_ids), model.n_features), dtype=np.float64)
    for r in range(len(row_ids)):
        row = values[r]
        pos = 0
        for cluster in model.clusters:
            sample = np.array(
                [row[col_pos[mid]] for mid in cluster.member_ids], dtype=np.float64
            )
            for _ref_id, weights in cluster.references:
                out[r, pos] = _feature_value(
                    sample, cluster, weights, model.f_aggregate, model.weighting_mode
                )
                pos += 1
    return out


def class_trees(
    matrix: DistanceMatrix, labels: dict[str, str] | None = None
) -> dict[str, tuple[Dendrogram, np.ndarray]]:
    """Per-class Ward tree over behavior profiles, plus the distances used.

    Profiles are the full rows of the (training) matrix; distances between
    same-class profiles use the class-grouped form over a column index map
    derived from the labels.
    """
    label_map = labels or matrix.label_map()
    ids = matrix.object_ids
    missing = [oid for oid in ids if oid not in label_map]
    if missing:
        raise InvalidInput(f"no class label for objects {missing[:3]}")
    class_index_map: dict[str, list[int]] = {}
    for i, oid in enumerate(ids):
        class_index_map.setdefault(label_map[oid], []).append(i)
    out: dict[str, tuple[Dendrogram, np.ndarray]] = {}
    for label in sorted(class_index_map):
        member_idx = class_index_map[label]
        if len(member_idx) < 3:
            raise ClassTooSmall(
                f"class {label!r} has {len(member_idx)} members; need at least 3"
            )
        rows = matrix.values[member_idx]
        grouped = pairwise_rows(rows, class_index_map)
        grouped = symmetrize(grouped)  # exact symmetry despite float association
        tree = linkage(condense(grouped), "ward", leaf_ids=[ids[i] for i in member_idx])
        out[label] = (tree, grouped)
    return out


def build_embedding_model(
    matrix: DistanceMatrix,
    labels: dict[str, str] | None = None,
    config: SteeringConfig | None = None,
) -> EmbeddingModel:
    """Cluster each class, keep the strongest clusters, pick references.

    ``matrix`` must be square over the training objects only; everything
    the model stores refers to those columns. When a kept cluster has
    fewer members than refs_per_cluster, the count is clipped to the
    cluster size.
    """
    config = config or SteeringConfig()
    label_map = labels or matrix.label_map()
    trees = class_trees(matrix, label_map)
    sym = symmetrize(matrix.values)
    clusters: list[ModelCluster] = []
    for label, (tree, grouped) in trees.items():
        part = best_partition(tree, grouped, use_cophenetic=config.use_cophenetic)
        kept = select_clusters(part, config.policy)
        for sel in kept:
            member_ids = tuple(tree.leaf_ids[i] for i in sel.member_indices)
            rows = [matrix.index_of(mid) for mid in member_ids]
            sub = sym[np.ix_(rows, rows)]
            r = min(config.refs_per_cluster, len(member_ids))
            refs = select_references(sub, config.ref_strategy, r)
            references = tuple(
                (member_ids[ri], reference_weights(sub, ri)) for ri in refs
            )
            clusters.append(ModelCluster(label, member_ids, sub, references))
    return EmbeddingModel(
        clusters=tuple(clusters),
        f_aggregate=config.f_aggregate,
        weighting_mode=config.weighting_mode,
        measure=matrix.measure,
        codec=matrix.codec.value,
        row_stats=matrix.row_stats,
    )


def model_from_context(
    matrix: DistanceMatrix,
    cluster_members: dict[int, list[str]],
    references: list[tuple[int, str]],
    f_aggregate: str,
    weighting_mode: str,
    cluster_classes: dict[int, str] | None = None,
) -> EmbeddingModel:
    """Assemble a model from externally chosen clusters and references.

    This is the shared back half of the pipeline: anything that can name
    clusters and references (however it chose them) gets weights and an
    embedding through exactly the same arithmetic as the steered path.
    References need not belong to their cluster; their weight vector then
    comes from their distances to the members.
    """
    sym = symmetrize(matrix.values)
    by_cluster: dict[int, list[str]] = {}
    for cluster_id, ref_id in references:
        by_cluster.setdefault(cluster_id, []).append(ref_id)
    clusters: list[ModelCluster] = []
    for cluster_id in sorted(by_cluster):
        member_ids = tuple(cluster_members[cluster_id])
        rows = [matrix.index_of(mid) for mid in member_ids]
        sub = sym[np.ix_(rows, rows)]
        refs = []
        for ref_id in by_cluster[cluster_id]:
            if ref_id in member_ids:
                weights = reference_weights(sub, member_ids.index(ref_id))
            else:
                vec = sym[matrix.index_of(ref_id), rows]
                weights = weights_for_vector(vec, sub)
            refs.append((ref_id, weights))
        label = (cluster_classes or {}).get(cluster_id, str(cluster_id))
        clusters.append(ModelCluster(label, member_ids, sub, tuple(refs)))
    return EmbeddingModel(
        clusters=tuple(clusters),
        f_aggregate=f_aggregate,
        weighting_mode=weighting_mode,
        measure=matrix.measure,
        codec=matrix.codec.value,
        row_stats=matrix.row_stats,
    )


# ---------------------------------------------------------------------------
# model file format


def model_to_json(model: EmbeddingModel) -> str:
    doc = {
        "measure": model.measure,
        "codec": model.codec,
        "weighting_mode": model.weighting_mode,
        "f_aggregate": model.f_aggregate,
        "row_stats": None
        if model.row_stats is None
        else {
            "provenance": model.row_stats.provenance,
            "stats": {k: list(v) for k, v in model.row_stats.stats.items()},
        },
        "clusters": [
            {
                "class": c.class_label,
                "members": list(c.member_ids),
                "submatrix": [list(map(float, row)) for row in c.submatrix],
                "references": [
                    {"id": rid, "omega": list(map(float, w))} for rid, w in c.references
                ],
            }
            for c in model.clusters
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def model_from_json(text: str) -> EmbeddingModel:
    doc = json.loads(text)
    stats = None
    if doc.get("row_stats"):
        stats = RowStats(
            stats={k: (v[0], v[1]) for k, v in doc["row_stats"]["stats"].items()},
            provenance=doc["row_stats"]["provenance"],
        )
    clusters = tuple(
        ModelCluster(
            class_label=c["class"],
            member_ids=tuple(c["members"]),
            submatrix=np.array(c["submatrix"], dtype=np.float64),
            references=tuple(
                (r["id"], np.array(r["omega"], dtype=np.float64))
                for r in c["references"]
            ),
        )
        for c in doc["clusters"]
    )
    return EmbeddingModel(
        clusters=clusters,
        f_aggregate=doc["f_aggregate"],
        weighting_mode=doc["weighting_mode"],
        measure=doc["measure"],
        codec=doc["codec"],
        row_stats=stats,
    )
