"""Leakage-safe evaluation of embedding contexts against baselines.

The protocol is column masking: every object keeps its distance row, but
only columns belonging to training-fold objects survive. Models, row
statistics, and features are then built from training information alone,
and test rows embed through the same frozen model.

Methods:

* ours          steered context (cluster, select, weight) from the model builder
* random        random clusters and random in-class references
* dummy         one cluster per class, references drawn from the whole train set
* kbest_f / kbest_chi2 / kbest_mi
                univariate column scores pick reference columns, k-means
                over those columns supplies the clusters
* knn           no context at all; nearest neighbors on the masked rows

All methods except knn share the same feature arithmetic and the same
forest scorer, so differences reflect the context, not the classifier.
"""

from __future__ import annotations

import json
import math
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .clustering import BehaviorMatrix, silhouette
from .distances import (
    DistanceMatrix,
    RowStats,
    atomic_write_text,
    row_stats_from_matrix,
    standardize_rows,
)
from .errors import (
    ClassTooSmall,
    DegenerateLabels,
    DimensionError,
    InvalidFold,
    InvalidInput,
    MissingFragments,
)
from .forest import RandomForest, macro_f1
from .steering import (
    SteeringConfig,
    build_embedding_model,
    embed_rows,
    model_from_context,
)

METHODS = ("ours", "random", "dummy", "kbest_f", "kbest_chi2", "kbest_mi", "knn")

MI_BINS = 16
KMEANS_RESTARTS = 10


@dataclass(frozen=True)
class Fold:
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]


@dataclass(frozen=True)
class FoldPlan:
    k: int
    folds: tuple[Fold, ...]
    seed: int
    stratified: bool


def make_folds(labels: dict[str, str], k: int, seed: int, stratified: bool = True) -> FoldPlan:
    """Seeded k-fold split; stratification keeps classes within one sample.

    Ids are sorted before shuffling so the plan depends only on the id
    set, the labels, k, and the seed.
    """
    if k < 2:
        raise InvalidInput("need at least two folds")
    ids = sorted(labels)
    rng = np.random.default_rng(seed)
    test_sets: list[list[str]] = [[] for _ in range(k)]
    if stratified:
        by_class: dict[str, list[str]] = {}
        for oid in ids:
            by_class.setdefault(labels[oid], []).append(oid)
        for label in sorted(by_class):
            members = by_class[label]
            if len(members) < k:
                raise ClassTooSmall(
                    f"class {label!r} has {len(members)} members; need >= {k} for {k} folds"
                )
            perm = rng.permutation(len(members))
            for chunk_id, chunk in enumerate(np.array_split(perm, k)):
                test_sets[chunk_id].extend(members[i] for i in chunk)
    else:
        perm = rng.permutation(len(ids))
        for chunk_id, chunk in enumerate(np.array_split(perm, k)):
            test_sets[chunk_id].extend(ids[i] for i in chunk)
    folds = []
    for chunk in test_sets:
        test = tuple(sorted(chunk))
        train = tuple(oid for oid in ids if oid not in set(test))
        folds.append(Fold(train_ids=train, test_ids=test))
    return FoldPlan(k=k, folds=tuple(folds), seed=seed, stratified=stratified)


def mask_columns(matrix: DistanceMatrix, train_ids) -> BehaviorMatrix:
    """Keep every row, drop all columns not owned by training objects."""
    train_set = set(train_ids)
    unknown = train_set - set(matrix.object_ids)
    if unknown:
        raise InvalidFold(f"train ids not in the matrix: {sorted(unknown)[:3]}")
    if not train_set:
        raise InvalidFold("empty training side")
    cols = [i for i, oid in enumerate(matrix.object_ids) if oid in train_set]
    col_ids = tuple(matrix.object_ids[i] for i in cols)
    class_index_map: dict[str, list[int]] = {}
    for pos, i in enumerate(cols):
        class_index_map.setdefault(matrix.labels[i], []).append(pos)
    return BehaviorMatrix(
        row_ids=matrix.object_ids,
        col_ids=col_ids,
        values=matrix.values[:, cols].copy(),
        class_index_map=class_index_map,
    )


# ---------------------------------------------------------------------------
# univariate column scores and k-means for the kbest baselines


def anova_f_scores(X: np.ndarray, y: list) -> np.ndarray:
    """One-way ANOVA F statistic per column."""
    X = np.asarray(X, dtype=np.float64)
    groups = [np.flatnonzero([v == c for v in y]) for c in sorted(set(y))]
    grand = X.mean(axis=0)
    ss_between = np.zeros(X.shape[1])
    ss_within = np.zeros(X.shape[1])
    for idx in groups:
        block = X[idx]
        mean = block.mean(axis=0)
        ss_between += len(idx) * (mean - grand) ** 2
        ss_within += ((block - mean) ** 2).sum(axis=0)
    df_between = len(groups) - 1
    df_within = len(X) - len(groups)
    if df_between < 1 or df_within < 1:
        raise InvalidInput("need at least two classes and spare samples for F scores")
    ms_between = ss_between / df_between
    ms_within = ss_within / df_within
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = np.where(
            ms_within > 0, ms_between / np.maximum(ms_within, 1e-300),
            np.where(ms_between > 0, np.inf, 0.0),
        )
    return scores


def chi2_scores(X: np.ndarray, y: list) -> np.ndarray:
    """Chi-square statistic per column over min-max scaled, non-negative values."""
    X = np.asarray(X, dtype=np.float64)
    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    span[span == 0] = 1.0
    scaled = (X - lo) / span
    classes = sorted(set(y))
    y_arr = np.asarray([classes.index(v) for v in y])
    observed = np.zeros((len(classes), X.shape[1]))
    for ci in range(len(classes)):
        observed[ci] = scaled[y_arr == ci].sum(axis=0)
    feature_totals = scaled.sum(axis=0)
    class_freq = np.bincount(y_arr) / len(y)
    expected = class_freq[:, None] * feature_totals[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(expected > 0, (observed - expected) ** 2 / np.maximum(expected, 1e-300), 0.0)
    return terms.sum(axis=0)


def mutual_info_scores(X: np.ndarray, y: list) -> np.ndarray:
    """Mutual information per column after 16-bin equal-width discretization."""
    X = np.asarray(X, dtype=np.float64)
    classes = sorted(set(y))
    y_arr = np.asarray([classes.index(v) for v in y])
    n = len(y_arr)
    p_class = np.bincount(y_arr, minlength=len(classes)) / n
    scores = np.zeros(X.shape[1])
    for f in range(X.shape[1]):
        col = X[:, f]
        lo, hi = col.min(), col.max()
        if hi == lo:
            continue  # one bin, zero information
        bins = np.minimum(((col - lo) / (hi - lo) * MI_BINS).astype(np.int64), MI_BINS - 1)
        mi = 0.0
        for b in range(MI_BINS):
            in_bin = bins == b
            p_b = in_bin.sum() / n
            if p_b == 0:
                continue
            for ci in range(len(classes)):
                p_bc = np.sum(in_bin & (y_arr == ci)) / n
                if p_bc > 0:
                    mi += p_bc * math.log(p_bc / (p_b * p_class[ci]))
        scores[f] = mi
    return scores


_SCORERS = {"kbest_f": anova_f_scores, "kbest_chi2": chi2_scores, "kbest_mi": mutual_info_scores}


def kmeans(X: np.ndarray, k: int, seed: int, restarts: int = KMEANS_RESTARTS):
    """Seeded Lloyd iterations, best inertia over ``restarts`` inits.

    Returns (labels, inertia). Initial centers are distinct sample rows;
    empty clusters keep their previous center. Deterministic throughout.
    """
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if not 1 <= k <= n:
        raise InvalidInput(f"cannot make {k} clusters from {n} samples")
    rng = np.random.default_rng(seed)
    best_labels, best_inertia = None, np.inf
    for _ in range(restarts):
        centers = X[rng.choice(n, size=k, replace=False)].copy()
        labels = np.zeros(n, dtype=np.int64)
        for _round in range(100):
            d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new_labels = np.argmin(d2, axis=1)
            if _round > 0 and np.array_equal(new_labels, labels):
                break
            labels = new_labels
            for c in range(k):
                mask = labels == c
                if mask.any():
                    centers[c] = X[mask].mean(axis=0)
        inertia = float(((X - centers[labels]) ** 2).sum())
        if inertia < best_inertia:
            best_inertia = inertia
            best_labels = labels.copy()
    return best_labels, best_inertia


# ---------------------------------------------------------------------------
# baseline contexts


@dataclass(frozen=True)
class BaselineContext:
    """Cluster membership and (cluster, reference) picks for one method run."""

    cluster_members: dict[int, list[str]]
    references: list[tuple[int, str]]
    cluster_classes: dict[int, str]


def _spread_evenly(total: int, buckets: int) -> list[int]:
    base, extra = divmod(total, buckets)
    return [base + (1 if i < extra else 0) for i in range(buckets)]


def baseline_context(
    method: str,
    behavior: BehaviorMatrix,
    labels: dict[str, str],
    feature_count: int,
    refs_per_cluster: int,
    seed: int,
) -> BaselineContext:
    """Choose clusters and references without looking at test columns.

    random: each class is shuffled into enough clusters to spend its share
    of the feature budget at ``refs_per_cluster`` references per cluster,
    and references are drawn inside each cluster.

    dummy: each class stays one cluster; its share of references is drawn
    from the entire training set, so references may come from other classes.

    kbest_*: columns are scored against the labels, the top columns become
    the references, and k-means (k = feature count) over those columns
    groups the training rows into the clusters the references live in.
    """
    if method not in METHODS or method in ("ours", "knn"):
        raise InvalidInput(f"no baseline context for method {method!r}")
    train_ids = list(behavior.col_ids)
    by_class: dict[str, list[str]] = {}
    for oid in train_ids:
        by_class.setdefault(labels[oid], []).append(oid)
    class_names = sorted(by_class)
    rng = np.random.default_rng(seed)

    if method == "random":
        shares = _spread_evenly(feature_count, len(class_names))
        cluster_members: dict[int, list[str]] = {}
        references: list[tuple[int, str]] = []
        cluster_classes: dict[int, str] = {}
        next_id = 0
        for label, share in zip(class_names, shares):
            members = by_class[label]
            share = min(share, len(members))
            if share == 0:
                continue
            n_clusters = min(max(1, math.ceil(share / refs_per_cluster)), len(members))
            perm = rng.permutation(len(members))
            chunks = np.array_split(perm, n_clusters)
            remaining = share
            for chunk in chunks:
                group = [members[i] for i in chunk]
                take = min(refs_per_cluster, len(group), remaining)
                if take == 0:
                    continue
                picks = rng.choice(len(group), size=take, replace=False)
                cluster_members[next_id] = group
                cluster_classes[next_id] = label
                for p in sorted(int(i) for i in picks):
                    references.append((next_id, group[p]))
                remaining -= take
                next_id += 1
        return BaselineContext(cluster_members, references, cluster_classes)

    if method == "dummy":
        shares = _spread_evenly(feature_count, len(class_names))
        cluster_members = {}
        references = []
        cluster_classes = {}
        for cid, (label, share) in enumerate(zip(class_names, shares)):
            cluster_members[cid] = by_class[label]
            cluster_classes[cid] = label
            share = min(share, len(train_ids))
            picks = rng.choice(len(train_ids), size=share, replace=False)
            for p in sorted(int(i) for i in picks):
                references.append((cid, train_ids[p]))
        return BaselineContext(cluster_members, references, cluster_classes)

    # kbest family
    scorer = _SCORERS[method]
    row_pos = {oid: i for i, oid in enumerate(behavior.row_ids)}
    train_rows = np.array([behavior.values[row_pos[oid]] for oid in train_ids])
    y = [labels[oid] for oid in train_ids]
    scores = scorer(train_rows, y)
    count = min(feature_count, len(train_ids))
    if count < feature_count:
        warnings.warn("feature count clipped to the number of training columns")
    order = np.lexsort((np.arange(len(scores)), -scores))  # score desc, index asc
    selected = [int(i) for i in order[:count]]
    k = min(count, len(train_ids))
    km_labels, _ = kmeans(train_rows[:, selected], k, seed)
    cluster_members = {}
    for cid in range(k):
        group = [train_ids[i] for i in np.flatnonzero(km_labels == cid)]
        if group:
            cluster_members[cid] = group
    references = []
    for col in selected:
        ref_id = train_ids[col]
        cid = int(km_labels[train_ids.index(ref_id)])
        references.append((cid, ref_id))
    cluster_classes = {cid: f"kmeans-{cid}" for cid in cluster_members}
    return BaselineContext(cluster_members, references, cluster_classes)


# ---------------------------------------------------------------------------
# nearest neighbors


def knn_predict(
    train_X: np.ndarray, train_y: list, test_X: np.ndarray, k: int
) -> tuple[list, np.ndarray]:
    """Majority vote over the k nearest training rows.

    Vote ties break by the smaller mean neighbor distance, then by
    lexicographic label. Returns predictions and per-class vote shares.
    Requests for more neighbors than training rows are clipped with a
    warning.
    """
    train_X = np.asarray(train_X, dtype=np.float64)
    test_X = np.asarray(test_X, dtype=np.float64)
    if train_X.shape[1] != test_X.shape[1]:
        raise DimensionError("train and test feature widths differ")
    if k > len(train_X):
        warnings.warn(f"k={k} clipped to {len(train_X)} training rows")
        k = len(train_X)
    if k < 1:
        raise InvalidInput("need at least one neighbor")
    classes = sorted(set(train_y))
    train_y = list(train_y)
    preds = []
    shares = np.zeros((len(test_X), len(classes)), dtype=np.float64)
    for i, row in enumerate(test_X):
        dist = np.sqrt(((train_X - row) ** 2).sum(axis=1))
        neighbors = np.argsort(dist, kind="stable")[:k]
        votes: dict = {}
        for j in neighbors:
            label = train_y[j]
            count, total = votes.get(label, (0, 0.0))
            votes[label] = (count + 1, total + float(dist[j]))
        top = max(count for count, _ in votes.values())
        tied = [
            (total / count, label)
            for label, (count, total) in votes.items()
            if count == top
        ]
        tied.sort()  # mean distance, then lexicographic label
        preds.append(tied[0][1])
        for label, (count, _) in votes.items():
            shares[i, classes.index(label)] = count / k
    return preds, shares


# ---------------------------------------------------------------------------
# fragment voting


def fragment_vote(
    fragment_ids: list[str],
    probabilities: np.ndarray,
    classes: list,
    fragment_to_file: dict[str, str],
    expected_files: list[str] | None = None,
) -> dict[str, object]:
    """File predictions from fragment probabilities.

    Each file adopts the class of its most confident fragment (highest
    top-class probability; ties go to the fragment appearing earliest).
    """
    probabilities = np.asarray(probabilities, dtype=np.float64)
    per_file: dict[str, tuple[float, int]] = {}
    for pos, frag in enumerate(fragment_ids):
        fname = fragment_to_file[frag]
        top = float(probabilities[pos].max())
        if fname not in per_file or top > per_file[fname][0]:
            per_file[fname] = (top, pos)
    if expected_files is not None:
        missing = [f for f in expected_files if f not in per_file]
        if missing:
            raise MissingFragments(f"files without fragments: {missing[:3]}")
    out = {}
    for fname, (_top, pos) in per_file.items():
        out[fname] = classes[int(np.argmax(probabilities[pos]))]
    return out


# ---------------------------------------------------------------------------
# the experiment protocol


@dataclass(frozen=True)
class MethodConfig:
    """One evaluated method and its parameters."""

    method: str = "ours"
    feature_count: int | None = None  # baselines; defaults to classes * refs
    steering: SteeringConfig = field(default_factory=SteeringConfig)
    knn_k: int = 3
    iterations: int = 10  # rescoring rounds for random and dummy
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidInput(f"unknown method {self.method!r}")
        if self.iterations < 1:
            raise InvalidInput("iterations must be at least 1")


@dataclass(frozen=True)
class FoldScores:
    fold: int
    train_f1: float
    test_f1: float
    train_silhouette: float
    test_silhouette: float
    feature_count: int
    file_test_f1: float | None = None


@dataclass(frozen=True)
class EvalReport:
    method: str
    provenance: dict
    fold_scores: tuple[FoldScores, ...]
    wall_clock_sec: float

    def mean(self, attr: str) -> float:
        vals = [getattr(f, attr) for f in self.fold_scores]
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else float("nan")

    def to_records(self) -> list[dict]:
        """Per-fold records plus one aggregate record."""
        records = []
        for f in self.fold_scores:
            rec = {
                "fold": f.fold,
                "train_f1": f.train_f1,
                "test_f1": f.test_f1,
                "train_silhouette": f.train_silhouette,
                "test_silhouette": f.test_silhouette,
                "feature_count": f.feature_count,
            }
            if f.file_test_f1 is not None:
                rec["file_test_f1"] = f.file_test_f1
            records.append(rec)
        aggregate = {
            "aggregate": True,
            "method": self.method,
            "train_f1": self.mean("train_f1"),
            "test_f1": self.mean("test_f1"),
            "train_silhouette": self.mean("train_silhouette"),
            "test_silhouette": self.mean("test_silhouette"),
            "feature_count": self.mean("feature_count"),
            "wall_clock_sec": self.wall_clock_sec,
            "provenance": self.provenance,
        }
        if any(f.file_test_f1 is not None for f in self.fold_scores):
            aggregate["file_test_f1"] = self.mean("file_test_f1")
        records.append(aggregate)
        return records


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _train_square(behavior: BehaviorMatrix, matrix: DistanceMatrix) -> DistanceMatrix:
    """Square training submatrix aligned with the masked columns."""
    rows = [matrix.index_of(oid) for oid in behavior.col_ids]
    label_map = matrix.label_map()
    return DistanceMatrix(
        object_ids=behavior.col_ids,
        labels=tuple(label_map[oid] for oid in behavior.col_ids),
        values=matrix.values[np.ix_(rows, rows)].copy(),
        measure=matrix.measure,
        codec=matrix.codec,
        row_stats=matrix.row_stats,
    )


def _score_features(
    features: np.ndarray,
    behavior_row_ids: tuple[str, ...],
    labels: dict[str, str],
    train_ids: tuple[str, ...],
    test_ids: tuple[str, ...],
    seed: int,
) -> tuple[float, float, float, float, np.ndarray, list, list[str]]:
    """Fit the forest on training features, score both splits."""
    pos = {oid: i for i, oid in enumerate(behavior_row_ids)}
    train_rows = [pos[oid] for oid in train_ids]
    test_rows = [pos[oid] for oid in test_ids]
    y_train = [labels[oid] for oid in train_ids]
    y_test = [labels[oid] for oid in test_ids]
    model = RandomForest(seed=seed).fit(features[train_rows], y_train)
    pred_train = model.predict(features[train_rows])
    proba_test = model.predict_proba(features[test_rows])
    pred_test = [model.classes_[i] for i in np.argmax(proba_test, axis=1)]
    train_f1 = macro_f1(y_train, pred_train)
    test_f1 = macro_f1(y_test, pred_test)
    train_sil = _safe_silhouette(y_train, features[train_rows])
    test_sil = _safe_silhouette(y_test, features[test_rows])
    return train_f1, test_f1, train_sil, test_sil, proba_test, model.classes_, y_test


def _safe_silhouette(labels: list, features: np.ndarray) -> float:
    """Silhouette of the true classes in feature space; NaN when undefined."""
    if len(set(labels)) < 2:
        return float("nan")
    n = len(features)
    pairwise = np.zeros((n, n))
    for i in range(n):
        pairwise[i] = np.sqrt(((features - features[i]) ** 2).sum(axis=1))
    codes = [sorted(set(labels)).index(v) for v in labels]
    return silhouette(codes, pairwise)[0]


def run_experiment(
    matrix: DistanceMatrix,
    labels: dict[str, str],
    method: MethodConfig,
    folds: FoldPlan,
    standardize: str | RowStats = "none",
    fragment_to_file: dict[str, str] | None = None,
) -> EvalReport:
    """Cross-validated scores for one method under the masking protocol.

    ``standardize`` applies to relative-measure matrices: "pipeline"
    derives each row's statistics from that fold's training columns,
    while a RowStats instance applies fixed external statistics. Methods
    with random context (random, dummy) are rescored ``iterations`` times
    per fold and averaged.
    """
    if len(set(labels.values())) < 2:
        raise DegenerateLabels("evaluation needs at least two classes")
    started = time.perf_counter()
    scores: list[FoldScores] = []
    for fold_index, fold in enumerate(folds.folds):
        work = matrix
        if matrix.measure == "nrc":
            if standardize == "pipeline":
                stats = row_stats_from_matrix(matrix, fold.train_ids, "pipeline")
                work = standardize_rows(matrix, stats)
            elif isinstance(standardize, RowStats):
                work = standardize_rows(matrix, standardize)
            elif standardize != "none":
                raise InvalidInput(f"unknown standardization {standardize!r}")
        behavior = mask_columns(work, fold.train_ids)
        square = _train_square(behavior, work)

        if method.method == "knn":
            pos = {oid: i for i, oid in enumerate(behavior.row_ids)}
            train_rows = np.array([behavior.values[pos[oid]] for oid in fold.train_ids])
            test_rows = np.array([behavior.values[pos[oid]] for oid in fold.test_ids])
            y_train = [labels[oid] for oid in fold.train_ids]
            y_test = [labels[oid] for oid in fold.test_ids]
            pred_train, _ = knn_predict(train_rows, y_train, train_rows, method.knn_k)
            pred_test, shares = knn_predict(train_rows, y_train, test_rows, method.knn_k)
            fold_score = FoldScores(
                fold=fold_index,
                train_f1=macro_f1(y_train, pred_train),
                test_f1=macro_f1(y_test, pred_test),
                train_silhouette=_safe_silhouette(y_train, train_rows),
                test_silhouette=_safe_silhouette(y_test, test_rows),
                feature_count=train_rows.shape[1],
                file_test_f1=_file_f1(
                    fragment_to_file, fold.test_ids, shares, sorted(set(y_train)), labels
                ),
            )
            scores.append(fold_score)
            continue

        feature_count = method.feature_count
        if feature_count is None:
            feature_count = len(set(labels.values())) * method.steering.refs_per_cluster

        rounds = method.iterations if method.method in ("random", "dummy") else 1
        acc = np.zeros(5, dtype=np.float64)  # f1s, silhouettes, feature count
        file_acc: list[float] = []
        for it in range(rounds):
            if method.method == "ours":
                train_labels = {oid: labels[oid] for oid in fold.train_ids}
                model = build_embedding_model(square, train_labels, method.steering)
            else:
                ctx = baseline_context(
                    method.method,
                    behavior,
                    labels,
                    feature_count,
                    method.steering.refs_per_cluster,
                    _derived_seed(method.seed, fold_index, it),
                )
                model = model_from_context(
                    square,
                    ctx.cluster_members,
                    ctx.references,
                    method.steering.f_aggregate,
                    method.steering.weighting_mode,
                    ctx.cluster_classes,
                )
            features = embed_rows(model, behavior.row_ids, behavior.values, behavior.col_ids)
            train_f1, test_f1, train_sil, test_sil, proba, classes, _ = _score_features(
                features,
                behavior.row_ids,
                labels,
                fold.train_ids,
                fold.test_ids,
                _derived_seed(method.seed, fold_index, it, 7),
            )
            acc += np.array([train_f1, test_f1, train_sil, test_sil, model.n_features])
            file_f1 = _file_f1(fragment_to_file, fold.test_ids, proba, classes, labels)
            if file_f1 is not None:
                file_acc.append(file_f1)
        acc /= rounds
        scores.append(
            FoldScores(
                fold=fold_index,
                train_f1=float(acc[0]),
                test_f1=float(acc[1]),
                train_silhouette=float(acc[2]),
                test_silhouette=float(acc[3]),
                feature_count=int(round(acc[4])),
                file_test_f1=float(np.mean(file_acc)) if file_acc else None,
            )
        )
    provenance = {
        "method": method.method,
        "measure": matrix.measure,
        "codec": matrix.codec.value,
        "standardize": standardize if isinstance(standardize, str) else "external",
        "folds": folds.k,
        "fold_seed": folds.seed,
        "seed": method.seed,
        "feature_count": method.feature_count,
        "refs_per_cluster": method.steering.refs_per_cluster,
        "policy": method.steering.policy.kind,
        "f_aggregate": method.steering.f_aggregate,
        "weighting_mode": method.steering.weighting_mode,
        "ref_strategy": method.steering.ref_strategy,
        "iterations": method.iterations,
        "knn_k": method.knn_k,
    }
    return EvalReport(
        method=method.method,
        provenance=provenance,
        fold_scores=tuple(scores),
        wall_clock_sec=time.perf_counter() - started,
    )


def _file_f1(
    fragment_to_file: dict[str, str] | None,
    test_ids: tuple[str, ...],
    proba: np.ndarray,
    classes: list,
    labels: dict[str, str],
) -> float | None:
    """Macro F1 at file level after most-confident-fragment voting."""
    if not fragment_to_file:
        return None
    covered = [oid for oid in test_ids if oid in fragment_to_file]
    if not covered:
        return None
    keep = [i for i, oid in enumerate(test_ids) if oid in fragment_to_file]
    votes = fragment_vote(
        [test_ids[i] for i in keep],
        proba[keep],
        classes,
        fragment_to_file,
    )
    truth = {}
    for oid in covered:
        truth[fragment_to_file[oid]] = labels[oid]
    files = sorted(votes)
    return macro_f1([truth[f] for f in files], [votes[f] for f in files])


# ---------------------------------------------------------------------------
# sweeps


def class_subset_sweep(
    matrix: DistanceMatrix,
    labels: dict[str, str],
    method: MethodConfig,
    sizes: list[int],
    k: int,
    seed: int,
    standardize: str | RowStats = "none",
) -> list[dict]:
    """Evaluate a method over every class subset of the requested sizes.

    Returns one record per subset with the class tuple and the mean test
    F1; the caller aggregates (typically by median per size).
    """
    from itertools import combinations

    class_names = sorted(set(labels.values()))
    records = []
    for size in sizes:
        if size < 2 or size > len(class_names):
            raise InvalidInput(f"subset size {size} out of range")
        for combo in combinations(class_names, size):
            keep = {oid for oid, lab in labels.items() if lab in combo}
            sub = matrix.subset(keep)
            sub_labels = {oid: labels[oid] for oid in sub.object_ids}
            folds = make_folds(sub_labels, k, seed)
            report = run_experiment(sub, sub_labels, method, folds, standardize)
            records.append(
                {
                    "classes": combo,
                    "n_classes": size,
                    "test_f1": report.mean("test_f1"),
                    "test_silhouette": report.mean("test_silhouette"),
                    "report": report,
                }
            )
    return records


def median_f1_by_size(records: list[dict]) -> dict[int, float]:
    by_size: dict[int, list[float]] = {}
    for rec in records:
        by_size.setdefault(rec["n_classes"], []).append(rec["test_f1"])
    return {size: float(np.median(vals)) for size, vals in sorted(by_size.items())}


def grid_points(grid: dict[str, list]) -> list[dict]:
    """Cartesian product of a parameter grid, in key-sorted order."""
    from itertools import product

    keys = sorted(grid)
    return [dict(zip(keys, combo)) for combo in product(*(grid[k] for k in keys))]


# ---------------------------------------------------------------------------
# report files


def save_report(report: EvalReport, json_path, extra: dict | None = None) -> None:
    records = report.to_records()
    if extra:
        records[-1].update(extra)
    atomic_write_text(json_path, json.dumps(records, indent=2, sort_keys=True) + "\n")


SUMMARY_HEADER = "method,codec,measure,classes,feature_count,test_f1_mean,test_sil_mean"


def summary_line(report: EvalReport, n_classes: int) -> str:
    return ",".join(
        [
            report.method,
            report.provenance["codec"],
            report.provenance["measure"],
            str(n_classes),
            repr(report.mean("feature_count")),
            repr(report.mean("test_f1")),
            repr(report.mean("test_silhouette")),
        ]
    )
