"""Release gate: the behavioral contract the package must keep.

Nine checks, one test each, ordered from core invariants to full
desk-scale runs. Every numeric bound was computed once against the
frozen fixtures in this file and then pinned, so a failure here means
observable behavior changed, not that a tolerance was guessed badly.
Each test ends by printing a single PASS line; running with ``-s``
reads as a checklist.
"""

import itertools
import os
import time
from pathlib import Path

import numpy as np
import pytest

from compsteer import CodecId, CorpusObject, build_distance_matrix
from compsteer.clustering import (
    behavior_distance,
    best_partition,
    class_grouped_distance,
    enumerate_partitions,
    linkage,
    score_partition,
)
from compsteer.compressors import ReferenceIndex, rlz_factorize
from compsteer.distances import (
    DistanceMatrix,
    ncd,
    nrc,
    row_stats_from_matrix,
    standardize_rows,
)
from compsteer.evaluation import (
    MethodConfig,
    class_subset_sweep,
    make_folds,
    mask_columns,
    median_f1_by_size,
    run_experiment,
)
from compsteer.synthetic import markov_corpus

from conftest import compressible_text, corpus_objects, random_payload
from oracles import naive_ward


def _gate(n, message):
    print(f"gate {n}/9 PASS: {message}")


def test_gate_1_fold_masking_never_leaks_test_columns():
    """Retained columns and test ids stay disjoint across 100 seeded plans."""
    rng = np.random.default_rng(42)
    for _ in range(100):
        n_classes = int(rng.integers(2, 5))
        k = int(rng.integers(2, 6))
        labels = {}
        for c in range(n_classes):
            for i in range(k + int(rng.integers(0, 8))):
                labels[f"c{c}x{i:02d}"] = f"class{c}"
        ids = sorted(labels)
        raw = rng.random((len(ids), len(ids)))
        values = (raw + raw.T) / 2
        np.fill_diagonal(values, 0.0)
        matrix = DistanceMatrix(
            tuple(ids), tuple(labels[oid] for oid in ids), values,
            "ncd", CodecId.DEFLATE,
        )
        plan = make_folds(labels, k, seed=int(rng.integers(0, 2**31)))
        for fold in plan.folds:
            behavior = mask_columns(matrix, fold.train_ids)
            assert set(behavior.col_ids) & set(fold.test_ids) == set()
            assert set(behavior.col_ids) == set(fold.train_ids)
            assert set(fold.train_ids) | set(fold.test_ids) == set(ids)
    _gate(1, "100 fold plans, retained columns never touch test ids")


def test_gate_2_ward_merges_match_full_scan_reference():
    """Heap-based linkage reproduces the O(n^3) rescan exactly, 200 seeds."""
    rng = np.random.default_rng(7)
    for trial in range(200):
        n = int(rng.integers(3, 13))
        condensed = rng.random(n * (n - 1) // 2) * 10.0
        tree = linkage(condensed, leaf_ids=[f"L{i}" for i in range(n)])
        assert list(tree.merges) == naive_ward(condensed), f"trial {trial}"
    _gate(2, "200 merge sequences identical to the full-scan reference")


def test_gate_3_best_partition_matches_exhaustive_rescoring():
    """The reported cut scores exactly at the max over every cut, 100 seeds."""
    rng = np.random.default_rng(13)
    for trial in range(100):
        n = int(rng.integers(4, 16))
        condensed = rng.random(n * (n - 1) // 2) * 5.0
        pairwise = np.zeros((n, n))
        pairwise[np.triu_indices(n, k=1)] = condensed
        pairwise += pairwise.T
        tree = linkage(condensed, leaf_ids=[f"L{i}" for i in range(n)])
        best = best_partition(tree, pairwise)
        scored = [score_partition(p, pairwise) for p in enumerate_partitions(tree)]
        top = max(p.mean_silhouette for p in scored)
        assert best.mean_silhouette == top, f"trial {trial}"
        assert best.k == min(p.k for p in scored if p.mean_silhouette == top)
    _gate(3, "100 trees, best cut equals exhaustive rescoring with fewest-clusters ties")


def test_gate_4_relative_parse_round_trip():
    """Expanding a parse against its reference reproduces the target exactly."""
    alphabet = b"abcd"
    references = [b"abcd", b"ddccbbaadcba", b"abababababcdcdcd"]
    indexes = [ReferenceIndex(r) for r in references]
    for length in range(1, 7):
        for combo in itertools.product(alphabet, repeat=length):
            target = bytes(combo)
            for ref, idx in zip(references, indexes):
                assert rlz_factorize(target, ref, idx).expand(ref) == target
    rng = np.random.default_rng(12)
    for length in range(7, 65):
        for _ in range(20):
            target = bytes(rng.integers(97, 101, length).astype(np.uint8))
            ref = bytes(
                rng.integers(97, 101, int(rng.integers(16, 257))).astype(np.uint8)
            )
            assert rlz_factorize(target, ref).expand(ref) == target
    for _ in range(1000):
        alpha = int(rng.integers(2, 17))
        target = bytes(
            rng.integers(0, alpha, int(rng.integers(65, 2049))).astype(np.uint8)
        )
        ref = bytes(
            rng.integers(0, alpha, int(rng.integers(100, 1501))).astype(np.uint8)
        )
        assert rlz_factorize(target, ref).expand(ref) == target
    _gate(4, "round trip exact on dense small targets and 1000 seeded larger ones")


def test_gate_5_grouped_distance_dominates_plain():
    """Per-class norm sums never fall below the plain euclidean distance."""
    rng = np.random.default_rng(5)
    for _ in range(10_000):
        d = int(rng.integers(2, 12))
        p = rng.normal(size=d)
        q = rng.normal(size=d)
        n_classes = int(rng.integers(1, min(d, 4) + 1))
        assignment = np.concatenate(
            [np.arange(n_classes), rng.integers(0, n_classes, d - n_classes)]
        )
        cmap = {
            f"c{c}": np.flatnonzero(assignment == c).tolist()
            for c in range(n_classes)
        }
        grouped = class_grouped_distance(p, q, cmap)
        plain = behavior_distance(p, q)
        if n_classes == 1:
            assert abs(grouped - plain) <= 1e-12
        else:
            assert grouped >= plain
    # equality case: the difference lives inside a single class block
    p = np.array([1.0, 2.0, 3.0, 4.0])
    q = np.array([1.0, 2.0, 5.0, 1.5])
    cmap = {"same": [0, 1], "moved": [2, 3]}
    assert abs(
        class_grouped_distance(p, q, cmap) - behavior_distance(p, q)
    ) <= 1e-12
    _gate(5, "10000 random pairs, grouped >= plain, equality cases within 1e-12")


def test_gate_6_standardized_rows_have_unit_moments(small_nrc_matrix):
    """Pipeline standardization leaves each row at mean 0, population std 1."""
    stats = row_stats_from_matrix(small_nrc_matrix, small_nrc_matrix.object_ids)
    standardized = standardize_rows(small_nrc_matrix, stats)
    assert np.abs(standardized.values.mean(axis=1)).max() <= 1e-9
    assert np.abs(standardized.values.std(axis=1) - 1.0).max() <= 1e-9

    labels = small_nrc_matrix.label_map()
    fold = make_folds(labels, 3, seed=0).folds[0]
    fold_stats = row_stats_from_matrix(small_nrc_matrix, fold.train_ids)
    fold_standardized = standardize_rows(small_nrc_matrix, fold_stats)
    cols = [small_nrc_matrix.index_of(oid) for oid in fold.train_ids]
    train_block = fold_standardized.values[:, cols]
    assert np.abs(train_block.mean(axis=1)).max() <= 1e-9
    assert np.abs(train_block.std(axis=1) - 1.0).max() <= 1e-9
    _gate(6, "row moments within 1e-9 of (0, 1) for whole-matrix and fold stats")


def test_gate_7_distance_sanity_bounds():
    """Self distances stay near 0 and independent random pairs near 1."""
    redundant = compressible_text()
    general = (CodecId.DEFLATE, CodecId.BZIP2, CodecId.LZMA)
    for codec in general:
        x = CorpusObject("x", "a", redundant)
        assert ncd(x, x, codec) < 0.15, codec

    rng = np.random.default_rng(20240501)
    for pair in range(20):
        a = CorpusObject("a", "a", random_payload(rng, 10240, alphabet=64, base=48))
        b = CorpusObject("b", "b", random_payload(rng, 10240, alphabet=64, base=48))
        for codec in general:
            assert ncd(a, b, codec) > 0.9, (pair, codec)

    x = CorpusObject("x", "a", random_payload(rng, 4096, alphabet=64, base=48))
    y = CorpusObject("y", "b", random_payload(rng, 4096, alphabet=64, base=48))
    text = CorpusObject("t", "a", redundant)
    assert nrc(x, x) <= 0.1
    assert nrc(text, text) <= 0.1
    assert nrc(x, y) >= 0.8
    assert nrc(y, x) >= 0.8
    _gate(7, "self < 0.15 (ncd) / <= 0.1 (nrc); random pairs > 0.9 / >= 0.8")


def test_gate_8_two_source_texts_classified_cleanly():
    """Sixty 2 KB documents from two seeded sources: high scores, clear wins."""
    started = time.monotonic()
    objects = [
        CorpusObject(doc_id, label, payload)
        for doc_id, label, payload in markov_corpus(2, 30, 2048, seed=101)
    ]
    matrix = build_distance_matrix(objects, "ncd", CodecId.DEFLATE)
    labels = matrix.label_map()
    ours_means, dummy_means = [], []
    for seed in range(5):
        folds = make_folds(labels, 5, seed=seed)
        ours = run_experiment(
            matrix, labels, MethodConfig(method="ours", seed=seed), folds
        )
        dummy = run_experiment(
            matrix, labels, MethodConfig(method="dummy", seed=seed), folds
        )
        ours_means.append(ours.mean("test_f1"))
        dummy_means.append(dummy.mean("test_f1"))
    elapsed = time.monotonic() - started
    assert np.mean(ours_means) >= 0.90
    assert np.mean(ours_means) > np.mean(dummy_means)
    assert elapsed < 120.0
    _gate(8, f"mean F1 {np.mean(ours_means):.3f} >= 0.90, dummy at "
             f"{np.mean(dummy_means):.3f}, {elapsed:.0f}s")


def test_gate_9_scores_degrade_monotonically_with_class_count():
    """More classes never raise the median score, and steering keeps its lead."""
    started = time.monotonic()
    objects = [
        CorpusObject(doc_id, label, payload)
        for doc_id, label, payload in markov_corpus(
            6, 6, 1500, seed=303, background_share=0.7
        )
    ]
    matrix = build_distance_matrix(objects, "ncd", CodecId.DEFLATE)
    labels = matrix.label_map()
    sizes = [2, 3, 4, 5]
    ours = median_f1_by_size(
        class_subset_sweep(
            matrix, labels, MethodConfig(method="ours", seed=0), sizes, k=3, seed=0
        )
    )
    rand = median_f1_by_size(
        class_subset_sweep(
            matrix, labels,
            MethodConfig(method="random", seed=0, iterations=3), sizes, k=3, seed=0,
        )
    )
    elapsed = time.monotonic() - started
    for smaller, larger in zip(sizes, sizes[1:]):
        assert ours[smaller] >= ours[larger], (smaller, larger)
    for size in sizes:
        assert ours[size] > rand[size], size
    assert elapsed < 120.0
    _gate(9, "medians " + " >= ".join(f"{ours[s]:.3f}" for s in sizes)
             + f", lead over random at every size, {elapsed:.0f}s")


EXTERNAL_CORPUS = Path(os.environ.get("COMPSTEER_AUTHOR_CORPUS", "/data/authors"))


@pytest.mark.skipif(
    not EXTERNAL_CORPUS.is_dir(),
    reason="author corpus not present; set COMPSTEER_AUTHOR_CORPUS to enable",
)
def test_author_corpus_regression():
    """Pinned scores for the two-author text corpus, when one is available.

    Expects a directory per author. The targets were frozen from
    reference runs: concatenation distances should land near 0.94 (bzip2
    class) and 0.96 (lzma class), and unstandardized relative distances
    must score clearly below their standardized counterpart.
    """
    from compsteer.cli import ingest_corpus

    objects, _fragments, _manifest = ingest_corpus(EXTERNAL_CORPUS)
    labels = {obj.id: obj.class_label for obj in objects}
    scores = {}
    for codec, expected in ((CodecId.BZIP2, 0.941), (CodecId.LZMA, 0.956)):
        matrix = build_distance_matrix(objects, "ncd", codec)
        folds = make_folds(labels, 5, seed=0)
        report = run_experiment(matrix, labels, MethodConfig(method="ours"), folds)
        scores[codec] = report.mean("test_f1")
        assert abs(scores[codec] - expected) <= 0.05

    relative = build_distance_matrix(objects, "nrc", CodecId.RLZ)
    folds = make_folds(labels, 5, seed=0)
    plain = run_experiment(relative, labels, MethodConfig(method="ours"), folds)
    scaled = run_experiment(
        relative, labels, MethodConfig(method="ours"), folds, standardize="pipeline"
    )
    assert plain.mean("test_f1") < scaled.mean("test_f1")
