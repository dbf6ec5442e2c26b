import numpy as np
import pytest

from compsteer import CodecId, CorpusObject, build_distance_matrix
from compsteer.synthetic import markov_corpus


def corpus_objects(n_classes, docs_per_class, doc_length, seed, **kwargs):
    return [
        CorpusObject(doc_id, label, payload)
        for doc_id, label, payload in markov_corpus(
            n_classes, docs_per_class, doc_length, seed, **kwargs
        )
    ]


@pytest.fixture(scope="session")
def small_ncd_matrix():
    """12 objects, 2 classes, deflate concatenation distances."""
    objs = corpus_objects(2, 6, 1200, seed=11)
    return build_distance_matrix(objs, "ncd", CodecId.DEFLATE)


@pytest.fixture(scope="session")
def small_nrc_matrix():
    """12 objects, 2 classes, relative distances."""
    objs = corpus_objects(2, 6, 1200, seed=11)
    return build_distance_matrix(objs, "nrc", CodecId.RLZ)


@pytest.fixture(scope="session")
def eval_matrix():
    """Larger 3-class matrix for evaluation tests (24 objects)."""
    objs = corpus_objects(3, 8, 1200, seed=23, dialect_share=0.25)
    return build_distance_matrix(objs, "ncd", CodecId.DEFLATE)


def random_payload(rng, length, alphabet=8, base=97):
    return bytes(rng.integers(base, base + alphabet, length).astype(np.uint8))


def compressible_text():
    """A ~10 KB deterministic passage that every general codec shrinks well.

    Built as an exact triple repeat of a block of templated sentences, so the
    content is redundant at both the phrase level (shared template words) and
    the block level (whole-block repeats). All numeric choices are frozen:
    regression bounds in the tests were derived from this exact payload.
    """
    subjects = ["archive", "ledger", "registry", "index", "catalog", "shelf",
                "vault", "manifest", "docket", "binder", "folio", "roster",
                "annex", "bureau"]
    verbs = ["holds", "tracks", "lists", "records", "stores", "checks", "audits"]
    objects_ = ["twelve sealed copies", "the weekly summaries",
                "every numbered entry", "the original receipts",
                "a verified duplicate", "the signed approvals"]
    rng = np.random.default_rng(7)
    sentences = []
    for i in range(63):
        sentences.append(
            "the {} {} {} of section {:02d}. ".format(
                subjects[rng.integers(0, len(subjects))],
                verbs[rng.integers(0, len(verbs))],
                objects_[rng.integers(0, len(objects_))],
                i,
            ).encode()
        )
    return b"".join(sentences) * 3
