"""Seeded synthetic text corpora for demos and tests.

Each class is an order-2 Markov source over a small letter alphabet.
Sources can share a fraction of their transition mass with a common
background source, which makes classes overlap in a controlled way, and
a class can mix in documents from a secondary dialect so that it has
internal structure worth clustering.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

ALPHABET = b"abcdefghijklmnop"


def _transition_table(rng: np.random.Generator, sharpness: float = 12.0) -> np.ndarray:
    """Random order-2 transition table; higher sharpness, stronger signature."""
    a = len(ALPHABET)
    raw = rng.random((a, a, a)) ** sharpness
    return raw / raw.sum(axis=2, keepdims=True)


def _blend(primary: np.ndarray, background: np.ndarray, background_share: float) -> np.ndarray:
    return (1.0 - background_share) * primary + background_share * background


def markov_text(table: np.ndarray, length: int, rng: np.random.Generator) -> bytes:
    a = len(ALPHABET)
    out = bytearray()
    prev2, prev1 = rng.integers(0, a), rng.integers(0, a)
    for _ in range(length):
        nxt = rng.choice(a, p=table[prev2, prev1])
        out.append(ALPHABET[nxt])
        prev2, prev1 = prev1, nxt
    return bytes(out)


def markov_corpus(
    n_classes: int,
    docs_per_class: int,
    doc_length: int,
    seed: int,
    background_share: float = 0.0,
    dialect_share: float = 0.0,
) -> list[tuple[str, str, bytes]]:
    """(id, class, payload) triples from seeded order-2 Markov sources.

    ``background_share`` blends every class toward one shared source.
    ``dialect_share`` is the fraction of each class's documents drawn from
    a second, related dialect of the same class (its table re-blended with
    fresh noise), giving classes internal substructure.
    """
    rng = np.random.default_rng(seed)
    background = _transition_table(rng)
    docs = []
    for c in range(n_classes):
        label = f"class{c}"
        primary = _blend(_transition_table(rng), background, background_share)
        dialect = _blend(primary, _transition_table(rng), 0.5)
        n_dialect = int(round(docs_per_class * dialect_share))
        for d in range(docs_per_class):
            table = dialect if d < n_dialect else primary
            payload = markov_text(table, doc_length, rng)
            docs.append((f"{label}/doc{d:03d}.txt", label, payload))
    return docs


def write_corpus(root, docs: list[tuple[str, str, bytes]]) -> Path:
    """Materialize a corpus as <root>/<class>/<file> for the command line."""
    root = Path(root)
    for doc_id, _label, payload in docs:
        path = root / doc_id
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)
    return root
