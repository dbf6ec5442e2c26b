"""Compression distances between corpus objects.

Two measures are provided. The concatenation measure divides the extra
cost of compressing x next to y by the larger standalone cost:

    ncd(x, y) = (C(xy) - min(C(x), C(y))) / max(C(x), C(y))

The relative measure divides the bit cost of parsing x against a
reference by the uncompressed bit budget of x:

    nrc(x, y) = bits(x | y) / (|x| * log2(alphabet_size of x))

The alphabet term always uses the target's own alphabet, so objects over
different alphabets remain on comparable scales. Full pairwise matrices
keep both orderings because neither measure is exactly symmetric.
"""

from __future__ import annotations

import binascii
import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .compressors import (
    CodecId,
    ReferenceIndex,
    compressed_size,
    concat_compressed_size,
    rlz_compressed_size_bits,
    rlz_factorize,
)
from .errors import (
    CodecError,
    InsufficientReferences,
    InvalidInput,
    MeasureMismatch,
    MissingStats,
    WrongCodecFamily,
)

MEASURES = ("ncd", "nrc", "nrc-standardized")

# Standard deviations are floored here before any division.
STD_FLOOR = 1e-12


@dataclass(frozen=True)
class CorpusObject:
    """One unit of content: an id, a class label, and a byte payload.

    ``alphabet_size`` is the number of distinct symbols in the payload
    unless the caller overrides it (useful when several objects should
    share one nominal alphabet). It is floored at 2 so the log2 budget in
    the relative measure never degenerates.
    """

    id: str
    class_label: str
    payload: bytes
    alphabet_size: int | None = None

    def __post_init__(self):
        if not self.payload:
            raise InvalidInput(f"object {self.id!r} has an empty payload")
        if self.alphabet_size is None:
            derived = max(2, len(set(self.payload)))
            object.__setattr__(self, "alphabet_size", derived)
        elif self.alphabet_size < 2:
            raise InvalidInput(f"object {self.id!r}: alphabet_size must be >= 2")


@dataclass(frozen=True)
class RowStats:
    """Per-object row mean and standard deviation, with their provenance.

    ``provenance`` records where the statistics came from: an external
    reference set or the training side of the running pipeline.
    """

    stats: dict[str, tuple[float, float]]
    provenance: str  # "external" | "pipeline"

    def __post_init__(self):
        if self.provenance not in ("external", "pipeline"):
            raise InvalidInput(f"unknown stats provenance {self.provenance!r}")

    def mean_std(self, object_id: str) -> tuple[float, float]:
        try:
            return self.stats[object_id]
        except KeyError:
            raise MissingStats(f"no row statistics for {object_id!r}") from None


@dataclass(frozen=True)
class DistanceMatrix:
    """Square matrix of pairwise distances, rows are targets."""

    object_ids: tuple[str, ...]
    labels: tuple[str, ...]
    values: np.ndarray
    measure: str
    codec: CodecId
    row_stats: RowStats | None = None
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.measure not in MEASURES:
            raise InvalidInput(f"unknown measure {self.measure!r}")
        n = len(self.object_ids)
        if len(set(self.object_ids)) != n:
            raise InvalidInput("object ids must be unique")
        if len(self.labels) != n:
            raise InvalidInput("labels must align with object ids")
        if self.values.shape != (n, n):
            raise InvalidInput(f"values must be {n}x{n}")
        object.__setattr__(self, "_index", {oid: i for i, oid in enumerate(self.object_ids)})

    def index_of(self, object_id: str) -> int:
        return self._index[object_id]

    def label_map(self) -> dict[str, str]:
        return dict(zip(self.object_ids, self.labels))

    def subset(self, ids) -> "DistanceMatrix":
        """Restrict rows and columns to ``ids``, preserving current order."""
        keep = [i for i, oid in enumerate(self.object_ids) if oid in set(ids)]
        return replace(
            self,
            object_ids=tuple(self.object_ids[i] for i in keep),
            labels=tuple(self.labels[i] for i in keep),
            values=self.values[np.ix_(keep, keep)].copy(),
        )


def hex_encode(data: bytes) -> bytes:
    """Lowercase hex transcription of a byte string (16-symbol alphabet)."""
    return binascii.hexlify(data)


def ncd_value(cx: int, cy: int, cxy: int) -> float:
    """Concatenation measure from raw sizes, clamped below at zero.

    Values slightly above 1 are preserved; real codecs produce them.
    """
    if min(cx, cy, cxy) <= 0:
        raise InvalidInput("compressed sizes must be positive")
    return max(0.0, (cxy - min(cx, cy)) / max(cx, cy))


def nrc_value(cost_bits: float, length: int, alphabet_size: int) -> float:
    """Relative measure from a priced parse and the target's bit budget."""
    if length < 1 or alphabet_size < 2:
        raise InvalidInput("need a non-empty target over an alphabet of >= 2 symbols")
    return cost_bits / (length * math.log2(alphabet_size))


def ncd(x: CorpusObject, y: CorpusObject, codec: CodecId) -> float:
    """Concatenation distance between two objects under a general codec."""
    codec = CodecId(codec)
    if not codec.is_general_purpose:
        raise WrongCodecFamily("the concatenation measure needs a general-purpose codec")
    try:
        cx = compressed_size(x.payload, codec)
        cy = compressed_size(y.payload, codec)
        cxy = concat_compressed_size(x.payload, y.payload, codec)
    except (InvalidInput, WrongCodecFamily):
        raise
    except Exception as exc:  # backend failure, keep the pair visible
        raise CodecError(f"codec {codec.value} failed on pair ({x.id}, {y.id})") from exc
    return ncd_value(cx, cy, cxy)


def nrc(
    x: CorpusObject, reference: CorpusObject, index: ReferenceIndex | None = None
) -> float:
    """Relative distance of ``x`` parsed against ``reference``.

    The denominator uses the target's own length and alphabet, so the
    value is a cost per available bit of the target.
    """
    try:
        parse = rlz_factorize(x.payload, reference.payload, index)
        bits = rlz_compressed_size_bits(parse, len(reference.payload), x.alphabet_size)
    except InvalidInput:
        raise
    except Exception as exc:
        raise CodecError(f"relative parse failed on pair ({x.id}, {reference.id})") from exc
    return nrc_value(bits, len(x.payload), x.alphabet_size)


def _validate_corpus(corpus: list[CorpusObject]) -> None:
    if len(corpus) < 2:
        raise InvalidInput("need at least two objects for a distance matrix")
    ids = [obj.id for obj in corpus]
    if len(set(ids)) != len(ids):
        raise InvalidInput("corpus object ids must be unique")


def build_distance_matrix(
    corpus: list[CorpusObject],
    measure: str,
    codec: CodecId,
    workers: int = 1,
) -> DistanceMatrix:
    """Full pairwise matrix over the corpus, diagonal included.

    Rows are targets: entry (i, j) is ncd(i, j) or nrc(i parsed against j).
    Work is split by row (concatenation measure) or by reference column
    (relative measure); results land in preassigned slots, so any worker
    count yields bitwise-identical matrices.
    """
    _validate_corpus(corpus)
    codec = CodecId(codec)
    if measure == "ncd":
        if not codec.is_general_purpose:
            raise WrongCodecFamily("the concatenation measure needs a general-purpose codec")
    elif measure == "nrc":
        if codec is not CodecId.RLZ:
            raise WrongCodecFamily("the relative measure requires the rlz codec")
    else:
        raise InvalidInput(f"cannot build a matrix directly for measure {measure!r}")

    n = len(corpus)
    values = np.zeros((n, n), dtype=np.float64)

    if measure == "ncd":
        sizes = [compressed_size(obj.payload, codec) for obj in corpus]

        def ncd_row(i: int) -> np.ndarray:
            row = np.empty(n, dtype=np.float64)
            for j, other in enumerate(corpus):
                try:
                    cxy = concat_compressed_size(corpus[i].payload, other.payload, codec)
                except Exception as exc:
                    raise CodecError(
                        f"codec {codec.value} failed on pair ({corpus[i].id}, {other.id})"
                    ) from exc
                row[j] = ncd_value(sizes[i], sizes[j], cxy)
            return row

        rows = _run_indexed(ncd_row, n, workers)
        for i, row in enumerate(rows):
            values[i] = row
    else:

        def nrc_column(j: int) -> np.ndarray:
            ref = corpus[j]
            idx = ReferenceIndex(ref.payload)
            col = np.empty(n, dtype=np.float64)
            for i, obj in enumerate(corpus):
                col[i] = nrc(obj, ref, idx)
            return col

        cols = _run_indexed(nrc_column, n, workers)
        for j, col in enumerate(cols):
            values[:, j] = col

    return DistanceMatrix(
        object_ids=tuple(obj.id for obj in corpus),
        labels=tuple(obj.class_label for obj in corpus),
        values=values,
        measure=measure,
        codec=codec,
    )


def _run_indexed(fn, count: int, workers: int) -> list:
    """Evaluate fn(0..count-1), optionally on a thread pool, in index order."""
    if workers <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(count)))


def _population_stats(values: np.ndarray) -> tuple[float, float]:
    mean = float(np.mean(values))
    std = float(np.std(values))  # population form, divide by N
    return mean, max(std, STD_FLOOR)


def compute_row_stats(
    targets: list[CorpusObject],
    references: list[CorpusObject],
    provenance: str = "external",
) -> RowStats:
    """Mean and population std of each target's distances to a reference set.

    A target appearing in the reference set is not measured against itself;
    that self-distance would drag the statistics toward zero.
    """
    if len(references) < 2:
        raise InsufficientReferences("need at least two references for row statistics")
    indexes = [(ref, ReferenceIndex(ref.payload)) for ref in references]
    stats: dict[str, tuple[float, float]] = {}
    for target in targets:
        row = [
            nrc(target, ref, idx) for ref, idx in indexes if ref.id != target.id
        ]
        stats[target.id] = _population_stats(np.asarray(row, dtype=np.float64))
    return RowStats(stats=stats, provenance=provenance)


def row_stats_from_matrix(
    matrix: DistanceMatrix, reference_ids, provenance: str = "pipeline"
) -> RowStats:
    """Row statistics read off an existing relative-measure matrix.

    Each row is summarized over the columns named by ``reference_ids``,
    self column included: the statistics then describe exactly the values
    that standardization will transform, which is what keeps standardized
    rows at mean 0 and population std 1.
    """
    if matrix.measure != "nrc":
        raise MeasureMismatch("row statistics come from a relative-measure matrix")
    ref_set = set(reference_ids)
    cols = [i for i, oid in enumerate(matrix.object_ids) if oid in ref_set]
    if len(cols) < 2:
        raise InsufficientReferences("need at least two reference columns")
    block = matrix.values[:, cols]
    stats = {
        oid: _population_stats(block[i]) for i, oid in enumerate(matrix.object_ids)
    }
    return RowStats(stats=stats, provenance=provenance)


def standardize_rows(matrix: DistanceMatrix, stats: RowStats) -> DistanceMatrix:
    """Shift and scale each row by its own statistics.

    Only relative-measure matrices can be standardized, and only once:
    the result is tagged with a distinct measure name so a second pass
    fails loudly instead of silently double-scaling.
    """
    if matrix.measure != "nrc":
        raise MeasureMismatch(f"cannot standardize a {matrix.measure!r} matrix")
    out = np.empty_like(matrix.values)
    for i, oid in enumerate(matrix.object_ids):
        mean, std = stats.mean_std(oid)
        out[i] = (matrix.values[i] - mean) / max(std, STD_FLOOR)
    return replace(matrix, values=out, measure="nrc-standardized", row_stats=stats)


# ---------------------------------------------------------------------------
# file formats


def atomic_write_text(path, text: str) -> None:
    """Write a file via a temp sibling and rename, so readers never see halves."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sidecar_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".json")


def save_matrix(matrix: DistanceMatrix, csv_path, extra: dict | None = None) -> None:
    """Write the matrix as CSV plus a JSON sidecar with everything else.

    Cell values use Python's shortest round-trip float formatting, so a
    load immediately after a save reproduces the matrix bit for bit.
    """
    lines = ["id," + ",".join(matrix.object_ids)]
    for i, oid in enumerate(matrix.object_ids):
        lines.append(oid + "," + ",".join(repr(v) for v in matrix.values[i].tolist()))
    atomic_write_text(csv_path, "\n".join(lines) + "\n")

    meta = {
        "measure": matrix.measure,
        "codec": matrix.codec.value,
        "labels": {oid: lab for oid, lab in zip(matrix.object_ids, matrix.labels)},
        "row_stats": None
        if matrix.row_stats is None
        else {
            "provenance": matrix.row_stats.provenance,
            "stats": {k: list(v) for k, v in matrix.row_stats.stats.items()},
        },
    }
    if extra:
        meta.update(extra)
    atomic_write_text(sidecar_path(csv_path), json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_matrix(csv_path) -> DistanceMatrix:
    """Read a matrix written by save_matrix (CSV plus sidecar)."""
    csv_path = Path(csv_path)
    text = csv_path.read_text(encoding="utf-8")
    rows = [line.split(",") for line in text.strip().splitlines()]
    header = rows[0]
    if header[0] != "id":
        raise InvalidInput(f"{csv_path}: not a distance matrix file")
    ids = tuple(header[1:])
    values = np.array([[float(v) for v in row[1:]] for row in rows[1:]], dtype=np.float64)
    row_ids = tuple(row[0] for row in rows[1:])
    if row_ids != ids:
        raise InvalidInput(f"{csv_path}: row order does not match the header")

    meta = json.loads(sidecar_path(csv_path).read_text(encoding="utf-8"))
    stats = None
    if meta.get("row_stats"):
        stats = RowStats(
            stats={k: (v[0], v[1]) for k, v in meta["row_stats"]["stats"].items()},
            provenance=meta["row_stats"]["provenance"],
        )
    return DistanceMatrix(
        object_ids=ids,
        labels=tuple(meta["labels"][oid] for oid in ids),
        values=values,
        measure=meta["measure"],
        codec=CodecId(meta["codec"]),
        row_stats=stats,
    )
