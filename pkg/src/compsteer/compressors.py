"""Compressed-size oracles.

Three general-purpose byte compressors (deflate, a bzip2-style block
compressor, lzma) report C(x) in bytes for concatenation-based measures.
A relative Lempel-Ziv factorizer parses a target against a fixed reference
and a bit-cost model prices the parse, which is what reference-based
measures consume. Only sizes are produced here, never decodable streams.

All sizes are deterministic: codec parameters are fixed module constants,
and the factorizer resolves every tie explicitly.
"""

from __future__ import annotations

import bz2
import lzma
import zlib
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import InvalidInput, WrongCodecFamily

# Fixed, documented settings. One level per codec keeps every size
# reproducible across runs and platforms.
ZLIB_LEVEL = 9
BZ2_LEVEL = 9
LZMA_PRESET = 6

# Copies starting within this distance of the previous copy's continuation
# point are priced as an 8-bit signed delta instead of a full position.
ADAPTIVE_WINDOW = 127
DELTA_FIELD_BITS = 8


class CodecId(str, Enum):
    """Available codecs. The values double as their command-line spellings."""

    DEFLATE = "deflate"
    BZIP2 = "bzip2-class"
    LZMA = "lzma"
    RLZ = "rlz"

    @property
    def is_general_purpose(self) -> bool:
        """True for codecs that compress a byte string on its own."""
        return self is not CodecId.RLZ


def compressed_size(data: bytes, codec: CodecId) -> int:
    """Size in bytes of ``data`` under a general-purpose codec.

    The relative codec has no standalone size and is rejected with
    WrongCodecFamily. Empty input is rejected because a zero-length
    payload has no meaningful compressed size in any downstream measure.
    """
    codec = CodecId(codec)
    if not codec.is_general_purpose:
        raise WrongCodecFamily("rlz sizes require a reference; use rlz_factorize")
    if not data:
        raise InvalidInput("cannot size an empty payload")
    if codec is CodecId.DEFLATE:
        return len(zlib.compress(data, ZLIB_LEVEL))
    if codec is CodecId.BZIP2:
        return len(bz2.compress(data, BZ2_LEVEL))
    return len(lzma.compress(data, preset=LZMA_PRESET))


def concat_compressed_size(x: bytes, y: bytes, codec: CodecId) -> int:
    """Size in bytes of the concatenation ``x + y`` (in that order)."""
    if not x or not y:
        raise InvalidInput("cannot size a concatenation with an empty side")
    return compressed_size(x + y, codec)


@dataclass(frozen=True)
class RlzPhrase:
    """One factorization step.

    A copy pulls ``length`` symbols from ``position`` in the reference.
    A literal emits exactly one symbol, stored in ``literal``; its
    ``position`` is -1 and its ``length`` is 1.
    """

    kind: str  # "copy" | "literal"
    position: int
    length: int
    literal: int | None = None


@dataclass(frozen=True)
class RlzParse:
    """Greedy leftmost-longest parse of a target against one reference."""

    phrases: tuple[RlzPhrase, ...]
    reference_length: int
    total_cost_bits: int | None = None

    def expand(self, reference: bytes) -> bytes:
        """Reproduce the target the parse was built from."""
        out = bytearray()
        for ph in self.phrases:
            if ph.kind == "copy":
                out += reference[ph.position : ph.position + ph.length]
            else:
                out.append(ph.literal)
        return bytes(out)

    def with_cost(self, alphabet_size: int) -> "RlzParse":
        bits = rlz_compressed_size_bits(self, self.reference_length, alphabet_size)
        return replace(self, total_cost_bits=bits)


def _ceil_log2(x: int) -> int:
    # smallest b with 2**b >= x, i.e. the field width for x distinct values
    if x < 1:
        raise InvalidInput(f"cannot size a field for {x} values")
    return (x - 1).bit_length()


def _suffix_array(seq: np.ndarray) -> np.ndarray:
    """Suffix array by prefix doubling (O(n log^2 n), fully vectorized)."""
    n = len(seq)
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    rank = np.unique(seq, return_inverse=True)[1].astype(np.int64)
    step = 1
    while True:
        second = np.full(n, -1, dtype=np.int64)
        second[: n - step] = rank[step:]
        sa = np.lexsort((second, rank))
        changed = (rank[sa[1:]] != rank[sa[:-1]]) | (second[sa[1:]] != second[sa[:-1]])
        new_rank = np.empty(n, dtype=np.int64)
        new_rank[sa[0]] = 0
        new_rank[sa[1:]] = np.cumsum(changed)
        rank = new_rank
        if rank[sa[-1]] == n - 1:
            return sa
        step *= 2


class ReferenceIndex:
    """Suffix array over one reference, reusable across many targets.

    The index is immutable after construction, so one instance can serve
    any number of lookups, including concurrent ones.
    """

    def __init__(self, reference: bytes):
        if not reference:
            raise InvalidInput("reference must be non-empty")
        self.reference_bytes = bytes(reference)
        self.reference = np.frombuffer(self.reference_bytes, dtype=np.uint8)
        self.sa = _suffix_array(self.reference)

    def _probe(self, pat: np.ndarray, j: int) -> tuple[int, int]:
        """Compare reference[j:] against ``pat`` over at most len(pat) symbols.

        Returns (lcp, order) where order is -1/0/+1. A suffix that runs out
        while still matching orders before the pattern; one that matches all
        of ``pat`` orders 0 regardless of what follows.
        """
        seg = self.reference[j : j + len(pat)]
        k = len(seg)
        mism = np.flatnonzero(seg != pat[:k])
        if mism.size:
            m = int(mism[0])
            return m, (-1 if seg[m] < pat[m] else 1)
        return k, (-1 if k < len(pat) else 0)

    def _lower_bound(self, pat: np.ndarray, strict: bool) -> int:
        """First suffix-array index whose probe against ``pat`` is >= 0.

        With ``strict`` the bound moves past order-0 entries as well, giving
        the end of the block of suffixes starting with ``pat``.
        """
        sa = self.sa
        lo, hi = 0, len(sa)
        while lo < hi:
            mid = (lo + hi) // 2
            order = self._probe(pat, int(sa[mid]))[1]
            if order < 0 or (strict and order == 0):
                lo = mid + 1
            else:
                hi = mid
        return lo

    def longest_match(self, target: np.ndarray, start: int) -> tuple[int, int]:
        """Longest reference match for target[start:].

        Returns (length, position). Ties on length resolve to the smallest
        reference position; a zero length means not even one symbol of the
        reference matches and the caller must emit a literal.
        """
        pattern = target[start:]
        sa = self.sa
        # The suffixes sharing the longest prefix with the pattern sit next
        # to its insertion point in suffix order.
        at = self._lower_bound(pattern, strict=False)
        best = 0
        if at < len(sa):
            best = self._probe(pattern, int(sa[at]))[0]
        if at > 0:
            best = max(best, self._probe(pattern, int(sa[at - 1]))[0])
        if best == 0:
            return 0, -1
        # Every suffix starting with pattern[:best] forms one contiguous
        # block; the copy position is the smallest among them.
        prefix = pattern[:best]
        lo = self._lower_bound(prefix, strict=False)
        hi = self._lower_bound(prefix, strict=True)
        return best, int(sa[lo:hi].min())


def rlz_factorize(
    target: bytes, reference: bytes, index: ReferenceIndex | None = None
) -> RlzParse:
    """Greedy leftmost-longest parse of ``target`` against ``reference``.

    At each cursor the longest match anywhere in the reference is taken
    (minimum copy length 1, smallest position on ties). Positions where
    the next symbol never occurs in the reference become single-symbol
    literal phrases. Passing a prebuilt ``index`` skips rebuilding the
    suffix array when many targets share one reference.
    """
    if not target:
        raise InvalidInput("target must be non-empty")
    if not reference:
        raise InvalidInput("reference must be non-empty")
    if index is None:
        index = ReferenceIndex(reference)
    elif index.reference_bytes != bytes(reference):
        raise InvalidInput("index was built for a different reference")
    tgt = np.frombuffer(bytes(target), dtype=np.uint8)
    phrases: list[RlzPhrase] = []
    i = 0
    n = len(tgt)
    while i < n:
        length, pos = index.longest_match(tgt, i)
        if length >= 1:
            phrases.append(RlzPhrase("copy", pos, length))
            i += length
        else:
            phrases.append(RlzPhrase("literal", -1, 1, int(tgt[i])))
            i += 1
    return RlzParse(tuple(phrases), len(reference))


def rlz_compressed_size_bits(
    parse: RlzParse, reference_length: int, alphabet_size: int
) -> int:
    """Price a parse under the copy/literal bit-cost model.

    A copy costs one flag bit, a position field, and ceil(log2(L+1)) length
    bits for a reference of L symbols. The position field is adaptive:
    copies starting within +/-ADAPTIVE_WINDOW of the previous copy's
    continuation point (position + length of that copy) pay an 8-bit signed
    delta, everything else pays ceil(log2(L)) bits. The first copy always
    pays the full field. A literal costs one flag bit plus
    ceil(log2(alphabet_size)) bits per symbol. Literal phrases do not move
    the continuation point.
    """
    if reference_length < 1:
        raise InvalidInput("reference_length must be positive")
    if alphabet_size < 2:
        raise InvalidInput("alphabet_size must be at least 2")
    position_bits = _ceil_log2(reference_length)
    length_bits = _ceil_log2(reference_length + 1)
    literal_bits = _ceil_log2(alphabet_size)
    total = 0
    continuation: int | None = None
    for ph in parse.phrases:
        if ph.kind == "literal":
            total += (1 + literal_bits) * ph.length
            continue
        if continuation is not None and abs(ph.position - continuation) <= ADAPTIVE_WINDOW:
            total += 1 + DELTA_FIELD_BITS + length_bits
        else:
            total += 1 + position_bits + length_bits
        continuation = ph.position + ph.length
    return total
