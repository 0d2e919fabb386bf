"""
Binary codes, Hamming top-K search and mAP@K evaluation.

Codes are packed into uint64 words, bit b of a code living in word b // 64 at
position b % 64. Distances are popcounts of XOR-ed words. Ranking is by
distance, ties broken by ascending id.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .datagen import QUERY, RETRIEVAL
from .errors import ConfigError, DataError

TASKS = ("I2T", "T2I")
REPORT_FIELDS = ("task", "variant", "noise_rate", "code_length", "seed", "K", "map_at_k", "precision_at_k")


def n_words(code_length):
    return (code_length + 63) // 64


def to_bits(codes):
    """Real-valued codes to {0, 1}: entries >= 0 become 1."""
    return (np.asarray(codes) >= 0).astype(np.uint8)


def pack_bits(bits):
    """Pack an (N, L) 0/1 array into (N, ceil(L / 64)) uint64 words."""
    bits = np.asarray(bits, dtype=np.uint64)
    n, length = bits.shape
    padded = np.zeros((n, n_words(length) * 64), dtype=np.uint64)
    padded[:, :length] = bits
    shifts = np.arange(64, dtype=np.uint64)
    return (padded.reshape(n, -1, 64) << shifts).sum(axis=2, dtype=np.uint64)


def unpack_bits(words, code_length):
    words = np.asarray(words, dtype=np.uint64)
    shifts = np.arange(64, dtype=np.uint64)
    bits = (words[..., None] >> shifts) & np.uint64(1)
    return bits.reshape(*words.shape[:-1], -1)[..., :code_length].astype(np.uint8)


@dataclass(frozen=True, eq=False)
class PackedCode:
    words: np.ndarray
    id: int
    code_length: int

    def __eq__(self, other):
        return (isinstance(other, PackedCode) and self.id == other.id
                and self.code_length == other.code_length
                and np.array_equal(self.words, other.words))


def pack_codes(codes, ids):
    words = pack_bits(to_bits(codes))
    length = np.shape(codes)[1]
    return [PackedCode(w, int(i), length) for w, i in zip(words, ids)]


def encode_binary(net, features, ids=None):
    """Eval-mode forward pass, threshold at 0 and pack. Returns PackedCodes."""
    out, _ = nn.forward(net, features, "eval")
    if ids is None:
        ids = np.arange(len(out))
    return pack_codes(out, ids)


@dataclass(frozen=True, eq=False)
class CodeIndex:
    words: np.ndarray
    ids: np.ndarray
    code_length: int
    _order: np.ndarray = field(repr=False, default=None)

    def __len__(self):
        return len(self.ids)


def build_index(codes):
    codes = list(codes)
    if not codes:
        raise DataError("cannot build an index over an empty archive")
    lengths = {c.code_length for c in codes}
    if len(lengths) != 1:
        raise ConfigError(f"archive mixes code lengths {sorted(lengths)}")
    return index_from_arrays(np.stack([c.words for c in codes]), [c.id for c in codes], lengths.pop())


def index_from_arrays(words, ids, code_length):
    words = np.array(words, dtype=np.uint64)
    ids = np.array(ids, dtype=np.int64)
    if len(ids) == 0:
        raise DataError("cannot build an index over an empty archive")
    if len(np.unique(ids)) != len(ids):
        raise ConfigError("duplicate ids in archive")
    if words.shape != (len(ids), n_words(code_length)):
        raise ConfigError(f"packed words of shape {words.shape} do not match {len(ids)} codes of length {code_length}")
    words.setflags(write=False)
    ids.setflags(write=False)
    return CodeIndex(words, ids, int(code_length), np.argsort(ids, kind="stable"))


def hamming_distances(index, query_words):
    """Distances from each query (rows of ``query_words``) to every archive code."""
    q = np.asarray(query_words, dtype=np.uint64)
    if q.ndim == 1:
        q = q[None, :]
    if q.shape[1] != index.words.shape[1]:
        raise ConfigError("query and archive codes differ in length")
    return np.bitwise_count(q[:, None, :] ^ index.words[None, :, :]).sum(axis=2, dtype=np.int64)


def _rank(index, dist_row, k):
    # pre-sorting by id makes the stable distance sort break ties by ascending id
    by_id = index._order
    order = by_id[np.argsort(dist_row[by_id], kind="stable")][:k]
    return order


def hamming_topk(index, query, k):
    """The ``k`` nearest archive codes as a list of ``(id, distance)``."""
    if k < 1:
        raise ConfigError("K must be at least 1")
    if isinstance(query, PackedCode):
        if query.code_length != index.code_length:
            raise ConfigError(f"query length {query.code_length} != archive length {index.code_length}")
        query = query.words
    dist = hamming_distances(index, query)[0]
    order = _rank(index, dist, k)
    return [(int(index.ids[j]), int(dist[j])) for j in order]


def average_precision_at_k(ranked_ids, relevant, k):
    """AP@K with denominator min(|relevant|, K); 0 when nothing is relevant."""
    if k < 1:
        raise ConfigError("K must be at least 1")
    relevant = set(relevant)
    if not relevant:
        return 0.0
    hits = 0
    total = 0.0
    for pos, rid in enumerate(list(ranked_ids)[:k], start=1):
        if rid in relevant:
            hits += 1
            total += hits / pos
    return total / min(len(relevant), k)


@dataclass
class EvalReport:
    task: str
    map_at_k: float
    precision_at_k: float
    k: int
    ap: list
    variant: str = ""
    noise_rate: float = 0.0
    code_length: int = 0
    seed: int = 0

    def csv_row(self):
        return {
            "task": self.task, "variant": self.variant, "noise_rate": repr(float(self.noise_rate)),
            "code_length": self.code_length, "seed": self.seed, "K": self.k,
            "map_at_k": repr(float(self.map_at_k)), "precision_at_k": repr(float(self.precision_at_k)),
        }


def retrieve_and_score(query_codes, query_labels, archive_codes, archive_labels, archive_ids, k):
    """Rank the archive for every query; returns (per-query AP list, mean precision@K)."""
    length = np.shape(query_codes)[1]
    index = index_from_arrays(pack_bits(to_bits(archive_codes)), archive_ids, length)
    q_words = pack_bits(to_bits(query_codes))
    dist = hamming_distances(index, q_words)
    id_to_label = dict(zip(index.ids.tolist(), np.asarray(archive_labels).tolist()))
    aps, precs = [], []
    for qi, label in enumerate(np.asarray(query_labels).tolist()):
        order = _rank(index, dist[qi], k)
        ranked = index.ids[order].tolist()
        relevant = [i for i, lab in id_to_label.items() if lab == label]
        aps.append(average_precision_at_k(ranked, relevant, k))
        precs.append(sum(id_to_label[r] == label for r in ranked) / len(ranked))
    return aps, float(np.mean(precs))


def evaluate(f, g, ds, k=20, variant="", noise_rate=0.0, seed=0):
    """I->T and T->I reports on the query/retrieval splits, relevance = shared label."""
    if ds.labels is None:
        raise DataError("evaluation needs class labels")
    q = ds.indices(QUERY)
    r = ds.indices(RETRIEVAL)
    if len(q) == 0 or len(r) == 0:
        raise DataError("evaluation needs non-empty query and retrieval splits")
    hq_img = nn.forward(f, ds.image[q], "eval")[0]
    hq_txt = nn.forward(g, ds.text[q], "eval")[0]
    hr_img = nn.forward(f, ds.image[r], "eval")[0]
    hr_txt = nn.forward(g, ds.text[r], "eval")[0]
    reports = []
    for task, queries, archive in (("I2T", hq_img, hr_txt), ("T2I", hq_txt, hr_img)):
        aps, prec = retrieve_and_score(queries, ds.labels[q], archive, ds.labels[r], ds.ids[r], k)
        reports.append(EvalReport(task, float(np.mean(aps)), prec, k, aps,
                                  variant, noise_rate, f.out_dim, seed))
    return reports
