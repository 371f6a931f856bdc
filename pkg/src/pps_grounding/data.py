"""Sample types, the synthetic grounding corpus and its binary file format.

Corpus file layout (all integers little-endian)::

    magic      8 bytes   b"PPSCORP\\0"
    version    u32       currently 1
    T          u32       padded segment count
    N          u32       padded token count
    d_V        u32       feature width
    vocab      u32       vocabulary size
    count      u32       number of samples
    then per sample:
    id_len     u16
    id         id_len bytes, UTF-8
    video_len  u32       valid segments (rows beyond are zero padding)
    query_len  u32       valid tokens (ids beyond are PAD = 0)
    features   f32[T * d_V], row-major
    token_ids  i32[N]
    gt_start   f64
    gt_end     f64
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from .config import GroundingConfig
from .errors import DegenerateSequence, EmptyQuery, InvalidCorpus
from .mask_math import Interval

PAD_ID = 0
MASK_ID = 1
NUM_RESERVED = 2

CORPUS_MAGIC = b"PPSCORP\0"
CORPUS_VERSION = 1
_HEADER = struct.Struct("<8sIIIIII")
_SAMPLE_HEAD = struct.Struct("<H")
_LENGTHS = struct.Struct("<II")
_GT = struct.Struct("<dd")

_STREAMS = {"prototypes": 0, "train": 1, "test": 2}


@dataclass
class FeatureSequence:
    features: np.ndarray  # (T, d_V)
    valid_len: int

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ValueError("features must be a T x d_V matrix")
        if not 2 <= self.valid_len <= self.features.shape[0]:
            raise DegenerateSequence(f"valid_len {self.valid_len} outside [2, {self.features.shape[0]}]")

    @property
    def T(self) -> int:
        return self.features.shape[0]


@dataclass
class TokenSequence:
    ids: np.ndarray  # (N,) int
    valid_len: int
    hidden: np.ndarray = None  # (N,) bool

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.hidden is None:
            self.hidden = np.zeros(self.ids.shape, dtype=bool)
        self.hidden = np.asarray(self.hidden, dtype=bool)
        if self.valid_len < 0 or self.valid_len > self.ids.shape[0]:
            raise ValueError(f"valid_len {self.valid_len} outside [0, {self.ids.shape[0]}]")
        if self.hidden[self.valid_len:].any():
            raise ValueError("hidden positions must be valid positions")

    @property
    def N(self) -> int:
        return self.ids.shape[0]

    def check_ids(self, vocab_size: int) -> None:
        valid = self.ids[: self.valid_len]
        if valid.size and (valid.min() < 0 or valid.max() >= vocab_size):
            raise ValueError("token id out of vocabulary range")

    def require_nonempty(self) -> None:
        if self.valid_len < 1:
            raise EmptyQuery("query has no valid tokens")


@dataclass
class GroundingSample:
    """A video/query pair.  ``gt`` is for evaluation only."""

    sample_id: str
    video: FeatureSequence
    query: TokenSequence
    gt: Interval


@dataclass
class Batch:
    video: torch.Tensor  # (B, T, d_V)
    video_len: torch.Tensor  # (B,)
    query: torch.Tensor  # (B, N) long
    query_len: torch.Tensor  # (B,)
    sample_ids: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return self.video.shape[0]


def collate(pairs: Sequence[tuple[str, FeatureSequence, TokenSequence]],
            dtype=torch.float32) -> Batch:
    """Stack (id, video, query) triples into padded tensors.

    Only the video and query are read, so the training path never sees
    ground truth.
    """
    if not pairs:
        raise InvalidCorpus("empty batch")
    T = max(v.T for _, v, _ in pairs)
    N = max(q.N for _, _, q in pairs)
    d = pairs[0][1].features.shape[1]
    video = np.zeros((len(pairs), T, d), dtype=np.float64)
    query = np.full((len(pairs), N), PAD_ID, dtype=np.int64)
    for i, (_, v, q) in enumerate(pairs):
        q.require_nonempty()
        video[i, : v.valid_len] = v.features[: v.valid_len]
        query[i, : q.valid_len] = q.ids[: q.valid_len]
    return Batch(
        video=torch.as_tensor(video, dtype=dtype),
        video_len=torch.tensor([v.valid_len for _, v, _ in pairs], dtype=torch.long),
        query=torch.as_tensor(query),
        query_len=torch.tensor([q.valid_len for _, _, q in pairs], dtype=torch.long),
        sample_ids=[sid for sid, _, _ in pairs],
    )


def unsupervised_view(sample: GroundingSample) -> tuple[str, FeatureSequence, TokenSequence]:
    """The part of a sample that training is allowed to see."""
    return sample.sample_id, sample.video, sample.query


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass(frozen=True)
class PrototypeBank:
    """Event prototypes and the vocabulary words bound to them."""

    vectors: np.ndarray  # (P, d_V)
    word_ids: np.ndarray  # (P,)
    filler_ids: np.ndarray

    @property
    def size(self) -> int:
        return self.vectors.shape[0]


def _rng(config: GroundingConfig, stream: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([config.seed, _STREAMS[stream]]))


def prototype_bank(config: GroundingConfig) -> PrototypeBank:
    words = config.vocab_size - NUM_RESERVED
    if words < 8:
        raise InvalidCorpus(f"vocab_size must be >= {8 + NUM_RESERVED}")
    n_proto = min(24, words // 2)
    rng = _rng(config, "prototypes")
    vectors = rng.standard_normal((n_proto, config.d_V))
    word_ids = np.arange(NUM_RESERVED, NUM_RESERVED + n_proto)
    filler_ids = np.arange(NUM_RESERVED + n_proto, min(config.vocab_size, NUM_RESERVED + n_proto + 4))
    return PrototypeBank(vectors, word_ids, filler_ids)


def _split_run(lo: int, hi: int, parts: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Cut the inclusive index range [lo, hi] into ``parts`` nonempty runs."""
    n = hi - lo + 1
    cuts = np.sort(rng.choice(np.arange(1, n), size=parts - 1, replace=False)) if parts > 1 else []
    bounds = [0, *cuts, n]
    return [(lo + a, lo + b - 1) for a, b in zip(bounds[:-1], bounds[1:])]


def make_synthetic_corpus(config: GroundingConfig, size: int, *, split: str = "train",
                          noise: float = 1.0, min_gt: float = 0.08, max_gt: float = 0.25,
                          n_distractors: int = 3, n_events: tuple[int, int] = (1, 3),
                          interleave: bool = False) -> list[GroundingSample]:
    """Planted-event corpus where reconstructing the query needs the gt span.

    Inside the ground-truth span the segments carry ``n_events`` (an inclusive
    range) event prototypes whose bound words appear in the query; outside it they carry distractor
    prototypes whose words do not.
    """
    if size <= 0:
        raise InvalidCorpus(f"corpus size must be positive, got {size}")
    if split not in ("train", "test"):
        raise InvalidCorpus(f"unknown split {split!r}")
    T, N = config.T_max, config.N_max
    if T < 8:
        raise InvalidCorpus("synthetic corpus needs T_max >= 8")
    if N < 4:
        raise InvalidCorpus("synthetic corpus needs N_max >= 4")
    lo_events, hi_events = n_events
    if not 1 <= lo_events <= hi_events:
        raise InvalidCorpus(f"bad event count range {n_events}")
    bank = prototype_bank(config)
    if hi_events + n_distractors > bank.size:
        raise InvalidCorpus("not enough prototypes for events plus distractors")
    rng = _rng(config, split)
    samples = []
    for i in range(size):
        span = int(rng.integers(round(min_gt * (T - 1)), round(max_gt * (T - 1)) + 1))
        span = max(span, 2)
        start = int(rng.integers(0, T - span))
        end = start + span
        n_events = int(rng.integers(lo_events, hi_events + 1))
        picks = rng.choice(bank.size, size=n_events + n_distractors, replace=False)
        events, distractors = picks[:n_events], picks[n_events:]

        labels = np.empty(T, dtype=np.int64)
        if interleave:
            inside = np.resize(events, end - start + 1)
            labels[start: end + 1] = rng.permutation(inside)
        else:
            for proto, (a, b) in zip(events, _split_run(start, end, n_events, rng)):
                labels[a: b + 1] = proto
        for lo, hi in ((0, start - 1), (end + 1, T - 1)):
            if hi < lo:
                continue
            pieces = int(rng.integers(1, min(3, hi - lo + 1) + 1))
            for a, b in _split_run(lo, hi, pieces, rng):
                labels[a: b + 1] = rng.choice(distractors)
        features = bank.vectors[labels] + noise * rng.standard_normal((T, config.d_V))

        n_fill = min(int(rng.integers(0, 3)), N - n_events)
        words = list(bank.word_ids[events])
        for _ in range(n_fill):
            words.insert(int(rng.integers(0, len(words) + 1)), int(rng.choice(bank.filler_ids)))
        ids = np.full(N, PAD_ID, dtype=np.int64)
        ids[: len(words)] = words

        samples.append(GroundingSample(
            sample_id=f"{split}-{i:05d}",
            video=FeatureSequence(features.astype(np.float32), T),
            query=TokenSequence(ids, len(words)),
            gt=Interval(start / (T - 1), end / (T - 1)),
        ))
    return samples


# ---------------------------------------------------------------------------
# corpus file


def write_corpus(path: str | Path, samples: Sequence[GroundingSample], vocab_size: int) -> None:
    if not samples:
        raise InvalidCorpus("refusing to write an empty corpus")
    T = max(s.video.T for s in samples)
    N = max(s.query.N for s in samples)
    d = samples[0].video.features.shape[1]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CORPUS_MAGIC, CORPUS_VERSION, T, N, d, vocab_size, len(samples)))
        for s in samples:
            sid = s.sample_id.encode("utf-8")
            feats = np.zeros((T, d), dtype="<f4")
            feats[: s.video.valid_len] = s.video.features[: s.video.valid_len]
            ids = np.full(N, PAD_ID, dtype="<i4")
            ids[: s.query.valid_len] = s.query.ids[: s.query.valid_len]
            fh.write(_SAMPLE_HEAD.pack(len(sid)))
            fh.write(sid)
            fh.write(_LENGTHS.pack(s.video.valid_len, s.query.valid_len))
            fh.write(feats.tobytes())
            fh.write(ids.tobytes())
            fh.write(_GT.pack(s.gt.start, s.gt.end))


@dataclass(frozen=True)
class CorpusHeader:
    version: int
    T: int
    N: int
    d_V: int
    vocab_size: int
    count: int


def read_corpus(path: str | Path) -> tuple[CorpusHeader, list[GroundingSample]]:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise InvalidCorpus("truncated corpus header")
    magic, version, T, N, d, vocab, count = _HEADER.unpack_from(buf, 0)
    if magic != CORPUS_MAGIC:
        raise InvalidCorpus("not a corpus file (bad magic)")
    if version != CORPUS_VERSION:
        raise InvalidCorpus(f"unsupported corpus version {version}")
    header = CorpusHeader(version, T, N, d, vocab, count)
    off = _HEADER.size
    samples = []
    try:
        for _ in range(count):
            (id_len,) = _SAMPLE_HEAD.unpack_from(buf, off)
            off += _SAMPLE_HEAD.size
            sid = buf[off: off + id_len].decode("utf-8")
            off += id_len
            vlen, qlen = _LENGTHS.unpack_from(buf, off)
            off += _LENGTHS.size
            feats = np.frombuffer(buf, dtype="<f4", count=T * d, offset=off).reshape(T, d)
            off += 4 * T * d
            ids = np.frombuffer(buf, dtype="<i4", count=N, offset=off).astype(np.int64)
            off += 4 * N
            start, end = _GT.unpack_from(buf, off)
            off += _GT.size
            samples.append(GroundingSample(
                sid, FeatureSequence(feats.astype(np.float32), vlen),
                TokenSequence(ids, qlen), Interval(start, end)))
    except (struct.error, ValueError) as exc:
        raise InvalidCorpus(f"corrupt corpus file: {exc}") from exc
    if off != len(buf):
        raise InvalidCorpus(f"{len(buf) - off} trailing bytes after {count} samples")
    return header, samples


def iter_batches(items: Sequence, batch_size: int, order: Iterable[int] | None = None):
    idx = list(range(len(items))) if order is None else list(order)
    for i in range(0, len(idx), batch_size):
        yield [items[j] for j in idx[i: i + batch_size]]
