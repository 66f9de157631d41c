"""Speaker-embedding corpora: data model, synthetic generator, file formats.

Two on-disk formats are supported:

* JSONL: an optional header line ``{"corpus", "split", "dim"}`` followed by
  one ``{"speaker", "utterance", "sex", "vector"}`` object per line.
* VPEMB binary (little-endian)::

      b"VPEMB" | u32 version | u32 dim | u32 count
      | u16 len + utf-8 name | u16 len + utf-8 split
      | count * (u16 len + speaker | u16 len + utterance | u8 sex | f32 * dim)

Vectors are stored as f32 in the binary format and held as f64 in memory.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SEXES = ("unspecified", "F", "M")
SPLITS = ("enrollment", "trial", "train", "pool")
BIN_MAGIC = b"VPEMB"
BIN_VERSION = 1


class CorpusError(ValueError):
    pass


class CorpusParseError(CorpusError):
    """Unreadable bytes; ``offset`` is where parsing stopped."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class MalformedHeaderError(CorpusParseError):
    pass


class DimensionMismatchError(CorpusError):
    pass


class DuplicateKeyError(CorpusError):
    pass


@dataclass(frozen=True)
class SpeakerEmbedding:
    vector: np.ndarray
    speaker_id: str
    utterance_id: str
    sex: str = "unspecified"


class Corpus:
    """An immutable set of utterance embeddings.

    Stored column-wise: ``vectors`` is (count, dim) and the id/sex tuples are
    aligned with its rows.
    """

    def __init__(self, name, split, vectors, speakers, utterances, sexes=None):
        vectors = np.array(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] == 0:
            raise CorpusError("a corpus needs at least one embedding")
        n = vectors.shape[0]
        speakers = tuple(str(s) for s in speakers)
        utterances = tuple(str(u) for u in utterances)
        sexes = tuple(sexes) if sexes is not None else ("unspecified",) * n
        if not (len(speakers) == len(utterances) == len(sexes) == n):
            raise CorpusError("ids, sexes and vectors have different lengths")
        for s in sexes:
            if s not in SEXES:
                raise CorpusError(f"unknown sex group {s!r}")
        if not np.all(np.isfinite(vectors)):
            raise CorpusError("corpus contains non-finite values")
        keys = set()
        for key in zip(speakers, utterances):
            if key in keys:
                raise DuplicateKeyError(f"duplicate (speaker, utterance) key {key}")
            keys.add(key)
        vectors.setflags(write=False)
        self.name = str(name)
        self.split = str(split)
        self.vectors = vectors
        self.speakers = speakers
        self.utterances = utterances
        self.sexes = sexes

    @classmethod
    def from_embeddings(cls, name, split, embeddings: list[SpeakerEmbedding]) -> "Corpus":
        if not embeddings:
            raise CorpusError("a corpus needs at least one embedding")
        dims = {len(e.vector) for e in embeddings}
        if len(dims) != 1:
            raise DimensionMismatchError(f"mixed embedding dimensions {sorted(dims)}")
        return cls(
            name,
            split,
            np.stack([np.asarray(e.vector, dtype=np.float64) for e in embeddings]),
            [e.speaker_id for e in embeddings],
            [e.utterance_id for e in embeddings],
            [e.sex for e in embeddings],
        )

    def __len__(self):
        return self.vectors.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Corpus):
            return NotImplemented
        return (
            self.name == other.name
            and self.split == other.split
            and self.speakers == other.speakers
            and self.utterances == other.utterances
            and self.sexes == other.sexes
            and self.vectors.shape == other.vectors.shape
            and np.array_equal(self.vectors, other.vectors)
        )

    def __repr__(self):
        return f"Corpus({self.name!r}, split={self.split!r}, utterances={len(self)}, speakers={len(self.speaker_ids())}, dim={self.dim})"

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def embeddings(self) -> list[SpeakerEmbedding]:
        return [
            SpeakerEmbedding(self.vectors[i], self.speakers[i], self.utterances[i], self.sexes[i])
            for i in range(len(self))
        ]

    def speaker_ids(self) -> list[str]:
        """Distinct speakers in order of first appearance."""
        return list(dict.fromkeys(self.speakers))

    def rows_of(self, speaker: str) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.speakers) if s == speaker], dtype=np.intp)

    def speaker_rows(self) -> dict[str, np.ndarray]:
        rows: dict[str, list[int]] = {}
        for i, s in enumerate(self.speakers):
            rows.setdefault(s, []).append(i)
        return {s: np.array(r, dtype=np.intp) for s, r in rows.items()}

    def sex_of(self) -> dict[str, str]:
        return dict(zip(self.speakers, self.sexes))

    def speaker_means(self) -> tuple[list[str], np.ndarray]:
        rows = self.speaker_rows()
        ids = list(rows)
        return ids, np.stack([self.vectors[r].mean(axis=0) for r in rows.values()])

    def with_vectors(self, vectors, name=None) -> "Corpus":
        return Corpus(name or self.name, self.split, vectors, self.speakers, self.utterances, self.sexes)

    def subset(self, rows, name=None, split=None) -> "Corpus":
        rows = np.asarray(rows, dtype=np.intp)
        return Corpus(
            name or self.name,
            split or self.split,
            self.vectors[rows],
            [self.speakers[i] for i in rows],
            [self.utterances[i] for i in rows],
            [self.sexes[i] for i in rows],
        )


# -- synthetic corpora --------------------------------------------------------


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    """Parameters of the synthetic speaker population.

    Speaker means live mostly on a random ``rank``-dimensional subspace
    (scale ``between_speaker_scale`` per subspace axis) plus isotropic
    ``background_scale`` noise; utterances add isotropic
    ``within_speaker_scale`` noise around the speaker mean.
    """

    speaker_count: int = 200
    utterances_per_speaker: int = 20
    dim: int = 704
    between_speaker_scale: float = 1.0
    within_speaker_scale: float = 0.055
    sex_split: float = 0.5
    seed: int = 0
    rank: int = 32
    background_scale: float = 0.05
    enrollment_fraction: float = 0.25

    def __post_init__(self):
        if self.between_speaker_scale <= self.within_speaker_scale:
            raise ValueError("between_speaker_scale must exceed within_speaker_scale")
        if self.speaker_count < 1 or self.utterances_per_speaker < 2:
            raise ValueError("need >= 1 speaker and >= 2 utterances per speaker (enrollment + trial)")
        if not 0.0 <= self.sex_split <= 1.0:
            raise ValueError("sex_split must lie in [0, 1]")
        if not 0.0 < self.enrollment_fraction < 1.0:
            raise ValueError("enrollment_fraction must lie in (0, 1)")
        if self.rank > self.dim:
            raise ValueError("rank cannot exceed dim")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticCorpusSpec":
        return cls(**d)


def _f32(x: np.ndarray) -> np.ndarray:
    return x.astype(np.float32).astype(np.float64)


def _basis(spec: SyntheticCorpusSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, 0])
    q, _ = np.linalg.qr(rng.normal(size=(spec.dim, spec.rank)))
    return q.T  # (rank, dim), orthonormal rows


def _population(spec, stream, speaker_count, utterances, prefix):
    basis = _basis(spec)
    rng = np.random.default_rng([spec.seed, stream])
    coords = rng.normal(scale=spec.between_speaker_scale, size=(speaker_count, spec.rank))
    means = coords @ basis + rng.normal(scale=spec.background_scale, size=(speaker_count, spec.dim))
    n_female = int(round(spec.sex_split * speaker_count))
    sex = np.array(["M"] * speaker_count, dtype=object)
    sex[rng.permutation(speaker_count)[:n_female]] = "F"
    noise = rng.normal(scale=spec.within_speaker_scale, size=(speaker_count, utterances, spec.dim))
    vectors = _f32(means[:, None, :] + noise)
    ids = [f"{prefix}{k:04d}" for k in range(speaker_count)]
    return ids, list(sex), vectors


def generate_synthetic(spec: SyntheticCorpusSpec, name: str = "synthetic") -> tuple[Corpus, Corpus]:
    """Enrollment and trial corpora over the same speakers, disjoint utterances."""
    ids, sex, vectors = _population(spec, 1, spec.speaker_count, spec.utterances_per_speaker, "spk")
    n_enroll = min(max(1, int(round(spec.enrollment_fraction * spec.utterances_per_speaker))), spec.utterances_per_speaker - 1)
    parts = {"enrollment": range(n_enroll), "trial": range(n_enroll, spec.utterances_per_speaker)}
    out = []
    for split, utts in parts.items():
        rows, spk, utt, sx = [], [], [], []
        for k, sid in enumerate(ids):
            for u in utts:
                rows.append(vectors[k, u])
                spk.append(sid)
                utt.append(f"{sid}-u{u:03d}")
                sx.append(sex[k])
        out.append(Corpus(f"{name}-{split}", split, np.stack(rows), spk, utt, sx))
    return out[0], out[1]


def generate_pool(spec: SyntheticCorpusSpec, speaker_count: int = 400, utterances_per_speaker: int = 10, name: str = "synthetic-train") -> Corpus:
    """External speakers from the same population (GAN training data / pool)."""
    ids, sex, vectors = _population(spec, 2, speaker_count, utterances_per_speaker, "ext")
    spk = [sid for sid in ids for _ in range(utterances_per_speaker)]
    utt = [f"{sid}-u{u:03d}" for sid in ids for u in range(utterances_per_speaker)]
    sx = [s for s in sex for _ in range(utterances_per_speaker)]
    return Corpus(name, "train", vectors.reshape(-1, spec.dim), spk, utt, sx)


# -- file formats -----------------------------------------------------------


def write_corpus(corpus: Corpus, path) -> Path:
    """Write JSONL (``.jsonl``) or VPEMB binary (anything else)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".jsonl":
        path.write_bytes(_encode_jsonl(corpus))
    else:
        path.write_bytes(_encode_binary(corpus))
    return path


def read_corpus(path, name=None, split=None) -> Corpus:
    """Read either format; the binary one is recognised by its magic bytes."""
    path = Path(path)
    data = path.read_bytes()
    if data.startswith(BIN_MAGIC):
        corpus = _decode_binary(data)
    else:
        corpus = _decode_jsonl(data, default_name=path.stem)
    if name is not None or split is not None:
        corpus = Corpus(name or corpus.name, split or corpus.split, corpus.vectors, corpus.speakers, corpus.utterances, corpus.sexes)
    return corpus


def _encode_jsonl(corpus: Corpus) -> bytes:
    lines = [json.dumps({"corpus": corpus.name, "split": corpus.split, "dim": corpus.dim})]
    for i in range(len(corpus)):
        row = {
            "speaker": corpus.speakers[i],
            "utterance": corpus.utterances[i],
            "sex": corpus.sexes[i],
            "vector": corpus.vectors[i].tolist(),
        }
        lines.append(json.dumps(row))
    return ("\n".join(lines) + "\n").encode("utf-8")


def _decode_jsonl(data: bytes, default_name: str) -> Corpus:
    name, split, dim = default_name, "trial", None
    vectors, speakers, utterances, sexes = [], [], [], []
    offset = 0
    first = True
    for raw in data.splitlines(keepends=True):
        line = raw.strip()
        here = offset
        offset += len(raw)
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            cls = MalformedHeaderError if first else CorpusParseError
            raise cls(f"invalid JSON: {exc.msg}", here + exc.pos) from None
        if first and isinstance(obj, dict) and "corpus" in obj:
            first = False
            try:
                name, split = str(obj["corpus"]), str(obj.get("split", split))
                dim = int(obj["dim"]) if "dim" in obj else None
            except (TypeError, ValueError):
                raise MalformedHeaderError("header fields have wrong types", here) from None
            continue
        first = False
        if not isinstance(obj, dict) or not {"speaker", "utterance", "vector"} <= obj.keys():
            raise CorpusParseError("record lacks speaker/utterance/vector", here)
        vec = obj["vector"]
        if dim is None:
            dim = len(vec)
        if len(vec) != dim:
            raise DimensionMismatchError(
                f"record {obj['speaker']}/{obj['utterance']} has dim {len(vec)}, expected {dim}"
            )
        vectors.append(vec)
        speakers.append(obj["speaker"])
        utterances.append(obj["utterance"])
        sexes.append(obj.get("sex", "unspecified"))
    if not vectors:
        raise CorpusParseError("no records", offset)
    return Corpus(name, split, np.array(vectors, dtype=np.float64), speakers, utterances, sexes)


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    if len(b) > 0xFFFF:
        raise CorpusError(f"identifier too long: {s[:40]}...")
    return struct.pack("<H", len(b)) + b


def _encode_binary(corpus: Corpus) -> bytes:
    parts = [
        BIN_MAGIC,
        struct.pack("<III", BIN_VERSION, corpus.dim, len(corpus)),
        _pack_str(corpus.name),
        _pack_str(corpus.split),
    ]
    f32 = corpus.vectors.astype("<f4")
    for i in range(len(corpus)):
        parts.append(_pack_str(corpus.speakers[i]))
        parts.append(_pack_str(corpus.utterances[i]))
        parts.append(struct.pack("<B", SEXES.index(corpus.sexes[i])))
        parts.append(f32[i].tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CorpusParseError(f"truncated file while reading {what}", self.pos)
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def string(self, what: str) -> str:
        (n,) = struct.unpack("<H", self.take(2, f"{what} length"))
        try:
            return self.take(n, what).decode("utf-8")
        except UnicodeDecodeError:
            raise CorpusParseError(f"{what} is not valid utf-8", self.pos - n) from None


def _decode_binary(data: bytes) -> Corpus:
    r = _Reader(data)
    r.take(len(BIN_MAGIC), "magic")
    try:
        version, dim, count = struct.unpack("<III", r.take(12, "header"))
    except CorpusParseError as exc:
        raise MalformedHeaderError("header too short", exc.offset) from None
    if version != BIN_VERSION:
        raise MalformedHeaderError(f"unsupported version {version}", len(BIN_MAGIC))
    if dim == 0 or count == 0:
        raise MalformedHeaderError(f"invalid dim/count {dim}/{count}", len(BIN_MAGIC) + 4)
    name = r.string("corpus name")
    split = r.string("split")
    vectors = np.empty((count, dim), dtype=np.float64)
    speakers, utterances, sexes = [], [], []
    for i in range(count):
        speakers.append(r.string("speaker id"))
        utterances.append(r.string("utterance id"))
        (sex,) = struct.unpack("<B", r.take(1, "sex"))
        if sex >= len(SEXES):
            raise CorpusParseError(f"invalid sex code {sex}", r.pos - 1)
        sexes.append(SEXES[sex])
        vectors[i] = np.frombuffer(r.take(4 * dim, "vector"), dtype="<f4")
    if r.pos != len(data):
        raise CorpusParseError(f"{len(data) - r.pos} trailing bytes after {count} records", r.pos)
    return Corpus(name, split, vectors, speakers, utterances, sexes)
