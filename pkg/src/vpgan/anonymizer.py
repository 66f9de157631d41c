"""Speaker anonymization in embedding space.

Three target-selection strategies share one mapping mechanism: every
(dataset, speaker) pair receives a single target vector which then replaces
all of that speaker's utterance embeddings.

* ``gan``: draw generator samples until one is farther than a cosine
  distance threshold from the source speaker.
* ``pool``: average a random subset of the pool speakers most distant from
  the source, then rescale to a typical norm.
* ``random``: Gaussian vector with per-coordinate moments of a reference corpus.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from vpgan.corpus import Corpus
from vpgan.nn import NetworkParams, predict

STRATEGIES = ("gan", "pool", "random")


class TargetSelectionError(RuntimeError):
    """The generator never produced an acceptable target (collapse signal)."""

    def __init__(self, message: str, attempts: int, best_distance: float):
        super().__init__(message)
        self.attempts = attempts
        self.best_distance = best_distance


class UnknownSpeakerError(KeyError):
    pass


class MappingExistsError(FileExistsError):
    pass


def _f32(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).astype(np.float32).astype(np.float64)


def cosine_distance(a, b) -> np.ndarray:
    """``1 - cos`` between rows of ``a`` and the vector ``b`` (or row-wise pairs)."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.asarray(b, dtype=np.float64)
    num = a @ b if b.ndim == 1 else np.einsum("ij,ij->i", a, np.atleast_2d(b))
    den = np.linalg.norm(a, axis=1) * np.linalg.norm(np.atleast_2d(b), axis=1)
    return 1.0 - num / den


@dataclass
class AnonymizationMapping:
    strategy: str
    seed: int
    provenance: str = ""
    entries: dict = field(default_factory=dict)  # (dataset, speaker) -> vector
    attempts: dict = field(default_factory=dict)  # (dataset, speaker) -> draws (gan only)

    def target(self, dataset: str, speaker: str) -> np.ndarray:
        try:
            return self.entries[(dataset, speaker)]
        except KeyError:
            raise UnknownSpeakerError(f"no target for speaker {speaker!r} in dataset {dataset!r}") from None

    def distinct_targets(self) -> int:
        return len({np.asarray(v).tobytes() for v in self.entries.values()})

    def save(self, path, overwrite: bool = False) -> Path:
        """Write JSONL rows ``{dataset, speaker, strategy, seed, provenance, vector}``."""
        path = Path(path)
        if path.exists() and not overwrite:
            raise MappingExistsError(f"refusing to overwrite existing mapping {path}")
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = []
        for (dataset, speaker), vec in self.entries.items():
            lines.append(
                json.dumps(
                    {
                        "dataset": dataset,
                        "speaker": speaker,
                        "strategy": self.strategy,
                        "seed": self.seed,
                        "provenance": self.provenance,
                        "vector": np.asarray(vec).tolist(),
                    }
                )
            )
        path.write_text("\n".join(lines) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "AnonymizationMapping":
        mapping = None
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            row = json.loads(line)
            if mapping is None:
                mapping = cls(row["strategy"], int(row["seed"]), row.get("provenance", ""))
            mapping.entries[(row["dataset"], row["speaker"])] = np.array(row["vector"], dtype=np.float64)
        if mapping is None:
            raise ValueError(f"empty mapping file {path}")
        return mapping


# -- target selection ---------------------------------------------------------


def gan_select_target(source, generator: NetworkParams, rng: np.random.Generator, threshold: float = 0.3, max_attempts: int = 100):
    """Sample generator outputs until one is more than ``threshold`` away.

    ``source`` is one vector or a stack of vectors (speaker mean and its
    utterances); the candidate must clear the threshold against every row.
    Returns ``(target, attempts)``.
    """
    source = np.atleast_2d(np.asarray(source, dtype=np.float64))
    if source.shape[1] != generator.spec.output_dim:
        raise ValueError(f"generator outputs dim {generator.spec.output_dim}, source has {source.shape[1]}")
    best = -np.inf
    for attempt in range(1, max_attempts + 1):
        z = rng.standard_normal((1, generator.spec.input_dim))
        candidate = _f32(predict(generator, z)[0])
        dist = float(cosine_distance(source, candidate).min())
        best = max(best, dist)
        if dist > threshold:
            return candidate, attempt
    raise TargetSelectionError(
        f"no generator sample cleared cosine distance {threshold} in {max_attempts} attempts "
        f"(best {best:.4f}); the generator may have collapsed",
        attempts=max_attempts,
        best_distance=best,
    )


@dataclass
class PoolConfig:
    pool: Corpus
    candidates_per_query: int = 200
    averaged_count: int = 100
    norm_target: float | None = None

    def __post_init__(self):
        ids, means = self.pool.speaker_means()
        if not self.averaged_count <= self.candidates_per_query:
            raise ValueError("averaged_count must not exceed candidates_per_query")
        if self.candidates_per_query > len(ids):
            raise ValueError(
                f"pool has {len(ids)} speakers, fewer than candidates_per_query={self.candidates_per_query}"
            )
        self._means = means
        if self.norm_target is None:
            self.norm_target = float(np.linalg.norm(means, axis=1).mean())

    @property
    def speaker_means(self) -> np.ndarray:
        return self._means


def pool_select_target(source, config: PoolConfig, rng: np.random.Generator) -> np.ndarray:
    """Average of a random subset of the most distant pool speakers, rescaled."""
    source = np.asarray(source, dtype=np.float64).ravel()
    dist = cosine_distance(config.speaker_means, source)
    # stable sort keeps ties in pool order
    order = np.argsort(-dist, kind="stable")[: config.candidates_per_query]
    if config.averaged_count == config.candidates_per_query:
        chosen = order
    else:
        chosen = order[rng.choice(len(order), size=config.averaged_count, replace=False)]
    avg = config.speaker_means[np.sort(chosen)].mean(axis=0)
    norm = np.linalg.norm(avg)
    if norm == 0:
        raise ValueError("averaged pool embedding has zero norm")
    return avg * (config.norm_target / norm)


@dataclass(frozen=True)
class ScaleStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def of(cls, corpus: Corpus) -> "ScaleStats":
        return cls(corpus.vectors.mean(axis=0), corpus.vectors.std(axis=0))


def random_select_target(dim: int, rng: np.random.Generator, stats: ScaleStats) -> np.ndarray:
    if len(stats.mean) != dim or len(stats.std) != dim:
        raise ValueError("scale statistics do not match dim")
    return stats.mean + stats.std * rng.standard_normal(dim)


# -- whole-corpus anonymization -------------------------------------------------


def anonymize_corpus(
    corpus: Corpus,
    strategy: str = "gan",
    *,
    seed: int = 0,
    generator: NetworkParams | None = None,
    pool: PoolConfig | None = None,
    stats: ScaleStats | None = None,
    mapping: AnonymizationMapping | None = None,
    threshold: float = 0.3,
    max_attempts: int = 100,
    dataset: str | None = None,
    provenance: str = "",
):
    """Replace every utterance vector by its speaker's target.

    Targets are selected speaker by speaker in order of first appearance
    from one RNG seeded with ``seed``, so reruns are identical. Passing a
    ready ``mapping`` applies it instead; speakers missing from it raise
    :class:`UnknownSpeakerError`. ``strategy="identity"`` returns the corpus
    untouched (and no mapping), as a no-op reference.
    """
    dataset = dataset or corpus.name
    if strategy == "identity":
        return corpus, None
    if mapping is None:
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}")
        mapping = AnonymizationMapping(strategy, seed, provenance)
        rng = np.random.default_rng(seed)
        rows = corpus.speaker_rows()
        if strategy == "random" and stats is None:
            raise ValueError("random strategy needs scale statistics")
        for speaker, idx in rows.items():
            utts = corpus.vectors[idx]
            centre = utts.mean(axis=0)
            if strategy == "gan":
                if generator is None:
                    raise ValueError("gan strategy needs a generator")
                target, n = gan_select_target(np.vstack([centre, utts]), generator, rng, threshold, max_attempts)
                mapping.attempts[(dataset, speaker)] = n
            elif strategy == "pool":
                if pool is None:
                    raise ValueError("pool strategy needs a pool configuration")
                target = _f32(pool_select_target(centre, pool, rng))
            else:
                target = _f32(random_select_target(corpus.dim, rng, stats))
            mapping.entries[(dataset, speaker)] = target
    vectors = np.stack([mapping.target(dataset, s) for s in corpus.speakers])
    if vectors.shape[1] != corpus.dim:
        raise ValueError("mapping targets have a different dimension than the corpus")
    return corpus.with_vectors(vectors), mapping


def threshold_violations(original: Corpus, anonymized: Corpus, threshold: float = 0.3) -> list[tuple[str, str, float]]:
    """Every (speaker, utterance) whose anonymized vector sits within ``threshold`` of an original utterance of that speaker."""
    if original.speakers != anonymized.speakers or original.utterances != anonymized.utterances:
        raise ValueError("corpora are not aligned row by row")
    bad = []
    rows = original.speaker_rows()
    for speaker, idx in rows.items():
        for target_row in idx:
            d = cosine_distance(original.vectors[idx], anonymized.vectors[target_row])
            worst = float(d.min())
            if worst <= threshold:
                bad.append((speaker, anonymized.utterances[target_row], worst))
    return bad
