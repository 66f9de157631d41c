"""Utility metrics: gain of voice distinctiveness (GVD) and kernel MMD."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from vpgan.corpus import Corpus


@dataclass(frozen=True)
class SimilarityMatrix:
    speakers: list[str]
    entries: np.ndarray


def _unit(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms > 0, norms, 1.0)


def similarity_matrix(a: Corpus, b: Corpus | None = None, speakers=None) -> SimilarityMatrix:
    """Mean cosine similarity between the utterances of every speaker pair.

    With ``b=None`` the matrix is computed within ``a`` and the diagonal
    skips each utterance's pairing with itself (unless the speaker has a
    single utterance, in which case that self-pair is all there is).
    """
    within = b is None
    b = a if within else b
    rows_a = a.speaker_rows()
    rows_b = b.speaker_rows()
    if speakers is None:
        speakers = list(rows_a)
    if set(speakers) - set(rows_a) or set(speakers) - set(rows_b):
        raise ValueError("speaker sets of the two corpora do not match")
    if not within and set(rows_a) != set(rows_b):
        raise ValueError("speaker sets of the two corpora do not match")
    ua, ub = _unit(a.vectors), _unit(b.vectors)
    # per-speaker sums of unit vectors turn pairwise means into dot products
    sa = np.stack([ua[rows_a[s]].sum(axis=0) for s in speakers])
    sb = np.stack([ub[rows_b[s]].sum(axis=0) for s in speakers])
    na = np.array([len(rows_a[s]) for s in speakers], dtype=np.float64)
    nb = np.array([len(rows_b[s]) for s in speakers], dtype=np.float64)
    total = sa @ sb.T
    M = total / np.outer(na, nb)
    if within:
        for k, s in enumerate(speakers):
            n = na[k]
            if n > 1:
                # sum over i != j equals |sum u_i|^2 - sum |u_i|^2
                self_sum = np.einsum("ij,ij->", ua[rows_a[s]], ua[rows_a[s]])
                M[k, k] = (total[k, k] - self_sum) / (n * (n - 1))
    np.clip(M, -1.0, 1.0, out=M)
    return SimilarityMatrix(list(speakers), M)


def diag_dominance(M) -> float:
    """Absolute gap between the mean diagonal and mean off-diagonal entry."""
    E = M.entries if isinstance(M, SimilarityMatrix) else np.asarray(M, dtype=np.float64)
    n = E.shape[0]
    if n < 2:
        raise ValueError("diagonal dominance needs at least two speakers")
    # the gap is shift invariant; shifting by one entry makes constant matrices exactly 0
    E = E - E[0, 0]
    diag = np.trace(E) / n
    off = (E.sum() - np.trace(E)) / (n * (n - 1))
    return abs(diag - off)


# cosine similarities of identical vectors differ from 1 by a few ulps; gaps
# this small are rounding, not distinctiveness
ROUNDOFF = 1e-12


def gvd(original: Corpus, anonymized: Corpus, speakers=None) -> float:
    """Gain of voice distinctiveness in dB; 0 means unchanged distinctiveness."""
    if speakers is None:
        speakers = original.speaker_ids()
    if set(speakers) - set(anonymized.speakers):
        raise ValueError("anonymized corpus lacks some original speakers")
    d_orig = diag_dominance(similarity_matrix(original, speakers=speakers))
    d_anon = diag_dominance(similarity_matrix(anonymized, speakers=speakers))
    if d_orig <= ROUNDOFF:
        raise ZeroDivisionError("original corpus has zero diagonal dominance; GVD undefined")
    if d_anon <= ROUNDOFF:
        return -math.inf
    if d_anon == d_orig:
        return 0.0
    return 10.0 * math.log10(d_anon / d_orig)


# -- maximum mean discrepancy -------------------------------------------------


def _sqdist(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = np.einsum("ij,ij->i", x, x)[:, None] + np.einsum("ij,ij->i", y, y)[None, :] - 2.0 * x @ y.T
    return np.maximum(d, 0.0)


def gaussian_kernel(x, y, bandwidth: float) -> np.ndarray:
    """``exp(-|x - y|^2 / (2 h^2))`` for all row pairs."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    return np.exp(-_sqdist(x, y) / (2.0 * bandwidth**2))


def median_bandwidth(x, y=None) -> float:
    """Median pairwise Euclidean distance of the pooled sample."""
    z = np.asarray(x, dtype=np.float64)
    if y is not None:
        z = np.vstack([z, np.asarray(y, dtype=np.float64)])
    d = _sqdist(z, z)[np.triu_indices(len(z), k=1)]
    h = float(np.sqrt(np.median(d)))
    if h <= 0:
        raise ValueError("degenerate sample: median pairwise distance is zero")
    return h


def mmd(a, b, bandwidth: float | None = None, biased: bool = False) -> float:
    """Squared MMD between two samples with a Gaussian kernel.

    The default is the unbiased U-statistic, which can dip slightly below
    zero when both samples come from the same distribution. ``bandwidth``
    defaults to the median heuristic.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if bandwidth is None:
        bandwidth = median_bandwidth(a, b)
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    m, n = len(a), len(b)
    kaa = gaussian_kernel(a, a, bandwidth)
    kbb = gaussian_kernel(b, b, bandwidth)
    kab = gaussian_kernel(a, b, bandwidth)
    if biased:
        return float(kaa.mean() + kbb.mean() - 2.0 * kab.mean())
    if m < 2 or n < 2:
        raise ValueError("unbiased MMD needs at least two samples on each side")
    xx = (kaa.sum() - np.trace(kaa)) / (m * (m - 1))
    yy = (kbb.sum() - np.trace(kbb)) / (n * (n - 1))
    return float(xx + yy - 2.0 * kab.mean())
