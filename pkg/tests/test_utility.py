import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vpgan.corpus import Corpus, SyntheticCorpusSpec, generate_synthetic
from vpgan.utility import diag_dominance, gaussian_kernel, gvd, median_bandwidth, mmd, similarity_matrix

SPEC = SyntheticCorpusSpec(speaker_count=6, utterances_per_speaker=5, dim=16, rank=4, within_speaker_scale=0.3)


def naive_similarity(a, b=None):
    within = b is None
    b = a if within else b
    ids = a.speaker_ids()
    M = np.zeros((len(ids), len(ids)))
    for i, si in enumerate(ids):
        for j, sj in enumerate(ids):
            vals = []
            for p in range(len(a)):
                for q in range(len(b)):
                    if a.speakers[p] != si or b.speakers[q] != sj:
                        continue
                    if within and p == q and sum(s == si for s in a.speakers) > 1:
                        continue
                    x, y = a.vectors[p], b.vectors[q]
                    vals.append(x @ y / (np.linalg.norm(x) * np.linalg.norm(y)))
            M[i, j] = np.mean(vals)
    return M


def test_similarity_matches_naive_loops():
    enroll, trial = generate_synthetic(SPEC)
    assert np.abs(similarity_matrix(trial).entries - naive_similarity(trial)).max() < 1e-12
    e, t = generate_synthetic(SyntheticCorpusSpec(speaker_count=4, utterances_per_speaker=4, dim=8, rank=2))
    assert np.abs(similarity_matrix(e, t).entries - naive_similarity(e, t)).max() < 1e-12


def orthogonal(n=3, utts=2):
    vecs = [np.eye(n)[s] for s in range(n) for _ in range(utts)]
    spk = [f"s{s}" for s in range(n) for _ in range(utts)]
    return Corpus("o", "trial", np.array(vecs), spk, [f"{s}-{u}" for s in spk[::utts] for u in range(utts)])


def test_orthogonal_speakers_identity_like():
    np.testing.assert_allclose(similarity_matrix(orthogonal()).entries, np.eye(3), atol=1e-15)


def test_shared_vector_all_ones():
    c = Corpus("x", "trial", np.ones((6, 4)), list("aabbcc"), list("121212"))
    np.testing.assert_allclose(similarity_matrix(c).entries, 1.0)


def test_similarity_invariant_to_utterance_order():
    _, trial = generate_synthetic(SPEC)
    perm = np.random.default_rng(0).permutation(len(trial))
    shuffled = trial.subset(perm)
    np.testing.assert_allclose(similarity_matrix(shuffled, speakers=trial.speaker_ids()).entries, similarity_matrix(trial).entries, atol=1e-12)


def test_similarity_speaker_mismatch():
    a = orthogonal()
    b = Corpus("b", "trial", a.vectors, [s + "x" for s in a.speakers], a.utterances)
    with pytest.raises(ValueError):
        similarity_matrix(a, b)


def test_entries_in_unit_range():
    _, trial = generate_synthetic(SPEC)
    E = similarity_matrix(trial).entries
    assert E.min() >= -1 and E.max() <= 1


def test_diag_dominance_cases():
    assert diag_dominance(np.eye(4)) == 1.0
    assert diag_dominance(np.full((3, 3), 0.4)) == 0.0
    M = np.full((3, 3), 0.1)
    np.fill_diagonal(M, 0.9)
    assert diag_dominance(M) == pytest.approx(0.8)
    with pytest.raises(ValueError):
        diag_dominance(np.eye(1))


def test_gvd_identity_is_exactly_zero():
    _, trial = generate_synthetic(SPEC)
    assert gvd(trial, trial) == 0.0


def test_gvd_total_collapse_is_minus_infinity():
    _, trial = generate_synthetic(SPEC)
    collapsed = trial.with_vectors(np.tile(trial.vectors[0], (len(trial), 1)))
    assert gvd(trial, collapsed) == -math.inf


def test_gvd_sign_semantics():
    _, trial = generate_synthetic(SPEC)
    # perfectly consistent, far-apart speakers are more distinctive than the noisy original
    ids, means = trial.speaker_means()
    lookup = dict(zip(ids, means))
    sharper = trial.with_vectors(np.stack([lookup[s] for s in trial.speakers]))
    assert gvd(trial, sharper) > 0
    blurred = trial.with_vectors(trial.vectors + 3.0 * np.random.default_rng(0).standard_normal(trial.vectors.shape))
    assert gvd(trial, blurred) < 0


def test_gvd_zero_original_dominance():
    c = Corpus("x", "trial", np.ones((4, 2)), list("aabb"), list("1212"))
    with pytest.raises(ZeroDivisionError):
        gvd(c, Corpus("y", "trial", np.eye(4), list("aabb"), list("1212")))


# -- MMD ------------------------------------------------------------------------


def test_kernel_naive():
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal((4, 3)), rng.standard_normal((5, 3))
    K = gaussian_kernel(x, y, 0.7)
    for i in range(4):
        for j in range(5):
            assert K[i, j] == pytest.approx(math.exp(-sum((x[i] - y[j]) ** 2) / (2 * 0.49)), abs=1e-12)


def test_identical_samples():
    x = np.random.default_rng(1).standard_normal((200, 5))
    assert mmd(x, x, biased=True) == pytest.approx(0.0, abs=1e-12)
    assert abs(mmd(x, x)) < 0.02


def test_separated_gaussians_vs_same_distribution():
    rng = np.random.default_rng(2)
    same = [abs(mmd(rng.standard_normal((300, 4)), rng.standard_normal((300, 4)), 2.0)) for _ in range(5)]
    apart = mmd(rng.standard_normal((300, 4)), rng.standard_normal((300, 4)) + 4.0, 2.0)
    assert apart >= 10 * max(same)


def test_bandwidth_validation():
    with pytest.raises(ValueError):
        mmd(np.zeros((3, 2)), np.ones((3, 2)), bandwidth=0.0)
    with pytest.raises(ValueError):
        median_bandwidth(np.zeros((4, 2)))
    with pytest.raises(ValueError):
        mmd(np.zeros((3, 2)), np.zeros((3, 3)), 1.0)


def test_median_bandwidth_naive():
    x = np.array([[0.0], [1.0], [3.0]])
    assert median_bandwidth(x) == pytest.approx(2.0)


@given(st.integers(0, 10_000))
def test_mmd_symmetric_and_rotation_invariant(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((20, 4)), rng.standard_normal((25, 4)) + 0.5
    q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    h = median_bandwidth(a, b)
    assert mmd(a, b, h) == pytest.approx(mmd(b, a, h), abs=1e-12)
    assert mmd(a @ q, b @ q) == pytest.approx(mmd(a, b), abs=1e-9)
