import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vpgan.projection import (
    Projection2D,
    ProjectionConfig,
    conditional_affinities,
    joint_affinities,
    nn1_label_error,
    pca,
    render_overlap,
    trustworthiness,
    tsne,
    viewport_transform,
    write_points_csv,
)

# -- PCA ------------------------------------------------------------------------


def test_pca_of_planar_data_keeps_all_variance(rng):
    basis = np.linalg.qr(rng.standard_normal((10, 2)))[0].T
    X = rng.standard_normal((200, 2)) @ basis + 3.0
    res = pca(X, 2)
    assert res.explained_variance_ratio.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(res.reconstruct(), X, atol=1e-10)


def test_pca_full_rank_preserves_pairwise_distances(rng):
    X = rng.standard_normal((30, 5))
    Y = pca(X, 5).reduced
    dx = np.linalg.norm(X[:, None] - X[None], axis=-1)
    dy = np.linalg.norm(Y[:, None] - Y[None], axis=-1)
    np.testing.assert_allclose(dy, dx, atol=1e-10)


def test_pca_matches_covariance_eigendecomposition(rng):
    X = rng.standard_normal((100, 6)) * np.array([5, 3, 2, 1, 0.5, 0.1])
    res = pca(X, 3)
    Xc = X - X.mean(axis=0)
    cov = np.zeros((6, 6))
    for row in Xc:
        cov += np.outer(row, row)
    cov /= len(X) - 1
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:3]
    np.testing.assert_allclose(res.explained_variance, vals[order], rtol=1e-10)
    for k, idx in enumerate(order):
        assert abs(abs(res.components[k] @ vecs[:, idx]) - 1.0) < 1e-9


def test_pca_rejects_identical_points():
    with pytest.raises(ValueError, match="degenerate"):
        pca(np.ones((5, 3)), 2)


def test_pca_rejects_bad_dims(rng):
    with pytest.raises(ValueError):
        pca(rng.standard_normal((5, 3)), 4)
    with pytest.raises(ValueError):
        pca(rng.standard_normal((1, 3)), 1)


@settings(max_examples=25)
@given(seed=st.integers(0, 10_000))
def test_pca_reconstruction_error_shrinks_with_more_axes(seed):
    X = np.random.default_rng(seed).standard_normal((20, 6))
    errs = [np.sum((pca(X, k).reconstruct() - X) ** 2) for k in range(1, 7)]
    assert all(b <= a + 1e-9 for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-18 * max(1.0, np.sum(X**2)) + 1e-12


# -- affinities -------------------------------------------------------------------


@pytest.mark.parametrize("perplexity", [5.0, 12.0, 30.0])
def test_row_entropy_matches_perplexity(rng, perplexity):
    X = rng.standard_normal((120, 4))
    P, H = conditional_affinities(X, perplexity)
    assert np.max(np.abs(H - np.log(perplexity))) < 1e-4
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(np.diag(P) == 0)


def test_joint_affinities_symmetric_and_normalized(rng):
    P = joint_affinities(rng.standard_normal((80, 3)), 10.0)
    np.testing.assert_array_equal(P, P.T)
    assert abs(P.sum() - 1.0) < 1e-9


# -- t-SNE ------------------------------------------------------------------------


def two_clusters(rng, n=60, dim=10, gap=8.0):
    a = rng.standard_normal((n, dim))
    b = rng.standard_normal((n, dim)) + gap
    return np.vstack([a, b]), np.array([0] * n + [1] * n)


FAST = ProjectionConfig(perplexity=15.0, iterations=400, exaggeration_iterations=100, seed=3)


def test_tsne_separates_two_clusters(rng):
    X, labels = two_clusters(rng)
    proj = tsne(X, FAST)
    assert proj.points.shape == (120, 2)
    assert nn1_label_error(proj.points, labels) == 0.0
    assert trustworthiness(X, proj.points, k=10) > 0.8


def test_tsne_kl_non_increasing_after_exaggeration(rng):
    X, _ = two_clusters(rng)
    kl = tsne(X, FAST).kl_history
    assert len(kl) == FAST.iterations
    tail = kl[FAST.exaggeration_iterations :]
    for start in range(0, len(tail) - 50, 50):
        assert tail[start + 50] <= tail[start] + 1e-6


def test_tsne_is_deterministic(rng):
    X, _ = two_clusters(rng, n=20)
    cfg = ProjectionConfig(perplexity=5.0, iterations=120, exaggeration_iterations=40, seed=9)
    a, b = tsne(X, cfg), tsne(X, cfg)
    assert a.points.tobytes() == b.points.tobytes()


def test_tsne_reduces_wide_inputs_with_pca_first(rng):
    X, _ = two_clusters(rng, n=30, dim=80)
    cfg = ProjectionConfig(pca_dims=20, perplexity=8.0, iterations=60, exaggeration_iterations=20)
    direct = tsne(X, cfg)
    reduced = tsne(pca(X, 20).reduced, cfg)
    np.testing.assert_allclose(direct.points, reduced.points, rtol=0, atol=1e-8)


def test_tsne_rejects_infeasible_perplexity(rng):
    with pytest.raises(ValueError, match="perplexity"):
        tsne(rng.standard_normal((30, 3)), ProjectionConfig(perplexity=10.0))


def test_tsne_rejects_tiny_input():
    with pytest.raises(ValueError):
        tsne(np.zeros((3, 2)))


# -- metrics ------------------------------------------------------------------------


def test_nn1_label_error_hand_case():
    pts = np.array([[0.0, 0], [0.1, 0], [5, 5], [5.1, 5]])
    assert nn1_label_error(pts, ["a", "a", "b", "b"]) == 0.0
    assert nn1_label_error(pts, ["a", "b", "a", "b"]) == 1.0


def test_trustworthiness_of_identity_embedding(rng):
    X = rng.standard_normal((40, 2))
    assert trustworthiness(X, X, k=5) == pytest.approx(1.0)


# -- rendering -------------------------------------------------------------------------


def _circles(svg: str):
    return [(float(x), float(y)) for x, y in re.findall(r'<circle cx="([^"]+)" cy="([^"]+)"', svg)]


def test_svg_points_follow_viewport_transform(tmp_path, rng):
    pts = rng.standard_normal((25, 2)) * 3
    labels = ["real"] * 10 + ["generated"] * 15
    path = render_overlap(Projection2D(pts, labels), tmp_path / "f.svg", size=300, margin=10)
    svg = path.read_text()
    got = np.array(_circles(svg))
    # independent recomputation of the pixel mapping
    lo = pts.min(axis=0)
    s = 280 / (pts.max(axis=0) - lo).max()
    expect = np.stack([10 + (pts[:, 0] - lo[0]) * s, 300 - 10 - (pts[:, 1] - lo[1]) * s], axis=1)
    order = [i for i, lab in enumerate(labels) if lab == "real"] + [i for i, lab in enumerate(labels) if lab == "generated"]
    np.testing.assert_allclose(got, expect[order], atol=1e-5)
    assert 0 <= got.min() and got.max() <= 300


def test_svg_groups_and_colors(tmp_path):
    pts = np.array([[0.0, 0], [1, 1], [2, 0]])
    svg = render_overlap(Projection2D(pts, ["real", "generated", "real"]), tmp_path / "g.svg").read_text()
    real_block = svg.split('<g class="real"')[1].split("</g>")[0]
    gen_block = svg.split('<g class="generated"')[1].split("</g>")[0]
    assert real_block.count("<circle") == 2 and gen_block.count("<circle") == 1
    assert "#2ca02c" in real_block and "#8e44ad" in gen_block


def test_svg_with_no_generated_points(tmp_path, rng):
    proj = Projection2D(rng.standard_normal((5, 2)), ["real"] * 5)
    svg = render_overlap(proj, tmp_path / "e.svg").read_text()
    real_block = svg.split('<g class="real"')[1].split("</g>")[0]
    gen_block = svg.split('<g class="generated"')[1].split("</g>")[0]
    assert real_block.count("<circle") == 5 and "<circle" not in gen_block


def test_svg_of_empty_projection(tmp_path):
    svg = render_overlap(Projection2D(np.zeros((0, 2)), []), tmp_path / "z.svg").read_text()
    assert svg.startswith("<svg") and "<circle" not in svg


def test_svg_bytes_are_deterministic(tmp_path, rng):
    proj = Projection2D(rng.standard_normal((10, 2)), ["real", "generated"] * 5)
    a = render_overlap(proj, tmp_path / "a.svg").read_bytes()
    b = render_overlap(proj, tmp_path / "b.svg").read_bytes()
    assert a == b


def test_one_file_per_checkpoint(tmp_path, rng):
    for k in range(4):
        render_overlap(Projection2D(rng.standard_normal((6, 2)), ["real"] * 6), tmp_path / f"step_{k}.svg")
    assert len(list(tmp_path.glob("*.svg"))) == 4


def test_points_csv_round_trip(tmp_path, rng):
    pts = rng.standard_normal((7, 2))
    labels = ["real"] * 3 + ["generated"] * 4
    path = write_points_csv(Projection2D(pts, labels), tmp_path / "p.csv")
    rows = path.read_text().splitlines()
    assert rows[0] == "x,y,label"
    back = np.array([[float(r.split(",")[0]), float(r.split(",")[1])] for r in rows[1:]])
    assert back.tobytes() == pts.tobytes()
    assert [r.split(",")[2] for r in rows[1:]] == labels


def test_viewport_of_single_point():
    pix, (_, _, s) = viewport_transform(np.array([[2.0, 3.0]]), size=100, margin=10)
    assert s == 1.0
    np.testing.assert_allclose(pix, [[10.0, 90.0]])
