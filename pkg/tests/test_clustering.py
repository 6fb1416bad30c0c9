import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stylegallery.backends import FeatureStack, SemanticTokenGrid
from stylegallery.clustering import (
    ClusterMask,
    ClusterOptConfig,
    FusionWeights,
    classification_accuracy,
    depth_guided_split,
    eliminate_isolated,
    fuse_features,
    ingest_base_mask,
    initial_clusters,
    optimize_clusters,
    raw_weight,
    regions_from_annotation,
    relabel_contiguous,
    resize_labels,
    semantic_merge,
)
from stylegallery.errors import InvalidArgumentError, ShapeMismatchError


def make_stack(grids, image_id="img"):
    grids = [np.asarray(g, dtype=float) for g in grids]
    return FeatureStack(
        image_id=image_id,
        per_step=grids,
        grid_shape=grids[0].shape[1:],
        total_steps=len(grids) - 1,
    )


def token_grid(vectors, shape, image_id="img"):
    """Build a SemanticTokenGrid from per-cell descriptor vectors."""
    arr = np.asarray(vectors, dtype=float).reshape(*shape, -1)
    return SemanticTokenGrid(image_id=image_id, tokens=arr, grid_shape=shape)


# ---------------------------------------------------------------------------
# Fusion weights
# ---------------------------------------------------------------------------


def test_raw_weight_at_inflection_is_exactly_half():
    assert raw_weight(7, 10) == 0.5


def test_raw_weight_t0_T15():
    # 1 / (1 + exp(-3.5)) evaluated directly
    assert raw_weight(0, 15) == pytest.approx(0.9706877692486436, abs=1e-12)


@pytest.mark.parametrize("total", [1, 15, 50])
def test_normalized_weights_sum_to_one(total):
    w = FusionWeights(total_steps=total)
    assert abs(w.normalized.sum() - 1.0) <= 1e-9
    assert np.all(np.diff(w.normalized) < 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=1, max_value=120))
def test_weight_properties_hold_for_any_step_count(total):
    w = FusionWeights(total_steps=total)
    assert len(w.normalized) == total + 1
    assert abs(w.normalized.sum() - 1.0) <= 1e-9
    assert np.all(np.diff(w.normalized) < 0)


def test_fuse_identical_grids_returns_same_grid():
    g = np.random.default_rng(0).normal(size=(3, 4, 4))
    stack = make_stack([g] * 6)
    fused = fuse_features(stack, FusionWeights(total_steps=5))
    np.testing.assert_allclose(fused.fused, g, atol=1e-12)
    # original per-step entries untouched
    np.testing.assert_array_equal(stack.per_step[0], g)


def test_fuse_step_count_mismatch():
    stack = make_stack([np.zeros((2, 2, 2))] * 4)
    with pytest.raises(ShapeMismatchError):
        fuse_features(stack, FusionWeights(total_steps=5))


def test_fuse_matches_direct_weighted_sum():
    rng = np.random.default_rng(3)
    grids = [rng.normal(size=(2, 3, 3)) for _ in range(8)]
    stack = make_stack(grids)
    w = FusionWeights(total_steps=7)
    expected = sum(wi * g for wi, g in zip(w.normalized, grids))
    fused = fuse_features(stack, w)
    np.testing.assert_allclose(fused.fused, expected, atol=1e-12)


# ---------------------------------------------------------------------------
# Initial clustering
# ---------------------------------------------------------------------------


def test_two_separated_blobs_partition_exactly():
    h, w = 6, 8
    fused = np.zeros((4, h, w))
    fused[:, :, :4] = 10.0
    fused[:, :, 4:] = -10.0
    rng = np.random.default_rng(1)
    fused += 0.01 * rng.normal(size=fused.shape)
    mask = initial_clusters(fused, ClusterOptConfig(k_max=2, pca_dims=4), seed=5)
    assert mask.n_clusters == 2
    left = mask.labels[:, :4]
    right = mask.labels[:, 4:]
    assert len(np.unique(left)) == 1
    assert len(np.unique(right)) == 1
    assert left[0, 0] != right[0, 0]


def test_constant_grid_collapses_to_single_cluster():
    fused = np.ones((3, 5, 5))
    mask = initial_clusters(fused, ClusterOptConfig(k_max=4), seed=0)
    assert mask.n_clusters == 1
    assert mask.warnings


def test_fewer_distinct_cells_than_k():
    fused = np.zeros((2, 2, 2))
    fused[:, 0, 0] = 1.0  # exactly two distinct cell vectors
    mask = initial_clusters(fused, ClusterOptConfig(k_max=5, pca_dims=2), seed=0)
    assert mask.n_clusters == 2
    assert any("distinct" in w for w in mask.warnings)


def test_initial_clusters_deterministic():
    rng = np.random.default_rng(9)
    fused = rng.normal(size=(8, 10, 10))
    cfg = ClusterOptConfig(k_max=4, pca_dims=8)
    a = initial_clusters(fused, cfg, seed=42)
    b = initial_clusters(fused, cfg, seed=42)
    np.testing.assert_array_equal(a.labels, b.labels)


def test_labels_contiguous_from_zero():
    rng = np.random.default_rng(2)
    fused = rng.normal(size=(6, 12, 12))
    mask = initial_clusters(fused, ClusterOptConfig(k_max=5, pca_dims=6), seed=3)
    present = np.unique(mask.labels)
    np.testing.assert_array_equal(present, np.arange(mask.n_clusters))


# ---------------------------------------------------------------------------
# Optimization passes
# ---------------------------------------------------------------------------


def test_semantic_merge_identical_descriptors():
    labels = np.array([[0, 0, 1, 1]] * 4)
    tok = token_grid(np.tile([1.0, 2.0, 0.5], (16, 1)), (4, 4))
    merged, warnings = semantic_merge(labels, tok, threshold=0.85)
    assert len(np.unique(merged)) == 1
    assert warnings == ()


def test_semantic_merge_keeps_dissimilar_clusters():
    labels = np.array([[0, 0, 1, 1]] * 4)
    vecs = np.zeros((16, 3))
    vecs[:, 0] = 1.0
    vecs[labels.ravel() == 1] = [0.0, 1.0, 0.0]  # orthogonal descriptors
    tok = token_grid(vecs, (4, 4))
    merged, _ = semantic_merge(labels, tok, threshold=0.85)
    assert len(np.unique(merged)) == 2


def test_semantic_merge_never_increases_count():
    rng = np.random.default_rng(4)
    labels = rng.integers(0, 5, size=(8, 8))
    labels, n = relabel_contiguous(labels)
    tok = token_grid(rng.normal(size=(64, 6)), (8, 8))
    merged, _ = semantic_merge(labels, tok, threshold=0.5)
    assert len(np.unique(merged)) <= n


def test_isolated_single_pixel_absorbed():
    labels = np.ones((5, 5), dtype=int)
    labels[2, 2] = 0
    labels, _ = relabel_contiguous(labels)
    out = eliminate_isolated(labels, min_area=8)
    assert len(np.unique(out)) == 1


def test_isolated_preserves_large_components():
    labels = np.zeros((6, 6), dtype=int)
    labels[:, 3:] = 1
    out = eliminate_isolated(labels, min_area=8)
    np.testing.assert_array_equal(out, labels)


def test_isolated_never_increases_count():
    rng = np.random.default_rng(8)
    labels = rng.integers(0, 4, size=(9, 9))
    labels, n = relabel_contiguous(labels)
    out = eliminate_isolated(labels, min_area=3)
    assert len(np.unique(out)) <= n
    # every surviving component is at least the threshold (single-label grids exempt)
    from scipy import ndimage

    four = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    if len(np.unique(out)) > 1:
        for lab in np.unique(out):
            comp, n_comp = ndimage.label(out == lab, structure=four)
            areas = np.bincount(comp.ravel())[1:]
            assert areas.min() >= 3


def test_depth_split_separates_bimodal_cluster():
    labels = np.zeros((4, 8), dtype=int)
    depth = np.zeros((4, 8))
    depth[:, 4:] = 1.0
    out = depth_guided_split(labels, depth)
    assert len(np.unique(out)) == 2


def test_depth_split_ignores_small_gap():
    labels = np.zeros((4, 8), dtype=int)
    depth = np.linspace(0, 1, 32).reshape(4, 8)
    # second cluster provides the global range; first cluster's gap is tiny
    labels[:, 6:] = 1
    depth[:, :6] = 0.5 + 0.01 * (depth[:, :6] > 0.35)
    out = depth_guided_split(labels, depth)
    assert len(np.unique(out[:, :6])) == 1


def test_optimize_full_pipeline_partition_and_monotonicity():
    rng = np.random.default_rng(5)
    h = w = 12
    labels = rng.integers(0, 6, size=(h, w))
    labels, n0 = relabel_contiguous(labels)
    mask = ClusterMask(image_id="m", labels=labels, n_clusters=n0)
    fused = rng.normal(size=(4, h, w))
    tok = token_grid(rng.normal(size=(h * w, 5)), (h, w))
    depth = rng.random((h, w))
    out = optimize_clusters(mask, fused, depth, tok, ClusterOptConfig(k_max=10, isolated_area=4))
    present = np.unique(out.labels)
    np.testing.assert_array_equal(present, np.arange(out.n_clusters))
    assert out.labels.shape == (h, w)


def test_optimize_idempotent_on_structured_mask():
    h = w = 16
    labels = np.zeros((h, w), dtype=int)
    labels[:, 8:] = 1
    mask = ClusterMask(image_id="m", labels=labels, n_clusters=2)
    fused = np.zeros((3, h, w))
    fused[:, :, 8:] = 1.0
    vecs = np.zeros((h * w, 4))
    vecs[labels.ravel() == 0] = [1.0, 0.2, 0.0, 0.0]
    vecs[labels.ravel() == 1] = [0.0, 0.2, 1.0, 0.0]
    tok = token_grid(vecs, (h, w))
    depth = np.zeros((h, w))
    depth[:, 8:] = 1.0
    cfg = ClusterOptConfig()
    once = optimize_clusters(mask, fused, depth, tok, cfg)
    twice = optimize_clusters(once, fused, depth, tok, cfg)
    np.testing.assert_array_equal(once.labels, twice.labels)
    assert once.n_clusters == twice.n_clusters


# ---------------------------------------------------------------------------
# External base masks
# ---------------------------------------------------------------------------


def _simple_semantics(labels, dim=4):
    """Tokens keyed by label so the semantic merge sees what the mask sees."""
    basis = np.eye(dim)
    vecs = basis[labels.ravel() % dim] + 0.05
    return token_grid(vecs, labels.shape)


def test_ingest_fixed_point_on_optimized_mask():
    h = w = 12
    labels = np.zeros((h, w), dtype=int)
    labels[:, 6:] = 1
    tok = _simple_semantics(labels)
    fused = np.zeros((2, h, w))
    cfg = ClusterOptConfig(use_depth_split=False)
    out = ingest_base_mask(labels, (h, w), fused, None, tok, cfg, image_id="img")
    np.testing.assert_array_equal(out.labels, labels)
    assert out.provenance == "external_base"


def test_ingest_fills_unknown_cells():
    h = w = 8
    ext = np.zeros((h, w), dtype=int)
    ext[:, 4:] = 1
    ext[3:5, 3:5] = -1  # unknown hole
    tok = _simple_semantics(np.where(ext < 0, 0, ext))
    fused = np.zeros((2, h, w))
    out = ingest_base_mask(ext, (h, w), fused, None, tok, ClusterOptConfig(use_depth_split=False))
    assert (out.labels >= 0).all()
    assert out.n_clusters == 2


def test_ingest_rejects_fully_unknown():
    ext = -np.ones((4, 4), dtype=int)
    tok = _simple_semantics(np.zeros((4, 4), dtype=int))
    with pytest.raises(InvalidArgumentError):
        ingest_base_mask(ext, (4, 4), np.zeros((2, 4, 4)), None, tok, ClusterOptConfig())


# ---------------------------------------------------------------------------
# Accuracy
# ---------------------------------------------------------------------------


def test_accuracy_perfect_match():
    labels = np.array([[0, 0, 1, 1]] * 4)
    mask = ClusterMask(image_id="m", labels=labels, n_clusters=2)
    regions = regions_from_annotation(labels)
    assert classification_accuracy(mask, regions) == 1.0


def test_accuracy_single_giant_cluster_three_regions():
    labels = np.zeros((6, 6), dtype=int)
    mask = ClusterMask(image_id="m", labels=labels, n_clusters=1)
    ann = np.zeros((6, 6), dtype=int)
    ann[:, 2:4] = 1
    ann[:, 4:] = 2
    acc = classification_accuracy(mask, regions_from_annotation(ann))
    assert acc <= 1 / 3


def test_accuracy_empty_annotation_rejected():
    mask = ClusterMask(image_id="m", labels=np.zeros((2, 2), dtype=int), n_clusters=1)
    with pytest.raises(InvalidArgumentError):
        classification_accuracy(mask, [])


# ---------------------------------------------------------------------------
# Resize
# ---------------------------------------------------------------------------


def test_resize_round_trip_preserves_uniform_neighborhoods():
    # NN sampling can displace a cell diagonally through the round trip, so
    # the guarantee is for cells whose full first ring is uniform.
    labels = np.zeros((16, 16), dtype=int)
    labels[:, 5:] = 1
    labels[9:, :] = 2
    labels[3:6, 10:14] = 0
    down = resize_labels(labels, (8, 8))
    up = resize_labels(down, (16, 16))
    checked = 0
    for r in range(1, 15):
        for c in range(1, 15):
            ring = labels[r - 1 : r + 2, c - 1 : c + 2]
            if len(np.unique(ring)) == 1:
                assert up[r, c] == labels[r, c]
                checked += 1
    assert checked > 0


def test_resize_identity():
    labels = np.arange(12).reshape(3, 4)
    np.testing.assert_array_equal(resize_labels(labels, (3, 4)), labels)
