import time

import numpy as np
import pytest

from stylegallery.backends import (
    AttentionBundle,
    DiffusionBackend,
    ImageRecord,
    SyntheticBackend,
    create_backend,
)
from stylegallery.errors import (
    BackendUnavailableError,
    FeatureUnavailableError,
    InvalidArgumentError,
    LayerRangeError,
    ResolutionError,
)


@pytest.fixture(scope="module")
def backend():
    return SyntheticBackend(seed=7)


@pytest.fixture(scope="module")
def image():
    rng = np.random.default_rng(2)
    return ImageRecord(id="img", pixels=rng.random((128, 128, 3)))


def shapes_image(bg, fg, layout="rect"):
    px = np.zeros((128, 128, 3))
    px[:, :] = bg
    if layout == "rect":
        px[32:96, 16:64] = fg
    else:
        for i in range(0, 128, 32):
            px[i : i + 16, :] = fg
    return px


# ---------------------------------------------------------------------------
# invert_and_extract
# ---------------------------------------------------------------------------


def test_fifteen_steps_yield_sixteen_grids(backend, image):
    stack, latent = backend.invert_and_extract(image, steps=15)
    assert len(stack.per_step) == 16
    assert stack.total_steps == 15
    assert latent.timestep == 15


def test_single_step_yields_two_grids(backend, image):
    stack, _ = backend.invert_and_extract(image, steps=1)
    assert len(stack.per_step) == 2


def test_invert_deterministic(backend, image):
    s1, l1 = backend.invert_and_extract(image, steps=5)
    s2, l2 = backend.invert_and_extract(image, steps=5)
    for a, b in zip(s1.per_step, s2.per_step):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(l1.z, l2.z)


def test_different_seed_changes_features(image):
    s1, _ = SyntheticBackend(seed=1).invert_and_extract(image, steps=2)
    s2, _ = SyntheticBackend(seed=2).invert_and_extract(image, steps=2)
    assert not np.array_equal(s1.per_step[0], s2.per_step[0])


def test_invert_rejects_bad_resolution(backend):
    img = ImageRecord(id="odd", pixels=np.zeros((100, 100, 3)))
    with pytest.raises(ResolutionError):
        backend.invert_and_extract(img, steps=3)


def test_invert_rejects_zero_steps(backend, image):
    with pytest.raises(InvalidArgumentError):
        backend.invert_and_extract(image, steps=0)


def test_invert_512_under_five_seconds(backend):
    big = ImageRecord(id="big", pixels=np.random.default_rng(0).random((512, 512, 3)))
    t0 = time.monotonic()
    backend.invert_and_extract(big, steps=15)
    assert time.monotonic() - t0 < 5.0


# ---------------------------------------------------------------------------
# semantic tokens
# ---------------------------------------------------------------------------


def test_token_grid_shape_512(backend):
    img = ImageRecord(id="b", pixels=np.full((512, 512, 3), 0.5))
    grid = backend.semantic_tokens(img)
    assert grid.grid_shape == (32, 32)
    assert grid.tokens.shape == (32, 32, backend.token_dim)


def test_constant_image_tokens_nearly_identical(backend):
    img = ImageRecord(id="c", pixels=np.full((64, 64, 3), 0.4))
    t = backend.semantic_tokens(img).tokens.reshape(-1, backend.token_dim)
    norms = np.linalg.norm(t, axis=1)
    sims = (t @ t.T) / np.outer(norms, norms)
    assert sims.min() >= 0.999


def test_hue_twin_more_similar_than_unrelated(backend):
    a = ImageRecord(id="a", pixels=shapes_image((0.15, 0.15, 0.3), (0.7, 0.3, 0.3)))
    b = ImageRecord(id="b", pixels=shapes_image((0.3, 0.15, 0.15), (0.3, 0.7, 0.3)))
    c = ImageRecord(
        id="c", pixels=shapes_image((0.5, 0.5, 0.1), (0.1, 0.2, 0.6), layout="stripes")
    )

    def mean_cos(x, y):
        tx = backend.semantic_tokens(x).tokens.reshape(-1, backend.token_dim)
        ty = backend.semantic_tokens(y).tokens.reshape(-1, backend.token_dim)
        num = (tx * ty).sum(axis=1)
        den = np.linalg.norm(tx, axis=1) * np.linalg.norm(ty, axis=1)
        return (num / den).mean()

    assert mean_cos(a, b) > mean_cos(a, c)


def test_tokens_reject_unaligned_resolution(backend):
    img = ImageRecord(id="x", pixels=np.zeros((40, 40, 3)))
    with pytest.raises(ResolutionError):
        backend.semantic_tokens(img)


# ---------------------------------------------------------------------------
# depth
# ---------------------------------------------------------------------------


def test_depth_ramp_monotone_along_x(backend):
    W = 128
    ramp = np.tile(np.linspace(0.0, 1.0, W), (W, 1))
    img = ImageRecord(id="ramp", pixels=np.repeat(ramp[:, :, None], 3, axis=2))
    depth = backend.depth_features(img)
    assert np.all(np.diff(depth, axis=1) > 0)


def test_depth_constant_image(backend):
    img = ImageRecord(id="flat", pixels=np.full((64, 64, 3), 0.7))
    depth = backend.depth_features(img)
    assert np.all(depth == depth.ravel()[0])


def test_depth_grid_matches_cluster_grid(backend, image):
    depth = backend.depth_features(image)
    stack, _ = backend.invert_and_extract(image, steps=1)
    assert depth.shape == stack.grid_shape


def test_depth_unavailable_when_disabled(image):
    be = SyntheticBackend(seed=0, depth_enabled=False)
    with pytest.raises(FeatureUnavailableError):
        be.depth_features(image)


# ---------------------------------------------------------------------------
# attention capture
# ---------------------------------------------------------------------------


def test_six_layers_six_bundles(backend, image):
    _, latent = backend.invert_and_extract(image, steps=2)
    bundles = backend.sample_step_attention(latent, backend.default_loss_layers())
    assert len(bundles) == 6
    for b in bundles:
        assert b.Q.shape == b.K.shape == b.V.shape
        assert b.spatial_shape[0] * b.spatial_shape[1] == b.Q.shape[0]


def test_empty_layer_list(backend, image):
    _, latent = backend.invert_and_extract(image, steps=1)
    assert backend.sample_step_attention(latent, []) == []


def test_bundles_pure_function_of_latent_and_seed(backend, image):
    _, latent = backend.invert_and_extract(image, steps=3)
    b1 = backend.sample_step_attention(latent, [0, 7])
    b2 = backend.sample_step_attention(latent, [0, 7])
    for x, y in zip(b1, b2):
        np.testing.assert_array_equal(x.Q, y.Q)
        np.testing.assert_array_equal(x.K, y.K)
        np.testing.assert_array_equal(x.V, y.V)


def test_invalid_layer_rejected(backend, image):
    _, latent = backend.invert_and_extract(image, steps=1)
    with pytest.raises(LayerRangeError):
        backend.sample_step_attention(latent, [99])


def test_attention_vjp_matches_linear_projection(backend, image):
    # Bundles are linear in the latent, so a VJP with cotangent e_i recovers
    # one row of the transposed Jacobian; compare against finite differences.
    _, latent = backend.invert_and_extract(image, steps=1)
    layer = backend.default_loss_layers()[0]
    bundles = backend.sample_step_attention(latent, [layer])
    dq = np.random.default_rng(0).normal(size=bundles[0].Q.shape)
    dk = np.zeros_like(bundles[0].K)
    dv = np.zeros_like(bundles[0].V)
    dz = backend.attention_vjp(latent, [layer], [(dq, dk, dv)])

    eps = 1e-6
    rng = np.random.default_rng(1)
    for _ in range(4):
        idx = tuple(rng.integers(s) for s in latent.z.shape)
        zp = latent.z.copy()
        zp[idx] += eps
        zm = latent.z.copy()
        zm[idx] -= eps
        qp = backend.sample_step_attention(
            type(latent)(ref_id="t", z=zp, timestep=0), [layer]
        )[0].Q
        qm = backend.sample_step_attention(
            type(latent)(ref_id="t", z=zm, timestep=0), [layer]
        )[0].Q
        fd = ((qp - qm) / (2 * eps) * dq).sum()
        assert fd == pytest.approx(dz[idx], rel=1e-5, abs=1e-8)


# ---------------------------------------------------------------------------
# coherence + factory
# ---------------------------------------------------------------------------


def test_grid_shapes_mutually_consistent(backend):
    img = ImageRecord(id="g", pixels=np.random.default_rng(5).random((256, 256, 3)))
    stack, latent = backend.invert_and_extract(img, steps=1)
    tokens = backend.semantic_tokens(img)
    depth = backend.depth_features(img)
    assert stack.grid_shape == tokens.grid_shape == depth.shape
    assert latent.z.shape[1:] == stack.grid_shape


def test_encode_decode_round_trip_on_block_flat_image(backend):
    px = np.zeros((64, 64, 3))
    px[:, 32:] = [0.2, 0.5, 0.8]
    img = ImageRecord(id="flatblocks", pixels=px)
    z = backend.encode_image(img)
    out = backend.decode_latent(z)
    np.testing.assert_allclose(out, px, atol=1e-12)


def test_create_backend_synthetic_and_diffusion():
    be = create_backend({"kind": "synthetic", "seed": 3})
    assert isinstance(be, SyntheticBackend)
    assert be.seed == 3
    diff = create_backend({"kind": "diffusion", "weights_uri": "file:///none"})
    assert isinstance(diff, DiffusionBackend)


def test_diffusion_backend_unavailable_names_fallback(image):
    diff = DiffusionBackend(weights_uri="s3://weights/sd15")
    with pytest.raises(BackendUnavailableError, match="synthetic"):
        diff.invert_and_extract(image, steps=15)


def test_image_record_validation():
    with pytest.raises(InvalidArgumentError):
        ImageRecord(id="bad", pixels=np.full((8, 8, 3), 1.5))
    with pytest.raises(InvalidArgumentError):
        ImageRecord(id="bad", pixels=np.zeros((8, 8)))
    with pytest.raises(InvalidArgumentError):
        ImageRecord(id="bad", pixels=np.zeros((8, 8, 3)), role="texture")


def test_attention_bundle_shape_checks():
    with pytest.raises(Exception):
        AttentionBundle(
            layer_id=0,
            Q=np.zeros((4, 2)),
            K=np.zeros((3, 2)),
            V=np.zeros((4, 2)),
            spatial_shape=(2, 2),
        )
