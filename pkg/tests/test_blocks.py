import numpy as np
import pytest

from factorizer.autograd import Tensor, gradcheck
from factorizer.exceptions import ConfigurationError
from factorizer.models.blocks import FactorizerBlock, PositionalEmbedding, WrappedNMF, add_positional_embedding
from factorizer.schemas import MatricizeConfig, MatricizeMode, NmfConfig

NMF_CFG = NmfConfig(rank=1, iterations=5)
SHIFTED = MatricizeConfig(mode=MatricizeMode.SW, head_dim=4, patch=2)


def relative_error(analytic, numeric):
    return np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)


def wrapped(channels, cfg, identity=False, seed=0):
    layer = WrappedNMF(channels, cfg, NMF_CFG, index=1, rng=np.random.default_rng(seed), dtype=np.float64)
    if identity:
        layer.in_projection.set_identity()
        layer.out_projection.set_identity()
    return layer


def block(channels=4, cfg=SHIFTED, seed=0):
    return FactorizerBlock(channels, cfg, NMF_CFG, index=1, rng=np.random.default_rng(seed), dtype=np.float64)


def test_wrapped_nmf_preserves_shape():
    cfg = MatricizeConfig(mode=MatricizeMode.GLOBAL, head_dim=8)
    x = Tensor(np.random.default_rng(0).normal(size=(1, 32, 8, 8, 8)))
    assert wrapped(32, cfg)(x).shape == (1, 32, 8, 8, 8)


def test_identity_projections_reconstruct_rank_one_heads():
    """A nonnegative rank-one head passes through the layer unchanged"""
    rng = np.random.default_rng(1)
    channel_profile = rng.uniform(0.5, 2.0, size=4)
    spatial_profile = rng.uniform(0.5, 2.0, size=(4, 4, 4))
    x = (channel_profile[:, None, None, None] * spatial_profile)[None]
    out = wrapped(4, SHIFTED, identity=True)(Tensor(x)).numpy()
    assert relative_error(out, x) < 1e-2


def test_wrapped_nmf_gradient():
    layer = wrapped(4, SHIFTED)
    # A large positive projection bias keeps the ReLU away from its kink
    layer.in_projection.bias.assign(np.full(4, 3.0))
    x = Tensor(np.random.default_rng(2).uniform(-1, 1, size=(1, 4, 4, 4, 4)))
    for analytic, numeric in gradcheck(layer, [x]):
        assert relative_error(analytic, numeric) < 1e-4


def test_block_gradient():
    layer = block()
    layer.wrapped_nmf.in_projection.bias.assign(np.full(4, 5.0))
    x = Tensor(np.random.default_rng(3).normal(size=(1, 4, 4, 4, 4)))
    for analytic, numeric in gradcheck(layer, [x]):
        assert relative_error(analytic, numeric) < 1e-4


def test_block_preserves_shape():
    x = Tensor(np.random.default_rng(4).normal(size=(2, 4, 4, 4, 4)))
    assert block()(x).shape == x.shape


def test_short_circuited_block_is_identity():
    layer = block()
    layer.short_circuited = True
    layer.mlp_enabled = False
    x = Tensor(np.random.default_rng(5).normal(size=(1, 4, 4, 4, 4)))
    assert np.array_equal(layer(x).numpy(), x.numpy())


def test_zero_mlp_carries_the_residual():
    layer = block()
    layer.mlp.fc2.weight.assign(np.zeros((4, 8)))
    x = Tensor(np.random.default_rng(6).normal(size=(1, 4, 4, 4, 4)))
    with_mlp = layer(x).numpy()
    layer.mlp_enabled = False
    assert np.array_equal(with_mlp, layer(x).numpy())


def test_nmf_subblock_toggle_changes_output():
    layer = block()
    x = Tensor(np.random.default_rng(7).normal(size=(1, 4, 4, 4, 4)))
    full = layer(x).numpy()
    layer.nmf_enabled = False
    assert not np.allclose(full, layer(x).numpy())


def test_shifted_windows_smooth_patch_boundaries():
    # Two channels, constant inside each 2-voxel slab along H, with a jump between H=1 and H=2
    x = np.empty((1, 2, 4, 4, 4))
    x[0, :, :2] = np.array([1.0, 3.0])[:, None, None, None]
    x[0, :, 2:] = np.array([3.0, 1.0])[:, None, None, None]
    local = MatricizeConfig(mode=MatricizeMode.LOCAL, head_dim=2, patch=2)
    shifted = MatricizeConfig(mode=MatricizeMode.SW, head_dim=2, patch=2)

    def jump(cfg):
        out = wrapped(2, cfg, identity=True)(Tensor(x)).numpy()
        return np.abs(out[:, :, 2] - out[:, :, 1]).max()

    assert jump(shifted) <= jump(local)
    assert jump(local) == pytest.approx(2.0, rel=1e-6)


def test_positional_embedding():
    rng = np.random.default_rng(8)
    embedding = PositionalEmbedding(4, (2, 2, 2), rng, dtype=np.float64)
    x = Tensor(rng.normal(size=(3, 4, 2, 2, 2)))
    embedding.embedding.assign(np.zeros((4, 2, 2, 2)))
    assert np.array_equal(embedding(x).numpy(), x.numpy())

    embedding.embedding.assign(rng.normal(size=(4, 2, 2, 2)))
    embedding(x).sum().backward()
    np.testing.assert_array_equal(embedding.embedding.grad, np.full((4, 2, 2, 2), 3.0))

    embedding.enabled = False
    assert embedding(x) is x


def test_positional_embedding_extent_mismatch():
    pe = Tensor(np.zeros((4, 2, 2, 2)))
    with pytest.raises(ConfigurationError):
        add_positional_embedding(Tensor(np.zeros((1, 4, 4, 4, 4))), pe)


def test_component_maps_after_capture():
    layer = wrapped(4, SHIFTED)
    assert layer.component_maps() is None
    layer.nmf.capture = True
    layer(Tensor(np.random.default_rng(9).normal(size=(1, 4, 4, 4, 4))))
    assert layer.component_maps().shape == (1, 1, 4, 4, 4)
