import numpy as np
import pytest

from hiernas.network import edge_list, n_edges, reduction_indices
from hiernas.operators import OperatorKind as K, space
from hiernas.supernet import (
    ArchitectureParams,
    SingleEdgeNet,
    Supernet,
    capture_feature_maps,
    mixed_edge_forward,
)
from hiernas.tensor import Tensor
from hiernas import functional as F
from hiernas.nn import Identity


def test_reduction_positions():
    assert reduction_indices(3) == [1, 2]
    assert reduction_indices(8) == [2, 5]
    assert reduction_indices(20) == [6, 13]


def test_edge_counting():
    assert n_edges(4) == 14
    assert edge_list(2) == [(0, 2), (1, 2), (0, 3), (1, 3), (2, 3)]


def test_supernet_forward_shape_and_params():
    arch = ArchitectureParams.uniform(space("S1").kinds, 2)
    net = Supernet(3, 4, 2, arch, 2, rng=0)
    out = net(Tensor(np.zeros((2, 3, 16, 16), np.float32)))
    assert out.shape == (2, 2)
    assert arch.num_parameters() == 2 * 5 * 8


def test_uniform_alpha_at_init():
    arch = ArchitectureParams.uniform([K.SepConv3, K.SkipConnect, K.Zero], 2)
    for a in arch.alpha_numpy("normal"):
        np.testing.assert_allclose(a, 1 / 3)


def test_mixed_edge_is_weighted_sum():
    x = Tensor(np.arange(4.0).reshape(1, 1, 2, 2))
    alpha = F.softmax(Tensor(np.array([0.0, np.log(3.0)])))
    out = mixed_edge_forward(x, [Identity(), Identity()], alpha)
    np.testing.assert_allclose(out.data, x.data, rtol=1e-6)


def test_beta_grad_zero_when_candidates_identical():
    x = Tensor(np.random.default_rng(0).standard_normal((1, 1, 2, 2)))
    beta = Tensor(np.zeros(3), requires_grad=True)
    out = mixed_edge_forward(x, [Identity()] * 3, F.softmax(beta))
    F.dot(out, Tensor(np.ones(out.shape))).backward()
    np.testing.assert_allclose(beta.grad, 0, atol=1e-6)


def test_ragged_rows_per_edge():
    rows = [[K.Zero, K.SepConv3, K.SepConv5], [K.Zero, K.SkipConnect]] + [[K.Zero, K.MaxPool3]] * 3
    arch = ArchitectureParams({"normal": rows, "reduce": rows})
    net = Supernet(3, 4, 2, arch, 2, rng=0)
    assert [len(e.ops) for e in net.cells[0].edges] == [3, 2, 2, 2, 2]
    assert net(Tensor(np.zeros((2, 3, 16, 16), np.float32))).shape == (2, 2)


def test_wrong_row_count_rejected():
    arch = ArchitectureParams({"normal": [[K.Zero, K.SepConv3]] * 4, "reduce": [[K.Zero, K.SepConv3]] * 4})
    with pytest.raises(ValueError, match="candidate rows"):
        Supernet(3, 4, 2, arch, 2)


def test_input_too_small():
    arch = ArchitectureParams.uniform(space("S5").kinds, 2)
    net = Supernet(3, 4, 2, arch, 2)
    with pytest.raises(ValueError, match="too small"):
        net(Tensor(np.zeros((1, 3, 8, 8), np.float32)))


def test_capture_excludes_zero_and_skip(tmp_path):
    net = SingleEdgeNet([K.SepConv3, K.MaxPool3, K.SkipConnect, K.Zero], channels=4, rng=0)
    images = np.random.default_rng(0).standard_normal((5, 3, 8, 8)).astype(np.float32)
    maps = capture_feature_maps(net, images, batch_size=2, out_dir=str(tmp_path))
    assert set(maps) == {K.SepConv3, K.MaxPool3}
    assert maps[K.SepConv3].shape == (5, 4 * 8 * 8)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["MaxPool3.ht1", "SepConv3.ht1"]


def test_capture_unknown_edge():
    arch = ArchitectureParams.uniform(space("S5").kinds, 2)
    with pytest.raises(ValueError, match="unknown edge"):
        capture_feature_maps(Supernet(3, 4, 2, arch, 2), np.zeros((1, 3, 16, 16), np.float32), 0, 99)
