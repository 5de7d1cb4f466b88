import numpy as np
import pytest

from hiernas.operators import SPACES, OperatorKind as K, SearchSpace, build, kind, param_count, space
from hiernas.tensor import Tensor


@pytest.mark.parametrize("k", [k for k in K])
@pytest.mark.parametrize("stride", [1, 2])
def test_output_shapes(k, stride):
    op = build(k, 4, stride, rng=0)
    out = op(Tensor(np.random.default_rng(0).standard_normal((2, 4, 8, 8))))
    assert out.shape == (2, 4, 8 // stride, 8 // stride)


def test_zero_outputs_zeros():
    out = build(K.Zero, 3, 2)(Tensor(np.ones((1, 3, 5, 5))))
    assert out.shape == (1, 3, 3, 3) and not out.data.any()


def test_skip_is_identity_at_stride_1():
    x = np.random.default_rng(0).standard_normal((1, 2, 4, 4)).astype(np.float32)
    np.testing.assert_array_equal(build(K.SkipConnect, 2, 1)(Tensor(x)).data, x)


def test_param_counts_by_hand():
    c = 4
    assert param_count(build(K.MaxPool3, c)) == 0
    assert param_count(build(K.SkipConnect, c)) == 0
    # sep conv: twice (depthwise k*k*C + pointwise C*C + BN 2C)
    assert param_count(build(K.SepConv3, c)) == 2 * (9 * c + c * c + 2 * c)
    # dil conv: once
    assert param_count(build(K.DilConv5, c)) == 25 * c + c * c + 2 * c


def test_kernel_sizes():
    assert K.SepConv7.kernel_size == 7
    assert K.SkipConnect.kernel_size == 0
    assert K.MaxPool5.is_pool and not K.MaxPool5.parametric


def test_spaces_contain_zero_and_listed_members():
    assert [k.value for k in space("S5").kinds] == ["SepConv3", "SkipConnect", "Zero"]
    assert len(space("S1")) == 8
    for sp in SPACES.values():
        assert K.Zero in sp.kinds


def test_unknown_space_lists_valid_ids():
    with pytest.raises(ValueError, match="S1, S2, S3, S4, S5"):
        space("S9")


def test_unknown_operator_lists_valid_tags():
    with pytest.raises(ValueError, match="SepConv3"):
        kind("Conv9")


def test_space_requires_zero():
    with pytest.raises(ValueError, match="Zero"):
        SearchSpace.custom("X", ["SepConv3"])


def test_invalid_stride():
    with pytest.raises(ValueError):
        build(K.SepConv3, 4, 3)
