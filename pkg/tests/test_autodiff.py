import numpy as np
import pytest

from hiernas import functional as F
from hiernas.tensor import Tensor, default_dtype, no_grad, topological_order

from gradcheck import CASES, TOL, run_cases


@pytest.mark.parametrize("name", sorted(CASES))
def test_finite_difference(name):
    assert run_cases(name, 8, seed=1) <= TOL


def test_scalar_backward_only():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        (x * 2.0).backward()


def test_leaf_grads_accumulate_across_backward_calls():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    F.sum(x * x).backward()
    F.sum(x * x).backward()
    np.testing.assert_allclose(x.grad, 4 * x.data)


def test_shared_subexpression_counts_twice():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = x * 2.0
    F.sum(F.add(y, y)).backward()
    np.testing.assert_allclose(x.grad, [4.0])


def test_topological_order_parents_first():
    a = Tensor(np.ones(2), requires_grad=True)
    b = a * 3.0
    c = F.add(b, a)
    order = topological_order(F.sum(c))
    assert order.index(a) < order.index(b) < order.index(c)


def test_deep_chain_no_recursion_limit():
    x = Tensor(np.ones(1), requires_grad=True)
    y = x
    for _ in range(5000):
        y = F.add_scalar(y, 1.0)
    F.sum(y).backward()
    assert x.grad[0] == 1.0


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad and y._parents == ()


def test_float32_default_and_float64_context():
    assert Tensor([1, 2]).dtype == np.float32
    with default_dtype(np.float64):
        assert Tensor([1, 2]).dtype == np.float64


def test_shape_mismatch_is_an_error():
    with pytest.raises(ValueError, match="shape mismatch"):
        F.add(Tensor(np.ones(2)), Tensor(np.ones(3)))


def test_conv_errors_name_dimensions():
    x = Tensor(np.ones((1, 3, 5, 5)))
    with pytest.raises(ValueError, match="C=3"):
        F.conv2d(x, Tensor(np.ones((4, 2, 3, 3))))
    with pytest.raises(ValueError, match="larger than padded input"):
        F.conv2d(x, Tensor(np.ones((4, 3, 7, 7))))


def test_cross_entropy_label_range():
    with pytest.raises(ValueError):
        F.cross_entropy(Tensor(np.zeros((2, 2))), np.array([0, 2]))


def test_cross_entropy_uniform_logits_is_log_k():
    loss = F.cross_entropy(Tensor(np.zeros((4, 5))), np.array([0, 1, 2, 3]))
    assert loss.item() == pytest.approx(np.log(5), rel=1e-6)


def test_batch_norm_training_needs_two_samples():
    with pytest.raises(ValueError, match="batch size"):
        F.batch_norm(Tensor(np.ones((1, 2, 2, 2))))


def test_conv_matches_direct_loop():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    with default_dtype(np.float64):
        out = F.conv2d(Tensor(x), Tensor(w), padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((1, 3, 5, 5))
    for f in range(3):
        for i in range(5):
            for j in range(5):
                ref[0, f, i, j] = np.sum(xp[0, :, i:i + 3, j:j + 3] * w[f])
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_avg_pool_counts_padding():
    x = Tensor(np.ones((1, 1, 3, 3)))
    out = F.pool2d(x, "avg", 3, 1, 1).data
    assert out[0, 0, 0, 0] == pytest.approx(4 / 9)
    assert out[0, 0, 1, 1] == pytest.approx(1.0)
