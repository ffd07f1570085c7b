import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ddstn import autodiff as ad
from ddstn.exceptions import ContractError, DimensionError
from oracles import conv2d_loops, conv_batch_loops, gradient_check, matmul_loops

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_matmul_identity():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ad.matmul(np.eye(2), a).value, a)


def test_matmul_hand_dot():
    assert ad.matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]])).value.tolist() == [[11.0]]


def test_matmul_matches_loops(rng):
    a, b = rng.normal(size=(5, 4)), rng.normal(size=(4, 3))
    np.testing.assert_allclose(ad.matmul(a, b).value, matmul_loops(a, b), rtol=0, atol=1e-12)


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_relu_and_mean():
    assert ad.relu(np.array([-1.0, 0.0, 2.0])).value.tolist() == [0.0, 0.0, 2.0]
    assert ad.mean(np.array([2.0, 4.0])).item() == 3.0


def test_sum_square_matches_loop(rng):
    x = rng.normal(size=(4, 6))
    expected = 0.0
    for v in x.ravel():
        expected += v * v
    assert abs(ad.sum(ad.square(x)).item() - expected) <= 1e-12


def test_elementwise_shape_error():
    with pytest.raises(DimensionError):
        ad.add(np.ones(3), np.ones(4))
    with pytest.raises(DimensionError):
        ad.mul(np.ones((2, 2)), np.ones(2))


def test_scalar_broadcast_gradient():
    g = ad.Graph()
    x, c = g.leaf([1.0, 2.0, 3.0]), g.leaf(2.0)
    gx, gc = ad.backward(ad.sum(ad.mul(x, c)), [x, c])
    assert gx.tolist() == [2.0, 2.0, 2.0]
    assert gc.item() == 6.0


def test_conv_identity_kernel(rng):
    x = rng.normal(size=(5, 4))
    assert np.array_equal(ad.conv2d_valid(x, np.array([[1.0]])).value, x)


def test_conv_hand_window_sums():
    x = np.arange(1.0, 10.0).reshape(3, 3)
    assert ad.conv2d_valid(x, np.ones((2, 2))).value.tolist() == [[12.0, 16.0], [24.0, 28.0]]


def test_conv_matches_loops(rng):
    x, k = rng.normal(size=(9, 9)), rng.normal(size=(3, 3))
    np.testing.assert_allclose(ad.conv2d_valid(x, k).value, conv2d_loops(x, k), rtol=0, atol=1e-12)


def test_conv_batch_matches_loops(rng):
    x, k, b = rng.normal(size=(2, 3, 6, 5)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
    np.testing.assert_allclose(
        ad.conv2d_valid(x, k, b).value, conv_batch_loops(x, k, b), rtol=0, atol=1e-12
    )


def test_conv_kernel_too_large():
    with pytest.raises(DimensionError):
        ad.conv2d_valid(np.ones((2, 2)), np.ones((3, 3)))


def test_backward_sum_gives_ones():
    g = ad.Graph()
    x = g.leaf(np.arange(5.0))
    (gx,) = ad.backward(ad.sum(x), [x])
    assert gx.tolist() == [1.0] * 5


def test_backward_square_at_three():
    g = ad.Graph()
    x = g.leaf(3.0)
    (gx,) = ad.backward(ad.square(x), [x])
    assert gx.item() == 6.0


def test_backward_non_scalar_is_contract_error():
    g = ad.Graph()
    x = g.leaf(np.ones(3))
    with pytest.raises(ContractError):
        ad.backward(ad.relu(x))


def test_relu_subgradient_at_zero_is_zero():
    g = ad.Graph()
    x = g.leaf(np.array([0.0, 1.0, -1.0]))
    (gx,) = ad.backward(ad.sum(ad.relu(x)), [x])
    assert gx.tolist() == [0.0, 1.0, 0.0]
    g = ad.Graph()
    x = g.leaf(np.array([0.0]))
    (gx,) = ad.backward(ad.sum(ad.clamp_min0(x)), [x])
    assert gx.tolist() == [0.0]


def test_unreached_leaf_gets_zero_gradient():
    g = ad.Graph()
    x, y = g.leaf(np.ones(2)), g.leaf(np.ones(3))
    _, gy = ad.backward(ad.sum(x), [x, y])
    assert gy.tolist() == [0.0, 0.0, 0.0]


def test_leaf_rejects_non_finite():
    with pytest.raises(ContractError):
        ad.Graph().leaf([1.0, np.nan])


def test_mixing_graphs_is_rejected():
    a, b = ad.Graph().leaf(1.0), ad.Graph().leaf(2.0)
    with pytest.raises(ContractError):
        ad.add(a, b)


def test_node_ids_follow_parents():
    g = ad.Graph()
    x = g.leaf(np.ones((2, 2)))
    y = ad.sum(ad.relu(ad.matmul(x, x)))
    for node in g.nodes:
        assert all(p < node.id for p in node.parents)
    assert y.id == len(g) - 1


@pytest.mark.parametrize(
    "build, shapes",
    [
        (lambda g, L: ad.sum(ad.square(ad.matmul(L[0], L[1]))), [(3, 4), (4, 2)]),
        (lambda g, L: ad.mean(ad.exp(ad.scale(L[0], 0.3))), [(3, 3)]),
        (lambda g, L: ad.sum(ad.sqrt(ad.add(ad.square(L[0]), 1.0))), [(5,)]),
        (lambda g, L: ad.sum(ad.mul(ad.concat([L[0], L[1]]), ad.concat([L[1], L[0]]))), [(2, 3), (2, 3)]),
        (lambda g, L: ad.sum(ad.square(ad.rows(ad.transpose(L[0]), 1, 3))), [(2, 4)]),
        (lambda g, L: ad.sum(ad.mean(ad.square(ad.reshape(L[0], (3, 2))), axis=0)), [(6,)]),
        (lambda g, L: ad.sum(ad.square(ad.conv2d_valid(L[0], L[1]))), [(6, 5), (3, 3)]),
        (lambda g, L: ad.sum(ad.square(ad.conv2d_valid(L[0], L[1], L[2]))), [(2, 2, 5, 5), (3, 2, 2, 2), (3,)]),
        (lambda g, L: ad.sum(ad.square(ad.maxpool2(L[0]))), [(2, 5, 4)]),
        (lambda g, L: ad.sum(ad.square(ad.sub(L[0], ad.mean(L[0])))), [(4,)]),
    ],
)
def test_gradients_match_finite_differences(build, shapes, rng):
    for _ in range(3):
        arrays = [rng.normal(size=s) for s in shapes]
        assert gradient_check(build, arrays) <= 1e-6


@given(
    arrays(np.float64, (3, 4), elements=finite),
    st.floats(-3, 3, allow_nan=False),
    st.floats(-3, 3, allow_nan=False),
)
def test_backward_is_linear(x, a, b):
    def grads(fn):
        g = ad.Graph()
        leaf = g.leaf(x)
        return ad.backward(fn(leaf), [leaf])[0]

    f = lambda t: ad.sum(ad.square(t))
    h = lambda t: ad.mean(ad.relu(t))
    combo = grads(lambda t: ad.add(ad.scale(f(t), a), ad.scale(h(t), b)))
    np.testing.assert_allclose(combo, a * grads(f) + b * grads(h), rtol=0, atol=1e-10)


@given(arrays(np.float64, (4, 3), elements=finite))
def test_finite_outputs_on_finite_inputs(x):
    g = ad.Graph()
    t = g.leaf(x)
    out = ad.mean(ad.exp(ad.scale(ad.relu(ad.matmul(t, ad.transpose(t))), -0.01)))
    (gx,) = ad.backward(out, [t])
    assert np.isfinite(out.item()) and np.all(np.isfinite(gx))


def test_rerun_is_bit_identical(rng):
    x, w = rng.normal(size=(6, 4)), rng.normal(size=(4, 3))

    def run():
        g = ad.Graph()
        W = g.leaf(w)
        loss = ad.mean(ad.relu(ad.matmul(g.constant(x), W)))
        return loss.item(), ad.backward(loss, [W])[0]

    (v1, g1), (v2, g2) = run(), run()
    assert v1 == v2 and np.array_equal(g1, g2)


def test_backward_twice_on_same_graph_is_identical(rng):
    g = ad.Graph()
    W = g.leaf(rng.normal(size=(3, 3)))
    loss = ad.sum(ad.square(ad.matmul(W, W)))
    first = ad.backward(loss, [W])[0].copy()
    assert np.array_equal(first, ad.backward(loss, [W])[0])
