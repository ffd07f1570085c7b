import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ddstn import autodiff as ad
from ddstn.exceptions import ConfigError, ContractError, DataError
from ddstn.losses import (
    Hyperparams, coral_loss, coupled_lupi_loss, ddstn_objective, hinge_loss, kernel_bank,
    median_heuristic_gamma, mmd2_linear, mmd2_rbf, svmplus_paired_loss,
)
from ddstn.networks import build_network, forward, vector_backbone
from oracles import coral_oracle, gradient_check, linear_kernel_mmd2, rbf_mmd2

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)
labels_st = st.sampled_from([-1.0, 1.0])


def feats(n, d=3):
    return arrays(np.float64, (n, d), elements=finite)


# hinge


def test_hinge_examples():
    assert hinge_loss(np.array([2.0]), np.array([1.0])).item() == 0.0
    assert hinge_loss(np.array([0.0]), np.array([1.0])).item() == 1.0
    assert hinge_loss(np.array([0.5, 0.5]), np.array([1.0, -1.0])).item() == 1.0


def test_hinge_errors():
    with pytest.raises(ContractError):
        hinge_loss(np.zeros(0), np.zeros(0))
    with pytest.raises(DataError):
        hinge_loss(np.zeros(2), np.array([1.0, 0.0]))


@given(st.lists(st.tuples(finite, labels_st), min_size=1, max_size=12), st.randoms())
def test_hinge_permutation_invariant(pairs, rnd):
    s, y = map(np.array, zip(*pairs))
    perm = list(range(len(s)))
    rnd.shuffle(perm)
    a = hinge_loss(s, y).item()
    b = hinge_loss(s[perm], y[perm]).item()
    assert abs(a - b) <= 1e-12


@given(st.lists(st.tuples(finite, labels_st), min_size=1, max_size=8), st.integers(0, 7), st.floats(0, 3))
def test_hinge_monotone_in_margin(pairs, i, delta):
    s, y = map(np.array, zip(*pairs))
    i %= len(s)
    s2 = s.copy()
    s2[i] += delta * y[i]
    assert hinge_loss(s2, y).item() <= hinge_loss(s, y).item()


# svm+


def test_svmplus_examples():
    one = np.array([1.0])
    assert svmplus_paired_loss(np.array([2.0]), np.array([0.0]), one).item() == 0.0
    assert svmplus_paired_loss(np.array([0.0]), np.array([1.0]), one).item() == 1.0
    assert svmplus_paired_loss(np.array([0.0]), np.array([-1.0]), one).item() == 1.0


def test_svmplus_length_mismatch():
    with pytest.raises(ContractError):
        svmplus_paired_loss(np.zeros(3), np.zeros(2), np.ones(3))


@given(st.lists(st.tuples(finite, labels_st), min_size=1, max_size=12))
def test_svmplus_zero_slack_is_hinge(pairs):
    s, y = map(np.array, zip(*pairs))
    assert svmplus_paired_loss(s, np.zeros_like(s), y).item() == hinge_loss(s, y).item()


def test_symmetric_coupling_is_swap_invariant(rng):
    t, s = rng.normal(size=6), rng.normal(size=6)
    y = np.sign(rng.normal(size=6))
    g = ad.Graph()
    a = coupled_lupi_loss(g.leaf(t), g.leaf(s), y, 1.0).item()
    b = coupled_lupi_loss(g.leaf(s), g.leaf(t), y, 1.0).item()
    assert a == b


# mmd


def test_mmd_linear_examples():
    assert mmd2_linear(np.array([[1.0, 0.0]]), np.array([[2.0, 1.0]])).item() == 2.0
    x = np.random.default_rng(0).normal(size=(5, 3))
    assert mmd2_linear(x, x).item() == 0.0


def test_mmd_rbf_hand_value():
    v = mmd2_rbf(np.array([[0.0]]), np.array([[2.0]]), [0.25]).item()
    assert abs(v - (2 - 2 * math.exp(-1))) <= 1e-12
    assert abs(v - 1.2642411) <= 1e-7


def test_mmd_rbf_rejects_bad_bandwidth():
    with pytest.raises(ConfigError):
        mmd2_rbf(np.ones((2, 2)), np.ones((2, 2)), [0.0])
    with pytest.raises(ConfigError):
        mmd2_rbf(np.ones((2, 2)), np.ones((2, 2)), [])


def test_mmd_dimension_mismatch():
    with pytest.raises(ContractError):
        mmd2_linear(np.ones((2, 3)), np.ones((2, 4)))


@given(feats(4), feats(3), st.lists(st.floats(0.01, 2), min_size=1, max_size=3))
def test_mmd_rbf_matches_kernel_sums(fs, ft, bw):
    assert abs(mmd2_rbf(fs, ft, bw).item() - rbf_mmd2(fs, ft, bw)) <= 1e-10


@given(feats(4), feats(5))
def test_mmd_linear_matches_linear_kernel(fs, ft):
    assert abs(mmd2_linear(fs, ft).item() - linear_kernel_mmd2(fs, ft)) <= 1e-10 * max(1, abs(linear_kernel_mmd2(fs, ft)))


@given(feats(4), feats(3))
def test_mmd_symmetric_and_nonnegative(fs, ft):
    for fn in (mmd2_linear, lambda a, b: mmd2_rbf(a, b, [0.3, 1.0])):
        ab, ba = fn(fs, ft).item(), fn(ft, fs).item()
        assert abs(ab - ba) <= 1e-12 * max(1, abs(ab))
        assert ab >= -1e-12


@given(feats(5))
def test_mmd_self_is_exactly_zero(x):
    assert mmd2_linear(x, x).item() == 0.0
    assert mmd2_rbf(x, x, [0.5, 2.0]).item() == 0.0


def test_median_heuristic_and_bank():
    x = np.array([[0.0], [1.0], [3.0]])
    # pairwise distances 1, 2, 3 -> median 2
    assert median_heuristic_gamma(x) == 1 / 8
    assert median_heuristic_gamma(np.zeros((3, 2))) == 1.0
    assert kernel_bank(1.0) == (0.25, 0.5, 1.0, 2.0, 4.0)


# coral


def test_coral_examples():
    fs = np.array([[-1.0], [1.0]]) / math.sqrt(2)  # sample variance 1
    ft = np.array([[-2.0], [2.0]]) / math.sqrt(2)  # sample variance 4
    assert abs(coral_loss(fs, ft).item() - 2.25) <= 1e-12
    assert coral_loss(fs, fs).item() == 0.0


def test_coral_needs_two_samples():
    with pytest.raises(ContractError):
        coral_loss(np.ones((1, 2)), np.ones((3, 2)))


@given(feats(4), feats(6))
def test_coral_matches_covariance_oracle(fs, ft):
    assert abs(coral_loss(fs, ft).item() - coral_oracle(fs, ft)) <= 1e-10


# hyperparams


@pytest.mark.parametrize(
    "kw", [{"C1": -1}, {"lambda2": -0.1}, {"lupi_penalty": 0}, {"mmd_kernel": "cosine"}, {"bandwidths": ()}]
)
def test_hyperparams_validation(kw):
    with pytest.raises(ConfigError):
        Hyperparams(**kw)


def test_hyperparams_round_trip():
    hp = Hyperparams(C1=0.3, mmd_kernel="rbf", bandwidths=(0.5, 1.0))
    assert Hyperparams.from_dict(hp.to_dict()) == hp


# combined objective


def _nets(seed=0, d=4):
    spec = vector_backbone(5, 3)
    return build_network(spec, (d,), seed), build_network(spec, (d,), seed + 1)


def _batches(rng, d=4, n_p=5, n_u=6):
    paired = (rng.normal(size=(n_p, d)), rng.normal(size=(n_p, d)), np.sign(rng.normal(size=n_p)))
    unpaired = (rng.normal(size=(n_u, d)), np.sign(rng.normal(size=n_u)))
    return paired, unpaired, rng.normal(size=(8, d))


def test_objective_degenerate_weights(rng):
    src, tgt = _nets()
    paired, unpaired, pool = _batches(rng)
    hp = Hyperparams(C1=0, lambda1=0, lambda2=0, C2=0.7)
    value = ddstn_objective(src, tgt, paired, unpaired, pool, hp).item()
    scores = forward(tgt, unpaired[0])["scores"]
    expected = 0.5 * np.sum(tgt.W**2) + 0.7 * hinge_loss(scores, unpaired[1]).item()
    assert abs(value - expected) <= 1e-12


def test_objective_zero_networks(rng):
    src, tgt = _nets()
    src = src.with_flat([np.zeros_like(a) for a in src.flat()])
    tgt = tgt.with_flat([np.zeros_like(a) for a in tgt.flat()])
    paired, unpaired, pool = _batches(rng)
    hp = Hyperparams(C1=1.0, C2=1.0, lambda1=1.0, lambda2=1.0)
    assert ddstn_objective(src, tgt, paired, unpaired, pool, hp).item() == 2.0
    hp = Hyperparams(C1=0.4, C2=2.5, lambda1=1.0, lambda2=1.0)
    assert abs(ddstn_objective(src, tgt, paired, unpaired, pool, hp).item() - 2.9) <= 1e-15


@pytest.mark.parametrize("kernel", ["linear", "rbf"])
def test_objective_is_sum_of_components(rng, kernel):
    src, tgt = _nets(3)
    paired, unpaired, pool = _batches(rng)
    hp = Hyperparams(C1=0.6, C2=1.3, lambda1=0.8, lambda2=0.9, mmd_kernel=kernel, bandwidths=(0.7,))
    value = ddstn_objective(src, tgt, paired, unpaired, pool, hp).item()
    xs, xt, y = paired
    st_p, ss_p = forward(tgt, xt)["scores"], forward(src, xs)["scores"]
    lupi = 0.5 * (svmplus_paired_loss(st_p, ss_p, y).item() + svmplus_paired_loss(ss_p, st_p, y).item())
    hinge = hinge_loss(forward(tgt, unpaired[0])["scores"], unpaired[1]).item()
    fp, fu = forward(src, pool)["features"], forward(tgt, unpaired[0])["features"]
    mmd = mmd2_linear(fp, fu).item() if kernel == "linear" else mmd2_rbf(fp, fu, (0.7,)).item()
    reg = 0.5 * (np.sum(tgt.W**2) + 0.8 * np.sum(src.W**2))
    assert abs(value - (reg + 0.6 * lupi + 1.3 * hinge + 0.9 * mmd)) <= 1e-12


def test_objective_ignores_unpaired_when_unweighted(rng):
    src, tgt = _nets()
    paired, unpaired, pool = _batches(rng)
    _, unpaired2, _ = _batches(np.random.default_rng(99))
    hp = Hyperparams(C2=0.0, lambda2=0.0)
    a = ddstn_objective(src, tgt, paired, unpaired, pool, hp).item()
    b = ddstn_objective(src, tgt, paired, unpaired2, pool, hp).item()
    assert a == b


def test_include_paired_target_changes_pools(rng):
    src, tgt = _nets()
    paired, unpaired, pool = _batches(rng)
    a = ddstn_objective(src, tgt, paired, unpaired, pool, Hyperparams()).item()
    b = ddstn_objective(src, tgt, paired, unpaired, pool, Hyperparams(include_paired_target=True)).item()
    assert a != b


@pytest.mark.parametrize(
    "build, shapes",
    [
        (lambda g, L: hinge_loss(L[0], g.constant(np.array([1.0, -1.0, 1.0, -1.0, 1.0]))), [(5,)]),
        (lambda g, L: svmplus_paired_loss(L[0], L[1], g.constant(np.array([1.0, -1.0, 1.0, 1.0]))), [(4,), (4,)]),
        (lambda g, L: mmd2_linear(L[0], L[1]), [(4, 3), (5, 3)]),
        (lambda g, L: mmd2_rbf(L[0], L[1], [0.2, 1.0]), [(4, 3), (5, 3)]),
        (lambda g, L: coral_loss(L[0], L[1]), [(4, 3), (5, 3)]),
    ],
)
def test_loss_gradients(build, shapes, rng):
    for _ in range(3):
        arrays_ = [rng.normal(size=s) for s in shapes]
        assert gradient_check(build, arrays_) <= 1e-4
