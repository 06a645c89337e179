import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from drmpg.distortion import DistortionFn
from drmpg.estimators import (TERMS_COLUMNS, cdf_grad_onpolicy, grad_offpolicy, grad_onpolicy,
                              grad_reinforce)
from drmpg.mdp import EpisodeBatch, SoftmaxPolicy, rollout_batch, tight_return_bound
from drmpg.oracle import bound_constants_for, exact_grad

from conftest import ALL_G, CHAIN_GAMMA, TABLE_G

IDENTITY = DistortionFn.identity()


def make_batch(returns, scores, psi=None):
    returns = np.asarray(returns, dtype=float)
    scores = np.asarray(scores, dtype=float).reshape(returns.size, -1)
    m = returns.size
    psi = np.ones(m) if psi is None else np.asarray(psi, dtype=float)
    return EpisodeBatch(np.zeros((m, 1), dtype=np.int64), np.zeros((m, 1), dtype=np.int64),
                        np.zeros((m, 1)), returns, np.ones(m, dtype=np.int64),
                        np.zeros((m, 0, 0)), scores, psi)


def permuted(batch, perm):
    return EpisodeBatch(*(getattr(batch, f)[perm] for f in
                          ("states", "actions", "rewards", "returns", "lengths", "counts",
                           "score_sums", "is_ratios")))


def integral_oracle(batch, g, M_r):
    """-int g'(1 - H(x)) grad H(x) dx evaluated segment by segment at midpoints.

    H is the (clipped) importance-weighted EDF. Nothing is sorted with
    scores attached; each segment recomputes H and grad H from scratch. On the
    top segment the estimator uses g'(0) whatever the total weight, so the
    level there is pinned to 1.
    """
    R, psi, L = batch.returns, batch.is_ratios, batch.score_sums
    m = R.size
    knots = np.unique(np.append(R, M_r))
    total = np.zeros(L.shape[1])
    for lo, hi in zip(knots[:-1], knots[1:]):
        x = 0.5 * (lo + hi)
        below = (R <= x).astype(float)
        H = 1.0 if lo == R.max() else min(1.0, float(below @ psi) / m)
        dH = (below * psi) @ L / m
        total -= (hi - lo) * float(g.deriv(1.0 - H)) * dH
    return total


def batch_strategy(min_m=1, max_m=12, d=3, weights=False):
    @st.composite
    def build(draw):
        m = draw(st.integers(min_m, max_m))
        # a coarse grid makes ties common
        R = draw(arrays(float, m, elements=st.integers(-8, 8).map(lambda k: k / 4)))
        L = draw(arrays(float, (m, d), elements=st.floats(-3, 3, allow_nan=False)))
        psi = None
        if weights:
            psi = draw(arrays(float, m, elements=st.floats(0, 3, allow_nan=False)))
        return make_batch(R, L, psi)
    return build()


def chain_batches(chain, n, rng, m_max=64):
    out = []
    for _ in range(n):
        pol = SoftmaxPolicy(rng.normal(size=(3, 2)))
        out.append(rollout_batch(chain, pol, int(rng.integers(1, m_max + 1)), CHAIN_GAMMA, rng))
    return out


# -- closed-form reductions --------------------------------------------------


@settings(max_examples=200, deadline=None)
@given(batch_strategy(), st.floats(2.0, 10.0))
def test_identity_reduces_to_baseline_reinforce(batch, M_r):
    got = grad_onpolicy(batch, IDENTITY, M_r).grad
    want = (batch.returns - M_r) @ batch.score_sums / len(batch)
    scale = M_r * max(1.0, np.abs(batch.score_sums).sum())
    assert np.linalg.norm(got - want) <= 1e-10 * scale


@pytest.mark.parametrize("g", ALL_G, ids=str)
@settings(max_examples=60, deadline=None)
@given(batch=batch_strategy(weights=False))
def test_onpolicy_matches_integral_oracle(g, batch):
    got = grad_onpolicy(batch, g, 2.5).grad
    want = integral_oracle(batch, g, 2.5)
    assert np.allclose(got, want, rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("g", ALL_G, ids=str)
@settings(max_examples=60, deadline=None)
@given(batch=batch_strategy(weights=True))
def test_offpolicy_matches_integral_oracle(g, batch):
    got = grad_offpolicy(batch, g, 2.5).grad
    want = integral_oracle(batch, g, 2.5)
    assert np.allclose(got, want, rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("g", ALL_G, ids=str)
def test_single_episode(g):
    L = np.array([[0.5, -1.0, 2.0]])
    rep = grad_onpolicy(make_batch([1.5], L), g, 4.0)
    np.testing.assert_allclose(rep.grad, (1.5 - 4.0) * g.right_deriv_zero() * L[0], rtol=1e-15)
    off = grad_offpolicy(make_batch([1.5], L, [0.7]), g, 4.0)
    np.testing.assert_allclose(off.grad, (1.5 - 4.0) * g.right_deriv_zero() * 0.7 * L[0],
                               rtol=1e-15)


@pytest.mark.parametrize("g", ALL_G, ids=str)
def test_equal_returns_leave_only_boundary_term(g, rng):
    L = rng.normal(size=(7, 4))
    rep = grad_onpolicy(make_batch(np.full(7, -0.75), L), g, 3.0)
    np.testing.assert_allclose(rep.grad, (-0.75 - 3.0) * g.right_deriv_zero() * L.mean(axis=0),
                               rtol=1e-13)


def test_two_episode_offpolicy_by_hand():
    """psi = (2, 0): the zero-weight episode drops out and the clip engages."""
    g = DistortionFn("dualpower", 3)
    l1, l2 = np.array([1.0, -2.0]), np.array([4.0, 0.5])
    M_r = 5.0
    # episode with psi=2 has the lower return: level after it is min(1, 2/2) = 1
    # grad = 1/2 [(R1-R2) g'(0) 2 l1 + (R2-M_r) g'(0) 2 l1] = g'(0) (R1 - M_r) l1
    rep = grad_offpolicy(make_batch([-1.0, 2.0], [l1, l2], [2.0, 0.0]), g, M_r)
    np.testing.assert_allclose(rep.grad, g.deriv(0.0) * (-1.0 - M_r) * l1, rtol=1e-14)
    assert rep.terms["cdf_level"][0] == 1.0
    # psi = (3, 0): unclipped level would be 1.5; clipped to 1, score weights keep 3
    rep3 = grad_offpolicy(make_batch([-1.0, 2.0], [l1, l2], [3.0, 0.0]), g, M_r)
    np.testing.assert_allclose(rep3.grad, 1.5 * g.deriv(0.0) * (-1.0 - M_r) * l1, rtol=1e-14)
    # psi=2 episode on top: level after the zero-weight one is 0, so g'(1) multiplies 0
    rep_hi = grad_offpolicy(make_batch([2.0, -1.0], [l1, l2], [2.0, 0.0]), g, M_r)
    np.testing.assert_allclose(rep_hi.grad, g.deriv(0.0) * (2.0 - M_r) * l1, rtol=1e-14)


def test_onpolicy_hand_example():
    # m=3, Identity-free check with Quadratic r=0.5: g'(s) = 1.5 - s
    g = DistortionFn("quadratic", 0.5)
    R = np.array([2.0, -1.0, 0.5])
    L = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    M_r = 3.0
    # sorted: (-1, e2), (0.5, e3), (2, e1)
    want = ((-1.0 - 0.5) * (1.5 - (1 - 1 / 3)) * L[1]
            + (0.5 - 2.0) * (1.5 - (1 - 2 / 3)) * (L[1] + L[2])
            + (2.0 - M_r) * 1.5 * L.sum(axis=0)) / 3
    np.testing.assert_allclose(grad_onpolicy(make_batch(R, L), g, M_r).grad, want, rtol=1e-14)


# -- structural properties ---------------------------------------------------


def test_on_off_agree_when_behavior_is_target(chain, rng):
    for batch in chain_batches(chain, 100, rng):
        pol_g = TABLE_G[int(rng.integers(len(TABLE_G)))]
        on = grad_onpolicy(batch, pol_g, 10.0).grad
        off = grad_offpolicy(batch, pol_g, 10.0).grad
        assert np.linalg.norm(on - off) <= 1e-12 * max(1.0, np.linalg.norm(on))


@pytest.mark.parametrize("g", ALL_G, ids=str)
@settings(max_examples=60, deadline=None)
@given(batch=batch_strategy(min_m=2, weights=True), seed=st.integers(0, 2**32 - 1))
def test_permutation_invariance(g, batch, seed):
    perm = np.random.default_rng(seed).permutation(len(batch))
    a = grad_offpolicy(batch, g, 2.5).grad
    b = grad_offpolicy(permuted(batch, perm), g, 2.5).grad
    assert np.linalg.norm(a - b) <= 1e-12 * max(1.0, np.linalg.norm(a))


def test_episode_list_input_matches_batch(chain, rng):
    batch = rollout_batch(chain, SoftmaxPolicy.zeros(3, 2), 20, CHAIN_GAMMA, rng)
    g = DistortionFn("exponential", 1.0)
    np.testing.assert_array_equal(grad_onpolicy(list(batch), g, 10.0).grad,
                                  grad_onpolicy(batch, g, 10.0).grad)


@pytest.mark.parametrize("g", ALL_G, ids=str)
def test_norm_below_almost_sure_ceiling(chain, chain_atlas, g, rng):
    behavior = SoftmaxPolicy(rng.normal(size=(3, 2)))
    target = SoftmaxPolicy(rng.normal(size=(3, 2)))
    on_c = bound_constants_for(chain, g, CHAIN_GAMMA)
    off_c = bound_constants_for(chain, g, CHAIN_GAMMA, behavior, target, chain_atlas)
    for _ in range(50):
        on = rollout_batch(chain, target, 16, CHAIN_GAMMA, rng)
        assert grad_onpolicy(on, g, on_c.M_r).norm <= on_c.grad_ceiling()
        off = rollout_batch(chain, behavior, 16, CHAIN_GAMMA, rng, target=target)
        assert grad_offpolicy(off, g, off_c.M_r).norm <= off_c.grad_ceiling()


def test_identity_estimator_is_unbiased(chain, chain_atlas):
    pol = SoftmaxPolicy(np.array([[0.0, 0.0], [0.4, -0.3], [-0.5, 0.8]]))
    M_r = tight_return_bound(chain, CHAIN_GAMMA)
    rng = np.random.default_rng(7)
    draws = np.array([grad_onpolicy(rollout_batch(chain, pol, 8, CHAIN_GAMMA, rng),
                                    IDENTITY, M_r).grad for _ in range(4000)])
    want = exact_grad(chain_atlas, pol, IDENTITY, M_r)
    se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws)) + 1e-12
    assert np.all(np.abs(draws.mean(axis=0) - want) <= 4.5 * se)


@pytest.mark.slow
def test_bias_shrinks_with_batch_size(chain, chain_atlas):
    g = DistortionFn("logarithmic", 1.0)
    pol = SoftmaxPolicy(np.array([[0.0, 0.0], [0.4, -0.3], [-0.5, 0.8]]))
    M_r = tight_return_bound(chain, CHAIN_GAMMA)
    want = exact_grad(chain_atlas, pol, g, M_r)
    bias = {}
    for m in (32, 512):
        rng = np.random.default_rng(m)
        draws = [grad_onpolicy(rollout_batch(chain, pol, m, CHAIN_GAMMA, rng), g, M_r).grad
                 for _ in range(200)]
        bias[m] = np.linalg.norm(np.mean(draws, axis=0) - want)
    assert bias[512] < bias[32]


def test_reinforce_formula(rng):
    R = rng.normal(size=5)
    L = rng.normal(size=(5, 3))
    np.testing.assert_allclose(grad_reinforce(make_batch(R, L)), R @ L / 5, rtol=1e-15)


# -- cdf_grad_onpolicy -------------------------------------------------------


def test_cdf_grad_examples():
    L = np.array([[1.0, 2.0], [-3.0, 5.0]])
    batch = make_batch([0.0, 1.0], L)
    np.testing.assert_array_equal(cdf_grad_onpolicy(batch, -0.5), np.zeros(2))
    np.testing.assert_allclose(cdf_grad_onpolicy(batch, 2.0), L.mean(axis=0))
    np.testing.assert_allclose(cdf_grad_onpolicy(batch, 0.5), 0.5 * L[0])


# -- errors and audit output -------------------------------------------------


def test_rejects_bad_inputs():
    batch = make_batch([1.0, 2.0], [[1.0], [2.0]])
    with pytest.raises(ValueError, match="exceeds"):
        grad_onpolicy(batch, IDENTITY, 1.5)
    with pytest.raises(ValueError):
        grad_onpolicy(batch, IDENTITY, 0.0)
    with pytest.raises(ValueError, match="ratio"):
        grad_onpolicy(make_batch([1.0], [[1.0]], [0.5]), IDENTITY, 2.0)
    with pytest.raises(ValueError):
        grad_offpolicy(make_batch([1.0], [[1.0]], [-0.5]), IDENTITY, 2.0)
    with pytest.raises(ValueError):
        grad_offpolicy(make_batch([1.0], [[1.0]], [np.inf]), IDENTITY, 2.0)
    with pytest.raises(ValueError):
        grad_onpolicy([], IDENTITY, 2.0)
    with pytest.raises(ValueError):
        grad_reinforce([])


def test_report_csv(tmp_path, chain, rng):
    batch = rollout_batch(chain, SoftmaxPolicy.zeros(3, 2), 9, CHAIN_GAMMA, rng)
    rep = grad_onpolicy(batch, DistortionFn("squareroot", 1.0), 10.0)
    path = tmp_path / "terms.csv"
    rep.to_csv(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == TERMS_COLUMNS
    assert len(rows) == 10
    rets = [float(r[2]) for r in rows[1:]]
    assert rets == sorted(rets)
    assert sorted(int(r[1]) for r in rows[1:]) == list(range(9))
    assert float(rows[-1][3]) == pytest.approx(rets[-1] - 10.0)
