import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssrl import policy as pn
from ssrl.replay import BatchSample


def _batch(rng, n, in_dim, out_dim, head):
    obs = rng.normal(size=(n, in_dim))
    if head == pn.CATEGORICAL:
        return BatchSample(obs, rng.integers(0, out_dim, size=n))
    return BatchSample(obs, rng.uniform(-1, 1, size=(n, out_dim)))


def _loss_fn(params, batch, entropy_coef=0.0):
    def f(theta):
        p = pn.PolicyParams(theta, params.sizes, params.head)
        return pn.loss_and_grad(p, batch, entropy_coef)
    return f


@pytest.mark.parametrize("head", [pn.CATEGORICAL, pn.GAUSSIAN])
def test_gradients_match_finite_differences(head):
    rng = np.random.default_rng(0)
    for _ in range(5):
        params = pn.init_params(5, 3, head, rng, hidden=8)
        batch = _batch(rng, 7, 5, 3, head)
        assert pn.grad_check(_loss_fn(params, batch), params.flat) < 1e-5


def test_entropy_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    params = pn.init_params(4, 5, pn.CATEGORICAL, rng, hidden=8)
    batch = _batch(rng, 9, 4, 5, pn.CATEGORICAL)
    assert pn.grad_check(_loss_fn(params, batch, 0.01), params.flat) < 1e-5


def test_grad_check_detects_a_wrong_gradient():
    def bad(theta):
        return float(np.sum(theta ** 2)), 3.0 * theta
    assert pn.grad_check(bad, np.ones(4)) > 0.3


def test_discrete_loss_is_mean_negative_log_likelihood():
    rng = np.random.default_rng(2)
    params = pn.init_params(3, 4, pn.CATEGORICAL, rng, hidden=6)
    batch = _batch(rng, 10, 3, 4, pn.CATEGORICAL)
    logits = pn.forward(params, batch.observations)
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    expected = -np.mean(np.log(p[np.arange(10), batch.actions]))
    assert pn.discrete_loss_and_grad(params, batch)[0] == pytest.approx(expected, rel=1e-12)


def test_continuous_loss_averages_over_batch_and_dims():
    rng = np.random.default_rng(3)
    params = pn.init_params(3, 2, pn.GAUSSIAN, rng, hidden=6)
    batch = _batch(rng, 5, 3, 2, pn.GAUSSIAN)
    mean = pn.forward(params, batch.observations)
    expected = np.sum((mean - batch.actions) ** 2) / 10
    assert pn.continuous_loss_and_grad(params, batch)[0] == pytest.approx(expected, rel=1e-12)


def test_forward_single_and_batched_agree():
    rng = np.random.default_rng(4)
    params = pn.init_params(6, 2, pn.CATEGORICAL, rng)
    x = rng.normal(size=(3, 6))
    np.testing.assert_allclose(pn.forward(params, x)[1], pn.forward(params, x[1]))


def test_shape_errors():
    rng = np.random.default_rng(5)
    params = pn.init_params(4, 2, pn.CATEGORICAL, rng)
    with pytest.raises(pn.ShapeError):
        pn.forward(params, np.zeros(5))
    with pytest.raises(pn.ShapeError):
        pn.discrete_loss_and_grad(params, BatchSample(np.zeros((2, 4)), np.array([0, 2])))
    with pytest.raises(pn.ShapeError):
        pn.PolicyParams(np.zeros(3), (4, 64, 64, 2), pn.CATEGORICAL)


def test_sampling_frequencies_match_softmax():
    logits = np.array([1.0, 0.0, -1.0, 2.0])
    rng = np.random.default_rng(6)
    n = 40000
    counts = np.bincount([pn.sample_action(logits, pn.CATEGORICAL, rng) for _ in range(n)], minlength=4)
    np.testing.assert_allclose(counts / n, pn.softmax(logits), atol=0.01)


def test_gaussian_sample_clipped_and_centred():
    rng = np.random.default_rng(7)
    draws = np.array([pn.sample_action(np.array([0.2, 0.9]), pn.GAUSSIAN, rng, sigma=0.3) for _ in range(20000)])
    assert draws.min() >= -1.0 and draws.max() <= 1.0
    assert draws[:, 0].mean() == pytest.approx(0.2, abs=0.01)
    assert draws[:, 0].std() == pytest.approx(0.3, abs=0.01)


def test_non_finite_logits_rejected():
    with pytest.raises(pn.NumericError):
        pn.sample_action(np.array([np.nan, 0.0]), pn.CATEGORICAL, np.random.default_rng(0))


def test_adam_first_step_moves_by_learning_rate():
    params = pn.PolicyParams(np.zeros(pn.n_params((1, 1, 1, 1))), (1, 1, 1, 1), pn.GAUSSIAN)
    grad = np.array([1.0, -2.0, 0.5, 0.0, 3.0, -1.0])
    state = pn.AdamState.zeros(6, lr=0.01)
    new, state2 = pn.adam_step(params, grad, state)
    expected = -0.01 * grad / (np.abs(grad) + 1e-8)
    np.testing.assert_allclose(new.flat, expected, atol=1e-9)
    assert state2.t == 1 and state.t == 0
    np.testing.assert_array_equal(params.flat, 0.0)


def test_adam_matches_reference_over_several_steps():
    rng = np.random.default_rng(8)
    theta = rng.normal(size=6)
    params = pn.PolicyParams(theta.copy(), (1, 1, 1, 1), pn.GAUSSIAN)
    state = pn.AdamState.zeros(6, lr=1e-3)
    m = np.zeros(6)
    v = np.zeros(6)
    for t in range(1, 6):
        g = rng.normal(size=6)
        params, state = pn.adam_step(params, g, state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta = theta - 1e-3 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(params.flat, theta, rtol=1e-12)


def test_adam_rejects_non_finite_gradient():
    params = pn.PolicyParams(np.zeros(6), (1, 1, 1, 1), pn.GAUSSIAN)
    with pytest.raises(pn.NumericError):
        pn.adam_step(params, np.array([np.inf, 0, 0, 0, 0, 0]), pn.AdamState.zeros(6))


def test_supervised_updates_fit_a_fixed_batch():
    rng = np.random.default_rng(9)
    params = pn.init_params(4, 3, pn.CATEGORICAL, rng)
    obs = np.eye(4)[rng.integers(0, 4, size=64)]
    actions = obs.argmax(axis=1) % 3
    batch = BatchSample(obs, actions)
    state = pn.AdamState.zeros(params.flat.size, 1e-2)
    for _ in range(300):
        _, g = pn.loss_and_grad(params, batch)
        params, state = pn.adam_step(params, g, state)
    assert np.all(pn.forward(params, obs).argmax(axis=1) == actions)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(10)
    params = pn.init_params(7, 2, pn.GAUSSIAN, rng)
    path = tmp_path / "p.bin"
    pn.save_params(params, path)
    back = pn.load_params(path)
    assert back.sizes == params.sizes and back.head == params.head
    np.testing.assert_array_equal(back.flat, params.flat)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2 ** 31))
def test_softmax_is_a_distribution(in_dim, out_dim, seed):
    rng = np.random.default_rng(seed)
    params = pn.init_params(in_dim, out_dim, pn.CATEGORICAL, rng, hidden=5)
    p = pn.softmax(pn.forward(params, rng.normal(size=(3, in_dim)) * 100))
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0)
    np.testing.assert_allclose(pn.log_softmax(np.log(p + 1e-300)), np.log(p + 1e-300), atol=1e-9)
