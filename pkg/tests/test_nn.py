import math

import numpy as np
import pytest

from lspc import nn
from lspc.errors import NumericError, UsageError

from conftest import const_net


# -- forward ------------------------------------------------------------------


def test_forward_identity_single_layer():
    net = nn.MlpNet([2, 2], dtype=np.float64)
    net.weights[0] = np.eye(2)
    out = net.forward(np.array([1.0, 2.0]))
    np.testing.assert_array_equal(out, [1.0, 2.0])


def test_forward_relu_kill_outputs_last_bias():
    net = nn.MlpNet([2, 3, 2], dtype=np.float64)
    net.weights[0] = -np.ones((2, 3))
    net.biases[0] = -np.ones(3)          # pre-activations strictly negative
    net.weights[1] = np.ones((3, 2))
    net.biases[1] = np.array([0.5, -0.25])
    out = net.forward(np.array([1.0, 2.0]))
    np.testing.assert_array_equal(out, [0.5, -0.25])


def test_forward_matches_straight_line_reimplementation(rng):
    net = nn.MlpNet([2, 16, 1], dtype=np.float64, rng=rng)
    x = rng.standard_normal(2)
    # independent re-evaluation with explicit loops
    h = x.copy()
    for k in range(net.n_layers):
        z = np.zeros(net.layer_sizes[k + 1])
        for j in range(z.size):
            acc = net.biases[k][j]
            for i in range(h.size):
                acc += h[i] * net.weights[k][i, j]
            z[j] = acc
        h = np.maximum(z, 0.0) if k < net.n_layers - 1 else z
    out = net.forward(x)
    np.testing.assert_allclose(out, h, rtol=0, atol=1e-12)


def test_forward_rejects_dim_mismatch():
    net = nn.MlpNet([3, 2])
    with pytest.raises(UsageError):
        net.forward(np.zeros(4))


def test_forward_batched_matches_loop(rng):
    net = nn.MlpNet([3, 8, 2], dtype=np.float64, rng=rng)
    xs = rng.standard_normal((5, 3))
    batched = net.forward(xs)
    for i in range(5):
        np.testing.assert_allclose(batched[i], net.forward(xs[i]), atol=1e-14)


def test_gaussian_head_bounds_log_std():
    net = nn.MlpNet([2, 4], head="gaussian", dtype=np.float64)
    net.biases[-1] = np.array([0.0, 0.0, 12.0, -12.0])
    g = net.forward(np.zeros(2))
    assert nn.LOG_STD_MIN <= g.log_std[1] <= g.log_std[0] <= nn.LOG_STD_MAX
    assert g.log_std[0] == pytest.approx(nn.LOG_STD_MAX, abs=1e-4)
    assert g.log_std[1] == pytest.approx(nn.LOG_STD_MIN, abs=1e-4)


def test_gaussian_head_log_std_always_in_range(rng):
    net = nn.MlpNet([2, 4, 8], head="gaussian", dtype=np.float64, rng=rng)
    g = net.forward(rng.standard_normal((100, 2)) * 5)
    assert np.all(g.log_std >= nn.LOG_STD_MIN)
    assert np.all(g.log_std <= nn.LOG_STD_MAX)


# -- backward -----------------------------------------------------------------


def test_backward_linear_layer_closed_form(rng):
    net = nn.MlpNet([3, 2], dtype=np.float64, rng=rng)
    x = rng.standard_normal(3)
    _, cache = net.forward_cached(x)
    grads, dx = net.backward(cache, np.ones(2))
    np.testing.assert_allclose(grads.d_biases[0], np.ones(2))
    np.testing.assert_allclose(grads.d_weights[0], np.outer(x, np.ones(2)))
    np.testing.assert_allclose(dx, net.weights[0] @ np.ones(2))


def test_backward_zero_upstream_zero_grads(rng):
    net = nn.MlpNet([2, 8, 3], dtype=np.float64, rng=rng)
    _, cache = net.forward_cached(rng.standard_normal(2))
    grads, dx = net.backward(cache, np.zeros(3))
    assert grads.max_abs() == 0.0
    np.testing.assert_array_equal(dx, np.zeros(2))


def test_backward_requires_matching_cache(rng):
    a = nn.MlpNet([2, 2], rng=rng)
    b = nn.MlpNet([2, 2], rng=rng)
    _, cache = a.forward_cached(np.zeros(2, dtype=np.float32))
    with pytest.raises(UsageError):
        b.backward(cache, np.zeros(2))


@pytest.mark.parametrize("head", ["linear", "gaussian"])
def test_backward_matches_finite_differences(head, rng):
    out_width = 4 if head == "gaussian" else 3
    net = nn.MlpNet([3, 8, out_width], head=head, dtype=np.float64, rng=rng)
    x = rng.standard_normal(3) * 0.5
    w_mean = rng.standard_normal(out_width // 2 if head == "gaussian" else out_width)
    w_ls = rng.standard_normal(2)

    def loss_fn():
        out, cache = net.forward_cached(x)
        if head == "gaussian":
            loss = float(w_mean @ out.mean + w_ls @ out.log_std)
            grads, _ = net.backward(cache, (w_mean, w_ls))
        else:
            loss = float(w_mean @ out)
            grads, _ = net.backward(cache, w_mean)
        return loss, {"net": grads}

    report = nn.grad_check(loss_fn, {"net": net}, name="weighted-output")
    assert report.max_rel_err < 1e-4, report


# -- adam -----------------------------------------------------------------------


def test_adam_zero_grads_leave_params(rng):
    net = nn.MlpNet([2, 4, 1], rng=rng)
    before = [w.copy() for w in net.weights]
    state = nn.AdamState(net)
    nn.adam_step(state, net, nn.GradientBuffer.zeros_like(net), lr=0.1)
    for w, b in zip(net.weights, before):
        np.testing.assert_array_equal(w, b)
    assert state.t == 1


def test_adam_first_step_moves_by_lr():
    net = nn.MlpNet([1, 1], dtype=np.float64)   # single weight at 0
    state = nn.AdamState(net)
    grads = nn.GradientBuffer.zeros_like(net)
    grads.d_weights[0][0, 0] = 1.0
    nn.adam_step(state, net, grads, lr=0.1)
    assert abs(net.weights[0][0, 0] + 0.1) < 1e-7


def test_adam_descends_quadratic():
    net = nn.MlpNet([1, 1], dtype=np.float64)
    net.weights[0][0, 0] = 1.0
    state = nn.AdamState(net)
    values = [1.0]
    for _ in range(100):
        grads = nn.GradientBuffer.zeros_like(net)
        grads.d_weights[0][0, 0] = 2.0 * net.weights[0][0, 0]
        nn.adam_step(state, net, grads, lr=3e-4)
        values.append(abs(float(net.weights[0][0, 0])))
    diffs = np.diff(values)
    assert np.all(diffs < 0)


def test_adam_aborts_on_nonfinite_gradient(rng):
    net = nn.MlpNet([2, 2], rng=rng)
    grads = nn.GradientBuffer.zeros_like(net)
    grads.d_weights[0][0, 0] = np.nan
    with pytest.raises(NumericError, match="L0.w"):
        nn.adam_step(nn.AdamState(net), net, grads, lr=0.1)


# -- expectile loss ---------------------------------------------------------------


@pytest.mark.parametrize("u,xi,expected", [
    (2.0, 0.7, 2.8),
    (-2.0, 0.7, 1.2),
    (1.5, 0.5, 1.125),
])
def test_expectile_loss_values(u, xi, expected):
    assert nn.expectile_loss(u, xi) == pytest.approx(expected, abs=1e-12)


def test_expectile_complementary_identity(rng):
    # weights xi and 1-xi split every u^2 exactly between the two losses
    u = rng.standard_normal(100) * 3
    for xi in (0.5, 0.7, 0.9, 0.99):
        lhs = nn.expectile_loss(u, xi) + nn.expectile_loss(u, 1.0 - xi)
        np.testing.assert_allclose(lhs, u * u, atol=1e-12)


def test_expectile_reflection_identity(rng):
    u = rng.standard_normal(100) * 3
    for xi in (0.6, 0.7, 0.9):
        np.testing.assert_allclose(nn.expectile_loss(-u, xi),
                                   nn.expectile_loss(u, 1.0 - xi), atol=1e-12)


def test_expectile_minimizer_matches_grid_search(rng):
    values = rng.standard_normal(400)
    for xi in (0.5, 0.7, 0.9):
        fitted = nn.expectile_of(values, xi)
        grid = np.arange(values.min(), values.max(), 1e-4)
        objective = nn.expectile_loss(values[None, :] - grid[:, None], xi).sum(axis=1)
        best = grid[int(np.argmin(objective))]
        assert abs(fitted - best) < 2e-4


# -- gaussian utilities -------------------------------------------------------------


def test_kl_zero_at_standard_normal():
    g = nn.DiagGaussian(np.zeros(1), np.zeros(1))
    assert nn.kl_to_standard_normal(g) == 0.0


def test_kl_unit_mean():
    g = nn.DiagGaussian(np.ones(1), np.zeros(1))
    assert nn.kl_to_standard_normal(g) == pytest.approx(0.5)


def test_kl_nonnegative_random(rng):
    for _ in range(200):
        g = nn.DiagGaussian(rng.standard_normal(4), rng.uniform(-2, 1, 4))
        assert nn.kl_to_standard_normal(g) >= 0.0


def test_kl_matches_monte_carlo(rng):
    g = nn.DiagGaussian(rng.standard_normal(8) * 0.7, rng.uniform(-1.0, 0.5, 8))
    n = 1_000_000
    x = g.mean + g.std * rng.standard_normal((n, 8))
    log_q = nn.gaussian_log_prob(g, x)
    log_p = nn.gaussian_log_prob(nn.DiagGaussian(np.zeros(8), np.zeros(8)), x)
    diffs = log_q - log_p
    estimate = diffs.mean()
    stderr = diffs.std() / math.sqrt(n)
    assert abs(estimate - nn.kl_to_standard_normal(g)) < 3 * stderr


def test_gaussian_sample_identities(rng):
    g = nn.DiagGaussian(rng.standard_normal(3), rng.uniform(-1, 1, 3))
    np.testing.assert_array_equal(nn.gaussian_sample(g, np.zeros(3)), g.mean)
    noise = rng.standard_normal(3)
    std_normal = nn.DiagGaussian(np.zeros(3), np.zeros(3))
    np.testing.assert_array_equal(nn.gaussian_sample(std_normal, noise), noise)


def test_gaussian_sample_grad_wrt_log_std(rng):
    mean = rng.standard_normal(3)
    log_std = rng.uniform(-1, 1, 3)
    noise = rng.standard_normal(3)
    h = 1e-5
    for i in range(3):
        ls_p, ls_m = log_std.copy(), log_std.copy()
        ls_p[i] += h
        ls_m[i] -= h
        fd = (nn.gaussian_sample(nn.DiagGaussian(mean, ls_p), noise)[i]
              - nn.gaussian_sample(nn.DiagGaussian(mean, ls_m), noise)[i]) / (2 * h)
        analytic = np.exp(log_std[i]) * noise[i]
        assert abs(fd - analytic) < 1e-6


def test_gaussian_log_prob_values():
    g = nn.DiagGaussian(np.array([0.3]), np.array([0.0]))
    assert nn.gaussian_log_prob(g, np.array([0.3])) == pytest.approx(-0.9189385, abs=1e-6)
    g0 = nn.DiagGaussian(np.array([0.0]), np.array([0.0]))
    assert nn.gaussian_log_prob(g0, np.array([1.0])) == pytest.approx(-1.4189385, abs=1e-6)


def test_gaussian_log_prob_factorizes(rng):
    mean = rng.standard_normal(4)
    log_std = rng.uniform(-1, 1, 4)
    x = rng.standard_normal(4)
    total = nn.gaussian_log_prob(nn.DiagGaussian(mean, log_std), x)
    parts = sum(
        float(nn.gaussian_log_prob(
            nn.DiagGaussian(mean[i:i + 1], log_std[i:i + 1]), x[i:i + 1]))
        for i in range(4))
    assert total == pytest.approx(parts, abs=1e-12)


# -- soft update -------------------------------------------------------------------


def test_soft_update_tau_one_copies_bitwise(rng):
    target = nn.MlpNet([2, 4, 1], rng=rng)
    online = nn.MlpNet([2, 4, 1], rng=rng)
    nn.soft_update(target, online, 1.0)
    for (_, t), (_, o) in zip(target.tensors(), online.tensors()):
        np.testing.assert_array_equal(t, o)


def test_soft_update_tau_zero_is_identity(rng):
    target = nn.MlpNet([2, 4, 1], rng=rng)
    online = nn.MlpNet([2, 4, 1], rng=rng)
    before = [t.copy() for _, t in target.tensors()]
    nn.soft_update(target, online, 0.0)
    for (_, t), b in zip(target.tensors(), before):
        np.testing.assert_array_equal(t, b)


def test_soft_update_midpoint():
    target = const_net([1, 1], 0.0)
    online = const_net([1, 1], 2.0)
    nn.soft_update(target, online, 0.5)
    assert target.biases[-1][0] == pytest.approx(1.0)


def test_soft_update_rejects_mismatched_architecture(rng):
    with pytest.raises(UsageError):
        nn.soft_update(nn.MlpNet([2, 4, 1], rng=rng), nn.MlpNet([2, 5, 1], rng=rng), 0.5)


# -- grad_check engine ----------------------------------------------------------------


def test_grad_check_zero_loss_reports_zero(rng):
    net = nn.MlpNet([2, 4, 1], dtype=np.float64, rng=rng)

    def loss_fn():
        return 0.0, {"net": nn.GradientBuffer.zeros_like(net)}

    report = nn.grad_check(loss_fn, {"net": net}, name="zero")
    assert report.max_rel_err == 0.0


def test_grad_check_rejects_float32(rng):
    net = nn.MlpNet([2, 2], dtype=np.float32, rng=rng)
    with pytest.raises(UsageError):
        nn.grad_check(lambda: (0.0, {}), {"net": net})


def test_grad_check_flags_wrong_gradient(rng):
    net = nn.MlpNet([2, 2], dtype=np.float64, rng=rng)
    x = rng.standard_normal(2)

    def loss_fn():
        out, cache = net.forward_cached(x)
        grads, _ = net.backward(cache, np.ones(2))
        grads.scale_(2.0)  # deliberately wrong
        return float(out.sum()), {"net": grads}

    report = nn.grad_check(loss_fn, {"net": net}, name="broken")
    assert report.max_rel_err > 0.1


# -- determinism -----------------------------------------------------------------------


def test_initialization_deterministic_per_seed():
    a = nn.MlpNet([3, 16, 2], rng=np.random.default_rng(42))
    b = nn.MlpNet([3, 16, 2], rng=np.random.default_rng(42))
    for (_, ta), (_, tb) in zip(a.tensors(), b.tensors()):
        np.testing.assert_array_equal(ta, tb)
