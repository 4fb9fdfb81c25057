import numpy as np
import pytest

from lspc import nn
from lspc.critics import make_critics
from lspc.data import Batch
from lspc.errors import UsageError
from lspc.policy import (PolicyBundle, act_cvae, act_lspc_o, act_lspc_s,
                         action_scan, cost_awr_weight, cvae_loss, decode_mean,
                         draw_restricted_latent, encoder_loss, make_bundle,
                         policy_fn, reward_awr_weight)

from conftest import const_net


@pytest.fixture
def toy(rng):
    cs = make_critics(2, 2, width=8, dtype=np.float64, rng=rng,
                      action_low=[-1, -1], action_high=[1, 1])
    bundle = make_bundle(2, 2, d_z=2, width=8, action_low=[-1, -1],
                         action_high=[1, 1], dtype=np.float64, rng=rng)
    batch = Batch(indices=np.arange(5),
                  states=rng.uniform(-0.5, 0.5, (5, 2)),
                  actions=rng.uniform(-0.5, 0.5, (5, 2)),
                  rewards=rng.uniform(-1, 1, 5), costs=rng.uniform(0, 1, 5),
                  next_states=rng.uniform(-0.5, 0.5, (5, 2)),
                  dones=np.zeros(5))
    noise = rng.standard_normal((5, 2))
    return cs, bundle, batch, noise


# -- AWR weights -------------------------------------------------------------------


def test_cost_weight_identity_at_zero_temperature(rng):
    a_c = rng.standard_normal(100) * 10
    np.testing.assert_array_equal(cost_awr_weight(a_c, 0.0, 200.0), np.ones(100))


def test_cost_weight_clips_at_w_max():
    a_c = -np.log(200.0) / 2.0  # exactly the clip threshold at temperature 2
    assert cost_awr_weight(a_c, 2.0, 200.0) == pytest.approx(200.0)
    assert cost_awr_weight(a_c * 2, 2.0, 200.0) == pytest.approx(200.0)


def test_cost_weight_zeroing_rule():
    w = cost_awr_weight(np.array([0.0]), 2.0, 200.0, q_c=np.array([0.05]),
                        v_c=np.array([0.0]), c_zero_thresh=0.02)
    assert w[0] == 0.0
    w2 = cost_awr_weight(np.array([0.0]), 2.0, 200.0, q_c=np.array([0.0]),
                         v_c=np.array([0.0]), c_zero_thresh=0.02)
    assert w2[0] == 1.0


def test_weight_range_property(rng):
    a = rng.standard_normal(1000) * 50
    for w in (cost_awr_weight(a, 2.0, 200.0), reward_awr_weight(a, 2.0, 200.0)):
        assert np.all(w >= 0) and np.all(w <= 200.0)


# -- cvae loss -------------------------------------------------------------------------


def test_cvae_loss_zero_when_weights_zero(toy):
    cs, bundle, batch, noise = toy
    bundle.c_zero_thresh = -1.0  # every Vc/Qc exceeds it: all weights zero
    loss, g_enc, g_dec, mean_w = cvae_loss(bundle, cs, batch, noise)
    assert loss == 0.0 and mean_w == 0.0
    assert g_enc.max_abs() == 0.0 and g_dec.max_abs() == 0.0


def test_cvae_loss_reduces_to_plain_elbo_at_zero_temperature(toy):
    cs, bundle, batch, noise = toy
    bundle.cost_temp = 0.0
    loss, _, _, mean_w = cvae_loss(bundle, cs, batch, noise)
    assert mean_w == 1.0
    # negative ELBO recomputed by hand with the same latent draw
    a_norm = bundle.normalize_actions(batch.actions)
    enc = bundle.cvae_enc.forward(np.concatenate([batch.states, a_norm], axis=1))
    z = enc.mean + np.exp(enc.log_std) * noise
    dec = bundle.cvae_dec.forward(np.concatenate([batch.states, z], axis=1))
    recon = nn.gaussian_log_prob(dec, a_norm)
    kl = nn.kl_to_standard_normal(enc)
    expected = float(np.mean(-(recon - bundle.kl_coef * kl)))
    assert loss == expected  # bit-for-bit


def test_cvae_loss_rejects_bad_noise_shape(toy):
    cs, bundle, batch, _ = toy
    with pytest.raises(UsageError):
        cvae_loss(bundle, cs, batch, np.zeros((5, 3)))


# -- encoder loss -----------------------------------------------------------------------


def test_encoder_loss_unit_weights_at_zero_temperature(toy):
    cs, bundle, batch, noise = toy
    bundle.reward_temp = 0.0
    loss, _, mean_w = encoder_loss(bundle, cs, batch, noise)
    assert mean_w == 1.0
    lat = bundle.lat_enc.forward(batch.states)
    z = bundle.epsilon * np.tanh(lat.mean + np.exp(lat.log_std) * noise)
    dec = bundle.cvae_dec.forward(np.concatenate([batch.states, z], axis=1))
    expected = float(np.mean(-nn.gaussian_log_prob(dec, bundle.normalize_actions(batch.actions))))
    assert loss == pytest.approx(expected, abs=1e-12)


def test_encoder_step_leaves_decoder_bitwise(toy):
    cs, bundle, batch, noise = toy
    before = {name: arr.copy() for net in (bundle.cvae_dec, bundle.cvae_enc)
              for name, arr in net.tensors()}
    loss, g_lat, _ = encoder_loss(bundle, cs, batch, noise)
    state = nn.AdamState(bundle.lat_enc)
    nn.adam_step(state, bundle.lat_enc, g_lat, lr=1e-3)
    after = {name: arr for net in (bundle.cvae_dec, bundle.cvae_enc)
             for name, arr in net.tensors()}
    for name in before:
        np.testing.assert_array_equal(before[name], after[name])


# -- action selection ---------------------------------------------------------------------


def test_restricted_latent_stays_in_box(rng):
    bundle = make_bundle(2, 2, d_z=4, width=8, epsilon=0.25,
                         action_low=[-1, -1], action_high=[1, 1], rng=rng)
    z = draw_restricted_latent(bundle, 5000, rng)
    assert np.max(np.abs(z)) <= 0.25
    bundle.latent_sampler = "truncated"
    zt = draw_restricted_latent(bundle, 5000, rng)
    assert np.max(np.abs(zt)) < 0.25   # open box, no face atoms
    assert np.mean(np.abs(zt) == 0.25) == 0.0
    assert np.mean(np.abs(z) == 0.25) > 0.5  # the clip sampler does pile up


def test_act_lspc_s_tiny_epsilon_is_prior_mode(rng):
    bundle = make_bundle(2, 2, d_z=2, width=8, epsilon=1e-12,
                         action_low=[-1, -1], action_high=[1, 1],
                         dtype=np.float64, rng=rng)
    s = np.array([0.1, -0.2])
    a = act_lspc_s(bundle, s, rng)
    a0 = decode_mean(bundle, s[None, :], np.zeros((1, 2)))[0]
    np.testing.assert_allclose(a, a0, atol=1e-10)


def test_act_lspc_o_zero_raw_output_matches_prior_mode(rng):
    bundle = make_bundle(2, 2, d_z=2, width=8, epsilon=0.25,
                         action_low=[-1, -1], action_high=[1, 1],
                         dtype=np.float64, rng=rng)
    # zero-weight latent encoder: raw mean head is exactly zero
    bundle.lat_enc = const_net([2, 4, 4], 0.0, head="gaussian")
    s = np.array([0.3, 0.3])
    np.testing.assert_allclose(
        act_lspc_o(bundle, s), decode_mean(bundle, s[None, :], np.zeros((1, 2)))[0],
        atol=1e-12)


def test_act_lspc_o_tanh_asymptote(rng):
    bundle = make_bundle(2, 2, d_z=2, width=8, epsilon=0.25,
                         action_low=[-1, -1], action_high=[1, 1],
                         dtype=np.float64, rng=rng)
    lat = const_net([2, 4, 4], 0.0, head="gaussian")
    lat.biases[-1] = np.array([6.0, -6.0, 0.0, 0.0])
    bundle.lat_enc = lat
    g = bundle.lat_enc.forward(np.array([0.0, 0.0]))
    z = bundle.epsilon * np.tanh(g.mean)
    assert z[0] < 0.25 and z[0] == pytest.approx(0.25, abs=1e-4)
    assert z[1] > -0.25 and z[1] == pytest.approx(-0.25, abs=1e-4)


def test_actions_respect_action_box(rng):
    bundle = make_bundle(2, 2, d_z=2, width=8, epsilon=0.25,
                         action_low=[-0.2, -0.2], action_high=[0.2, 0.2], rng=rng)
    states = rng.uniform(-1, 1, (50, 2))
    for a in (act_cvae(bundle, states, rng), act_lspc_s(bundle, states, rng),
              act_lspc_o(bundle, states)):
        assert np.all(a >= -0.2) and np.all(a <= 0.2)


def test_act_cvae_deterministic_per_seed(rng):
    bundle = make_bundle(2, 2, d_z=2, width=8, action_low=[-1, -1],
                         action_high=[1, 1], rng=rng)
    s = np.array([0.2, 0.2])
    a1 = act_cvae(bundle, s, np.random.default_rng(3))
    a2 = act_cvae(bundle, s, np.random.default_rng(3))
    np.testing.assert_array_equal(a1, a2)


def test_lspc_s_with_infinite_epsilon_equals_cvae(rng):
    bundle = make_bundle(2, 2, d_z=2, width=8, epsilon=np.inf,
                         action_low=[-1, -1], action_high=[1, 1], rng=rng)
    s = np.array([0.0, 0.5])
    a1 = act_lspc_s(bundle, s, np.random.default_rng(8))
    a2 = act_cvae(bundle, s, np.random.default_rng(8))
    np.testing.assert_array_equal(a1, a2)


def test_latent_restriction_images_nested(rng):
    # eps * tanh images are nested intervals, so reachable latents grow with eps
    raw = rng.standard_normal(1000) * 3
    images = {eps: eps * np.tanh(raw) for eps in (0.1, 0.25, 0.6, 1.0)}
    for lo, hi in ((0.1, 0.25), (0.25, 0.6), (0.6, 1.0)):
        # smaller image fits strictly inside the larger restriction box...
        assert np.max(np.abs(images[lo])) < hi
        # ...and the larger image genuinely escapes the smaller box
        assert np.max(np.abs(images[hi])) > lo


def test_lspc_s_actions_lie_in_decoder_image_of_box(rng):
    bundle = make_bundle(2, 2, d_z=2, width=8, epsilon=0.25,
                         action_low=[-1, -1], action_high=[1, 1],
                         dtype=np.float64, rng=rng)
    s = np.array([0.1, 0.1])
    sampled = act_lspc_s(bundle, np.repeat(s[None, :], 10000, axis=0), rng)
    grid_1d = np.linspace(-0.25, 0.25, 101)
    gz = np.stack(np.meshgrid(grid_1d, grid_1d), axis=-1).reshape(-1, 2)
    grid_actions = decode_mean(bundle, np.repeat(s[None, :], gz.shape[0], axis=0), gz)
    # every sampled action sits within a grid-spacing Lipschitz ball of the image
    d2 = ((sampled[:, None, :] - grid_actions[None, :, :]) ** 2).sum(axis=2)
    assert np.sqrt(d2.min(axis=1)).max() < 0.02


def test_policy_fn_dispatch(rng):
    bundle = make_bundle(2, 2, d_z=2, width=8, action_low=[-1, -1],
                         action_high=[1, 1], rng=rng)
    s = np.zeros(2)
    for pid in ("cvae", "lspc-s", "lspc-o"):
        a = policy_fn(bundle, pid)(s, rng)
        assert a.shape == (2,)
    with pytest.raises(UsageError):
        policy_fn(bundle, "nope")


# -- action scan -------------------------------------------------------------------------


def test_action_scan_row_count(toy, rng):
    cs, bundle, _, _ = toy
    rows = action_scan(bundle, cs, np.zeros(2), 7, rng)
    assert len(rows) == 2 * 7 + 1
    assert sum(1 for r in rows if r["source"] == "lspc_o") == 1
    rows0 = action_scan(bundle, cs, np.zeros(2), 0, rng)
    assert len(rows0) == 1 and rows0[0]["source"] == "lspc_o"


def test_action_scan_rows_have_finite_q(toy, rng):
    cs, bundle, _, _ = toy
    rows = action_scan(bundle, cs, np.zeros(2), 3, rng)
    for r in rows:
        assert np.isfinite(r["q"]) and np.isfinite(r["ax"]) and np.isfinite(r["ay"])


# -- construction validation -----------------------------------------------------------------


def test_bundle_rejects_bad_hyperparameters(rng):
    with pytest.raises(UsageError):
        make_bundle(2, 2, d_z=2, epsilon=0.0, rng=rng)
    with pytest.raises(UsageError):
        make_bundle(2, 2, d_z=2, latent_sampler="magic", rng=rng)
    with pytest.raises(UsageError):
        make_bundle(2, 2, d_z=2, w_max=0.0, rng=rng)
