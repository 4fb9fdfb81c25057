"""Latent-restricted CVAE policies.

A CVAE (encoder over state-action pairs, decoder from state and latent back
to actions) is fit with a cost-advantage-weighted ELBO so that low-cost
behavior dominates the latent space near the prior mode. Action selection
then comes in three flavors:

* cvae: decode an unrestricted standard-normal latent (behavior clone),
* lspc_s: decode a latent clipped into the [-eps, eps] box (conservative),
* lspc_o: decode eps * tanh(latent encoder output), trained with
  reward-advantage weights through the frozen decoder (optimized).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import NumericError, UsageError
from . import nn
from .critics import CriticSet, advantages, cost_values
from .data import Batch

LATENT_SAMPLERS = ("clip", "truncated")


@dataclass
class PolicyBundle:
    cvae_enc: nn.MlpNet     # (s || a) -> Gaussian over z
    cvae_dec: nn.MlpNet     # (s || z) -> Gaussian over a
    lat_enc: nn.MlpNet      # s -> Gaussian over z
    d_z: int
    epsilon: float          # latent restriction radius
    cost_temp: float        # inverse temperature for the cost AWR weight
    reward_temp: float      # inverse temperature for the reward AWR weight
    kl_coef: float
    w_max: float
    action_low: np.ndarray
    action_high: np.ndarray
    c_zero_thresh: float | None = None
    latent_sampler: str = "clip"

    def __post_init__(self):
        if self.epsilon <= 0:
            raise UsageError("epsilon must be positive")
        if self.w_max <= 0:
            raise UsageError("w_max must be positive")
        if self.latent_sampler not in LATENT_SAMPLERS:
            raise UsageError(f"unknown latent sampler {self.latent_sampler!r}")
        for net, d in ((self.cvae_enc, self.d_z), (self.lat_enc, self.d_z),
                       (self.cvae_dec, None)):
            if net.head != "gaussian":
                raise UsageError("policy nets need gaussian heads")
            if d is not None and net.out_dim != d:
                raise UsageError("latent dimension mismatch across policy nets")

    def policy_nets(self):
        return {"cvae_enc": self.cvae_enc, "cvae_dec": self.cvae_dec,
                "lat_enc": self.lat_enc}

    # encoder/decoder work on actions normalized to the unit box
    def normalize_actions(self, actions: np.ndarray) -> np.ndarray:
        mid = 0.5 * (self.action_high + self.action_low)
        half = 0.5 * (self.action_high - self.action_low)
        return (np.asarray(actions) - mid) / half

    def denormalize_actions(self, actions: np.ndarray) -> np.ndarray:
        mid = 0.5 * (self.action_high + self.action_low)
        half = 0.5 * (self.action_high - self.action_low)
        return mid + np.asarray(actions) * half


def make_bundle(state_dim: int, action_dim: int, d_z: int, width: int = 64,
                depth: int = 2, epsilon: float = 0.25, cost_temp: float = 2.0,
                reward_temp: float = 2.0, kl_coef: float = 0.5, w_max: float = 200.0,
                action_low=None, action_high=None, c_zero_thresh: float | None = None,
                latent_sampler: str = "clip", dtype=np.float32,
                rng: np.random.Generator | None = None) -> PolicyBundle:
    hidden = [width] * depth
    enc = nn.MlpNet([state_dim + action_dim] + hidden + [2 * d_z],
                    head="gaussian", dtype=dtype, rng=rng)
    dec = nn.MlpNet([state_dim + d_z] + hidden + [2 * action_dim],
                    head="gaussian", dtype=dtype, rng=rng)
    lat = nn.MlpNet([state_dim] + hidden + [2 * d_z],
                    head="gaussian", dtype=dtype, rng=rng)
    low = np.asarray(action_low if action_low is not None else [-1.0] * action_dim)
    high = np.asarray(action_high if action_high is not None else [1.0] * action_dim)
    return PolicyBundle(cvae_enc=enc, cvae_dec=dec, lat_enc=lat, d_z=d_z,
                        epsilon=epsilon, cost_temp=cost_temp, reward_temp=reward_temp,
                        kl_coef=kl_coef, w_max=w_max, action_low=low, action_high=high,
                        c_zero_thresh=c_zero_thresh, latent_sampler=latent_sampler)


# -- AWR weights ---------------------------------------------------------------


def cost_awr_weight(a_c, cost_temp: float, w_max: float, q_c=None, v_c=None,
                    c_zero_thresh: float | None = None):
    """exp(-cost_temp * cost_advantage) clipped at w_max.

    With a threshold set, transitions whose Qc or Vc exceeds it get weight 0.
    """
    a_c = np.asarray(a_c)
    log_w = np.minimum(-cost_temp * a_c, math.log(w_max))
    w = np.exp(log_w)
    if c_zero_thresh is not None:
        if q_c is None or v_c is None:
            raise UsageError("c_zero_thresh needs the cost value pair")
        w = np.where((np.asarray(q_c) > c_zero_thresh) | (np.asarray(v_c) > c_zero_thresh),
                     0.0, w)
    return w


def reward_awr_weight(a_r, reward_temp: float, w_max: float):
    a_r = np.asarray(a_r)
    return np.exp(np.minimum(reward_temp * a_r, math.log(w_max)))


# -- losses ----------------------------------------------------------------------


def _finite_or_abort(arr, term: str):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite {term}")
    return arr


def cvae_loss(bundle: PolicyBundle, critics: CriticSet, batch: Batch, noise: np.ndarray):
    """Cost-advantage-weighted negative ELBO with one reparameterized latent
    draw per transition. Weights are constants; gradients flow to the encoder
    (through the sample and the KL) and the decoder (through the log-prob).

    Returns (loss, encoder grads, decoder grads, mean weight).
    """
    dt = bundle.cvae_enc.dtype
    s = batch.states.astype(dt)
    a_raw = batch.actions
    a = bundle.normalize_actions(a_raw).astype(dt)
    noise = np.asarray(noise, dtype=dt)
    b = s.shape[0]
    if noise.shape != (b, bundle.d_z):
        raise UsageError(f"noise must have shape {(b, bundle.d_z)}")

    _, a_c = advantages(critics, batch.states, a_raw)
    if bundle.c_zero_thresh is not None:
        q_c, v_c = cost_values(critics, batch.states, a_raw)
        w = cost_awr_weight(a_c, bundle.cost_temp, bundle.w_max, q_c, v_c,
                            bundle.c_zero_thresh)
    else:
        w = cost_awr_weight(a_c, bundle.cost_temp, bundle.w_max)
    w = w.astype(dt)

    enc_dist, enc_cache = bundle.cvae_enc.forward_cached(np.concatenate([s, a], axis=1))
    z = nn.gaussian_sample(enc_dist, noise)
    dec_dist, dec_cache = bundle.cvae_dec.forward_cached(np.concatenate([s, z], axis=1))
    recon = _finite_or_abort(nn.gaussian_log_prob(dec_dist, a), "reconstruction term")
    kl = _finite_or_abort(nn.kl_to_standard_normal(enc_dist), "kl term")
    kl_coef = dt.type(bundle.kl_coef)
    loss = float(np.mean(-w * (recon - kl_coef * kl)))
    if not np.isfinite(loss):
        raise NumericError("non-finite cvae loss")

    # per-sample factor on the ELBO term; batch mean folds in here
    c = (-w / dt.type(b))[:, None]
    inv_var = np.exp(-2.0 * dec_dist.log_std)
    d_rec_mean = (a - dec_dist.mean) * inv_var
    d_rec_log_std = ((a - dec_dist.mean) ** 2) * inv_var - dt.type(1.0)
    dec_grads, d_dec_in = bundle.cvae_dec.backward(
        dec_cache, (c * d_rec_mean, c * d_rec_log_std))
    d_z_grad = d_dec_in[:, s.shape[1]:]

    kl_factor = (w * kl_coef / dt.type(b))[:, None]
    enc_std = np.exp(enc_dist.log_std)
    d_enc_mean = d_z_grad + kl_factor * enc_dist.mean
    d_enc_log_std = d_z_grad * enc_std * noise + kl_factor * (enc_std * enc_std - dt.type(1.0))
    enc_grads, _ = bundle.cvae_enc.backward(enc_cache, (d_enc_mean, d_enc_log_std))
    return loss, enc_grads, dec_grads, float(np.mean(w))


def encoder_loss(bundle: PolicyBundle, critics: CriticSet, batch: Batch, noise: np.ndarray):
    """Reward-AWR regression of the latent safety encoder through the frozen
    decoder. Latents are eps * tanh(mean + std * noise) from the encoder head;
    only the encoder receives gradients.

    Returns (loss, latent-encoder grads, mean weight).
    """
    dt = bundle.lat_enc.dtype
    s = batch.states.astype(dt)
    a = bundle.normalize_actions(batch.actions).astype(dt)
    noise = np.asarray(noise, dtype=dt)
    b = s.shape[0]
    if noise.shape != (b, bundle.d_z):
        raise UsageError(f"noise must have shape {(b, bundle.d_z)}")

    a_r, _ = advantages(critics, batch.states, batch.actions)
    w = reward_awr_weight(a_r, bundle.reward_temp, bundle.w_max).astype(dt)

    lat_dist, lat_cache = bundle.lat_enc.forward_cached(s)
    pre = nn.gaussian_sample(lat_dist, noise)
    tanh_pre = np.tanh(pre)
    eps = dt.type(bundle.epsilon)
    z = eps * tanh_pre
    dec_dist, dec_cache = bundle.cvae_dec.forward_cached(np.concatenate([s, z], axis=1))
    recon = _finite_or_abort(nn.gaussian_log_prob(dec_dist, a), "reconstruction term")
    loss = float(np.mean(-w * recon))
    if not np.isfinite(loss):
        raise NumericError("non-finite encoder loss")

    c = (-w / dt.type(b))[:, None]
    inv_var = np.exp(-2.0 * dec_dist.log_std)
    d_rec_mean = (a - dec_dist.mean) * inv_var
    d_rec_log_std = ((a - dec_dist.mean) ** 2) * inv_var - dt.type(1.0)
    _, d_dec_in = bundle.cvae_dec.backward(dec_cache, (c * d_rec_mean, c * d_rec_log_std))
    d_z_grad = d_dec_in[:, s.shape[1]:]
    d_pre = d_z_grad * eps * (dt.type(1.0) - tanh_pre * tanh_pre)
    lat_std = np.exp(lat_dist.log_std)
    lat_grads, _ = bundle.lat_enc.backward(lat_cache, (d_pre, d_pre * lat_std * noise))
    return loss, lat_grads, float(np.mean(w))


# -- action selection --------------------------------------------------------------


def _batched(state):
    state = np.asarray(state, dtype=np.float64)
    if state.ndim == 1:
        return state[None, :], True
    return state, False


def decode_mean(bundle: PolicyBundle, states: np.ndarray, z: np.ndarray) -> np.ndarray:
    dt = bundle.cvae_dec.dtype
    dec = bundle.cvae_dec.forward(
        np.concatenate([states.astype(dt), z.astype(dt)], axis=1))
    # clip in float64 against the exact box (the f32 image of the bound can
    # sit just outside it)
    act = bundle.denormalize_actions(dec.mean.astype(np.float64))
    return np.clip(act, bundle.action_low, bundle.action_high)


def draw_restricted_latent(bundle: PolicyBundle, n: int, rng: np.random.Generator) -> np.ndarray:
    """Latent draws confined to the [-eps, eps] box.

    clip: standard-normal draw clipped coordinate-wise (mass piles on the faces).
    truncated: inverse-CDF truncated normal (no boundary atoms).
    """
    eps = bundle.epsilon
    if bundle.latent_sampler == "truncated":
        lo, hi = ndtr(-eps), ndtr(eps)
        u = rng.uniform(lo, hi, size=(n, bundle.d_z))
        return ndtri(u)
    z = rng.standard_normal((n, bundle.d_z))
    return np.clip(z, -eps, eps)


def act_cvae(bundle: PolicyBundle, state, rng: np.random.Generator) -> np.ndarray:
    states, single = _batched(state)
    z = rng.standard_normal((states.shape[0], bundle.d_z))
    act = decode_mean(bundle, states, z)
    return act[0] if single else act


def act_lspc_s(bundle: PolicyBundle, state, rng: np.random.Generator) -> np.ndarray:
    states, single = _batched(state)
    z = draw_restricted_latent(bundle, states.shape[0], rng)
    act = decode_mean(bundle, states, z)
    return act[0] if single else act


def act_lspc_o(bundle: PolicyBundle, state) -> np.ndarray:
    states, single = _batched(state)
    dt = bundle.lat_enc.dtype
    lat = bundle.lat_enc.forward(states.astype(dt))
    z = bundle.epsilon * np.tanh(lat.mean)
    act = decode_mean(bundle, states, z)
    return act[0] if single else act


def policy_fn(bundle: PolicyBundle, policy_id: str):
    """Uniform (state, rng) -> action callable for one of the three policies."""
    if policy_id == "cvae":
        return lambda s, rng: act_cvae(bundle, s, rng)
    if policy_id == "lspc-s":
        return lambda s, rng: act_lspc_s(bundle, s, rng)
    if policy_id == "lspc-o":
        return lambda s, rng: act_lspc_o(bundle, s)
    raise UsageError(f"unknown policy id {policy_id!r}")


def action_scan(bundle: PolicyBundle, critics: CriticSet, state, n_samples: int,
                rng: np.random.Generator) -> list[dict]:
    """Sampled actions of all three policies at one state, tagged with the
    min-ensemble reward Q; 2 * n_samples + 1 rows for external plotting."""
    state = np.asarray(state, dtype=np.float64)
    rows = []

    def q_of(actions):
        dt = critics.q1.dtype
        s_rep = np.repeat(state[None, :], actions.shape[0], axis=0).astype(dt)
        x = np.concatenate([s_rep, critics.normalize_actions(actions).astype(dt)], axis=1)
        return np.minimum(critics.q1.forward(x)[:, 0], critics.q2.forward(x)[:, 0])

    for source, actions in (
            ("cvae", act_cvae(bundle, np.repeat(state[None, :], n_samples, axis=0), rng)
             if n_samples else np.zeros((0, bundle.action_low.size))),
            ("lspc_s", act_lspc_s(bundle, np.repeat(state[None, :], n_samples, axis=0), rng)
             if n_samples else np.zeros((0, bundle.action_low.size))),
            ("lspc_o", act_lspc_o(bundle, state)[None, :])):
        qs = q_of(actions) if actions.shape[0] else []
        for i in range(actions.shape[0]):
            rows.append({"ax": float(actions[i, 0]), "ay": float(actions[i, 1]),
                         "q": float(qs[i]), "source": source})
    return rows
