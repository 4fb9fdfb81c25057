"""End-to-end finite-difference verification of every training loss.

Builds a small float64 problem (random critics, bundle, batch) and compares
the analytic gradients of the six losses against central differences. Batches
that put any relu pre-activation, log-std clamp, or expectile residual within
the kink margin are redrawn, since central differences straddle kinks.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .critics import (CriticSet, cost_q_loss, cost_value_loss, make_critics,
                      reward_q_loss, reward_value_loss)
from .data import Batch
from .policy import PolicyBundle, cvae_loss, encoder_loss, make_bundle

KINK_MARGIN = 1e-3
FD_STEP = 1e-5

STATE_DIM = 2
ACTION_DIM = 2
D_Z = 2
WIDTH = 8
BATCH = 6


def _net_margin(net: nn.MlpNet, x: np.ndarray) -> float:
    """Distance of the forward pass from the nearest relu/clamp kink."""
    _, cache = net.forward_cached(x)
    margin = np.inf
    if net.activation == "relu":
        for pre in cache.pre:
            margin = min(margin, float(np.min(np.abs(pre))))
    # the gaussian head's log-std rescaling is smooth, so only relu kinks count
    return margin


def _toy_problem(seed: int):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
    cs = make_critics(STATE_DIM, ACTION_DIM, width=WIDTH, depth=2,
                      dtype=np.float64, rng=rng)
    # decorrelate targets from the online nets so min/max selection is generic
    for net in (cs.q1_target, cs.q2_target, cs.qc1_target, cs.qc2_target):
        fresh = nn.MlpNet(net.layer_sizes, net.activation, net.head,
                          dtype=np.float64, rng=rng)
        for k in range(net.n_layers):
            net.weights[k] = fresh.weights[k]
            net.biases[k] = fresh.biases[k]
    bundle = make_bundle(STATE_DIM, ACTION_DIM, d_z=D_Z, width=WIDTH, depth=2,
                         action_low=[-1.0] * ACTION_DIM, action_high=[1.0] * ACTION_DIM,
                         dtype=np.float64, rng=rng)
    return cs, bundle, rng


def _draw_ctx(rng) -> dict:
    states = rng.uniform(-0.5, 0.5, size=(BATCH, STATE_DIM))
    actions = rng.uniform(-0.5, 0.5, size=(BATCH, ACTION_DIM))
    rewards = rng.uniform(-1.0, 1.0, size=BATCH)
    costs = rng.uniform(0.0, 1.0, size=BATCH)
    next_states = rng.uniform(-0.5, 0.5, size=(BATCH, STATE_DIM))
    dones = (rng.uniform(size=BATCH) < 0.2).astype(np.float64)
    batch = Batch(indices=np.arange(BATCH), states=states, actions=actions,
                  rewards=rewards, costs=costs, next_states=next_states, dones=dones)
    return {"batch": batch,
            "cvae_noise": rng.standard_normal((BATCH, D_Z)),
            "enc_noise": rng.standard_normal((BATCH, D_Z))}


def _loss_specs(cs: CriticSet, bundle: PolicyBundle, ctx: dict):
    """(name, loss closure, differentiated nets, kink-margin probe) per loss.

    Closures read the batch through ctx so redraws take effect.
    """

    def sa():
        b = ctx["batch"]
        return np.concatenate([b.states, b.actions], axis=1)

    def margin_reward_value():
        b = ctx["batch"]
        q_min = np.minimum(cs.q1_target.forward(sa())[:, 0],
                           cs.q2_target.forward(sa())[:, 0])
        u = q_min - cs.v.forward(b.states)[:, 0]
        return min(_net_margin(cs.v, b.states), float(np.min(np.abs(u))))

    def margin_cost_value():
        b = ctx["batch"]
        qc_max = np.maximum(cs.qc1_target.forward(sa())[:, 0],
                            cs.qc2_target.forward(sa())[:, 0])
        u = cs.vc.forward(b.states)[:, 0] - qc_max
        return min(_net_margin(cs.vc, b.states), float(np.min(np.abs(u))))

    def margin_q():
        return min(_net_margin(cs.q1, sa()), _net_margin(cs.q2, sa()))

    def margin_qc():
        return min(_net_margin(cs.qc1, sa()), _net_margin(cs.qc2, sa()))

    def margin_cvae():
        b = ctx["batch"]
        enc_dist, _ = bundle.cvae_enc.forward_cached(sa())
        z = nn.gaussian_sample(enc_dist, ctx["cvae_noise"])
        dec_in = np.concatenate([b.states, z], axis=1)
        return min(_net_margin(bundle.cvae_enc, sa()),
                   _net_margin(bundle.cvae_dec, dec_in))

    def margin_encoder():
        b = ctx["batch"]
        lat_dist, _ = bundle.lat_enc.forward_cached(b.states)
        pre = nn.gaussian_sample(lat_dist, ctx["enc_noise"])
        z = bundle.epsilon * np.tanh(pre)
        dec_in = np.concatenate([b.states, z], axis=1)
        return min(_net_margin(bundle.lat_enc, b.states),
                   _net_margin(bundle.cvae_dec, dec_in))

    return [
        ("reward_value",
         lambda: (lambda r: (r[0], {"v": r[1]}))(reward_value_loss(cs, ctx["batch"])),
         {"v": cs.v}, margin_reward_value),
        ("reward_q",
         lambda: (lambda r: (r[0], {"q1": r[1], "q2": r[2]}))(
             reward_q_loss(cs, ctx["batch"])),
         {"q1": cs.q1, "q2": cs.q2}, margin_q),
        ("cost_value",
         lambda: (lambda r: (r[0], {"vc": r[1]}))(cost_value_loss(cs, ctx["batch"])),
         {"vc": cs.vc}, margin_cost_value),
        ("cost_q",
         lambda: (lambda r: (r[0], {"qc1": r[1], "qc2": r[2]}))(
             cost_q_loss(cs, ctx["batch"])),
         {"qc1": cs.qc1, "qc2": cs.qc2}, margin_qc),
        ("cvae",
         lambda: (lambda r: (r[0], {"cvae_enc": r[1], "cvae_dec": r[2]}))(
             cvae_loss(bundle, cs, ctx["batch"], ctx["cvae_noise"])),
         {"cvae_enc": bundle.cvae_enc, "cvae_dec": bundle.cvae_dec}, margin_cvae),
        ("encoder",
         lambda: (lambda r: (r[0], {"lat_enc": r[1]}))(
             encoder_loss(bundle, cs, ctx["batch"], ctx["enc_noise"])),
         {"lat_enc": bundle.lat_enc}, margin_encoder),
    ]


def run_suite(n_seeds: int = 5, max_redraws: int = 25) -> list[nn.GradCheckReport]:
    """Gradient-check all six losses across seeds; returns one report per
    (seed, loss). Worst case over reports is the suite verdict."""
    reports = []
    for seed in range(n_seeds):
        cs, bundle, rng = _toy_problem(seed)
        ctx = _draw_ctx(rng)
        for name, loss_fn, params, margin_fn in _loss_specs(cs, bundle, ctx):
            redraws = 0
            while margin_fn() < KINK_MARGIN and redraws < max_redraws:
                ctx.update(_draw_ctx(rng))
                redraws += 1
            report = nn.grad_check(loss_fn, params, h=FD_STEP, name=f"{name}[seed={seed}]")
            report.n_resampled = redraws
            reports.append(report)
    return reports
