"""IQL reward and cost critics.

Double Q ensembles with slow target copies, expectile-fit state values, and
TD regression against r + gamma * V(s'). The reward pathway reduces its
ensemble with min (against overestimation), the cost pathway with max
(against underestimation), and the cost value loss reverses the residual
order relative to the reward one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, UsageError
from . import nn
from .data import Batch


@dataclass
class CriticSet:
    q1: nn.MlpNet
    q2: nn.MlpNet
    q1_target: nn.MlpNet
    q2_target: nn.MlpNet
    v: nn.MlpNet
    qc1: nn.MlpNet
    qc2: nn.MlpNet
    qc1_target: nn.MlpNet
    qc2_target: nn.MlpNet
    vc: nn.MlpNet
    gamma: float
    expectile: float
    tau: float
    # action box; Q inputs are normalized to the unit box so tiny action
    # scales do not starve the nets of action signal
    action_low: np.ndarray | None = None
    action_high: np.ndarray | None = None

    def normalize_actions(self, actions: np.ndarray) -> np.ndarray:
        if self.action_low is None:
            return actions
        mid = 0.5 * (self.action_high + self.action_low)
        half = 0.5 * (self.action_high - self.action_low)
        return (actions - mid) / half

    def online_nets(self):
        return {"q1": self.q1, "q2": self.q2, "v": self.v,
                "qc1": self.qc1, "qc2": self.qc2, "vc": self.vc}

    def all_nets(self):
        out = dict(self.online_nets())
        out.update({"q1_target": self.q1_target, "q2_target": self.q2_target,
                    "qc1_target": self.qc1_target, "qc2_target": self.qc2_target})
        return out

    def sync_targets(self):
        for online, target in ((self.q1, self.q1_target), (self.q2, self.q2_target),
                               (self.qc1, self.qc1_target), (self.qc2, self.qc2_target)):
            nn.soft_update(target, online, 1.0)

    def soft_update_targets(self):
        for online, target in ((self.q1, self.q1_target), (self.q2, self.q2_target),
                               (self.qc1, self.qc1_target), (self.qc2, self.qc2_target)):
            nn.soft_update(target, online, self.tau)


def check_expectile(expectile: float, allow_symmetric: bool = False) -> None:
    ok = (0.5 <= expectile < 1.0) if allow_symmetric else (0.5 < expectile < 1.0)
    if not ok:
        raise UsageError(
            f"expectile must lie in (0.5, 1.0) (got {expectile}); "
            "0.5 is allowed only in ablation mode")


def make_critics(state_dim: int, action_dim: int, width: int = 64, depth: int = 2,
                 gamma: float = 0.99, expectile: float = 0.7, tau: float = 0.005,
                 dtype=np.float32, rng: np.random.Generator | None = None,
                 allow_symmetric: bool = False, action_low=None,
                 action_high=None) -> CriticSet:
    check_expectile(expectile, allow_symmetric)
    hidden = [width] * depth

    def q_net():
        return nn.MlpNet([state_dim + action_dim] + hidden + [1], dtype=dtype, rng=rng)

    def v_net():
        return nn.MlpNet([state_dim] + hidden + [1], dtype=dtype, rng=rng)

    q1, q2, v = q_net(), q_net(), v_net()
    qc1, qc2, vc = q_net(), q_net(), v_net()
    cs = CriticSet(q1=q1, q2=q2, q1_target=q1.copy(), q2_target=q2.copy(), v=v,
                   qc1=qc1, qc2=qc2, qc1_target=qc1.copy(), qc2_target=qc2.copy(),
                   vc=vc, gamma=gamma, expectile=expectile, tau=tau,
                   action_low=None if action_low is None else np.asarray(action_low, dtype=np.float64),
                   action_high=None if action_high is None else np.asarray(action_high, dtype=np.float64))
    return cs


def _scalar(net: nn.MlpNet, x: np.ndarray) -> np.ndarray:
    out = net.forward(x)
    return out[:, 0]


def _sa(cs: CriticSet, batch: Batch, dtype) -> np.ndarray:
    a = cs.normalize_actions(batch.actions)
    return np.concatenate([batch.states, a], axis=1).astype(dtype)


def _finite_or_abort(value: float, name: str) -> float:
    if not np.isfinite(value):
        raise NumericError(f"non-finite {name} loss")
    return float(value)


def reward_value_loss(cs: CriticSet, batch: Batch):
    """Expectile regression of V toward min of the target Qs; targets constant."""
    dt = cs.v.dtype
    x_sa = _sa(cs, batch, dt)
    q_min = np.minimum(_scalar(cs.q1_target, x_sa), _scalar(cs.q2_target, x_sa))
    out, cache = cs.v.forward_cached(batch.states.astype(dt))
    u = q_min - out[:, 0]
    loss = _finite_or_abort(np.mean(nn.expectile_loss(u, cs.expectile)), "reward value")
    upstream = (-nn.expectile_loss_grad(u, cs.expectile) / dt.type(u.size))[:, None]
    grads, _ = cs.v.backward(cache, upstream)
    return loss, grads


def reward_q_loss(cs: CriticSet, batch: Batch):
    """Both reward Q nets regress on r + gamma (1-done) V(s'); V is constant."""
    dt = cs.q1.dtype
    x_sa = _sa(cs, batch, dt)
    v_next = _scalar(cs.v, batch.next_states.astype(dt))
    mask = dt.type(1.0) - batch.dones.astype(dt)
    y = batch.rewards.astype(dt) + dt.type(cs.gamma) * mask * v_next
    total = 0.0
    grads = []
    for net in (cs.q1, cs.q2):
        out, cache = net.forward_cached(x_sa)
        resid = y - out[:, 0]
        total += float(np.mean(resid * resid))
        upstream = (-dt.type(2.0) * resid / dt.type(resid.size))[:, None]
        g, _ = net.backward(cache, upstream)
        grads.append(g)
    loss = _finite_or_abort(total, "reward q")
    return loss, grads[0], grads[1]


def cost_value_loss(cs: CriticSet, batch: Batch):
    """Expectile regression with reversed residual: L(Vc - max of target cost Qs)."""
    dt = cs.vc.dtype
    x_sa = _sa(cs, batch, dt)
    qc_max = np.maximum(_scalar(cs.qc1_target, x_sa), _scalar(cs.qc2_target, x_sa))
    out, cache = cs.vc.forward_cached(batch.states.astype(dt))
    u = out[:, 0] - qc_max
    loss = _finite_or_abort(np.mean(nn.expectile_loss(u, cs.expectile)), "cost value")
    upstream = (nn.expectile_loss_grad(u, cs.expectile) / dt.type(u.size))[:, None]
    grads, _ = cs.vc.backward(cache, upstream)
    return loss, grads


def cost_q_loss(cs: CriticSet, batch: Batch):
    dt = cs.qc1.dtype
    x_sa = _sa(cs, batch, dt)
    vc_next = _scalar(cs.vc, batch.next_states.astype(dt))
    mask = dt.type(1.0) - batch.dones.astype(dt)
    y = batch.costs.astype(dt) + dt.type(cs.gamma) * mask * vc_next
    total = 0.0
    grads = []
    for net in (cs.qc1, cs.qc2):
        out, cache = net.forward_cached(x_sa)
        resid = y - out[:, 0]
        total += float(np.mean(resid * resid))
        upstream = (-dt.type(2.0) * resid / dt.type(resid.size))[:, None]
        g, _ = net.backward(cache, upstream)
        grads.append(g)
    loss = _finite_or_abort(total, "cost q")
    return loss, grads[0], grads[1]


def advantages(cs: CriticSet, states: np.ndarray, actions: np.ndarray):
    """(reward advantage, cost advantage) from the online nets.

    Reward uses the min of the Q pair, cost the max.
    """
    dt = cs.q1.dtype
    x_sa = np.concatenate([states, cs.normalize_actions(actions)], axis=1).astype(dt)
    q_min = np.minimum(_scalar(cs.q1, x_sa), _scalar(cs.q2, x_sa))
    qc_max = np.maximum(_scalar(cs.qc1, x_sa), _scalar(cs.qc2, x_sa))
    a_r = q_min - _scalar(cs.v, states.astype(dt))
    a_c = qc_max - _scalar(cs.vc, states.astype(dt))
    return a_r, a_c


def cost_values(cs: CriticSet, states: np.ndarray, actions: np.ndarray):
    """(max-ensemble Qc, Vc) used by the behavior-cloning weight zeroing rule."""
    dt = cs.qc1.dtype
    x_sa = np.concatenate([states, cs.normalize_actions(actions)], axis=1).astype(dt)
    qc_max = np.maximum(_scalar(cs.qc1, x_sa), _scalar(cs.qc2, x_sa))
    vc = _scalar(cs.vc, states.astype(dt))
    return qc_max, vc
