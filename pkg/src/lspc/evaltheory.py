"""Policy evaluation with normalized metrics, the latent-restriction sweep,
and executable checks of the divergence-based performance/violation bounds on
tabular CMDPs."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .data import MetricDef, OfflineDataset, normalized_cost, normalized_reward
from .envs import (CategoricalPolicy, TabularCmdp, TabularEnvAdapter,
                   constrained_optimal, per_state_divergences, policy_eval,
                   stationary_distribution, value_at_start)
from .trainer import STREAMS, TrainConfig, train

BOUND_TOL = 1e-9


# -- rollout evaluation ---------------------------------------------------------


@dataclass
class EvalReport:
    policy_id: str
    n_episodes: int
    kappa: float
    mean_norm_reward: float
    std_norm_reward: float
    mean_norm_cost: float
    std_norm_cost: float
    mean_return: float
    mean_cost: float
    episodes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def evaluate(policy, env, n_episodes: int, metric: MetricDef, seed: int,
             policy_id: str = "policy") -> EvalReport:
    """Undiscounted rollouts of a (state, rng) -> action callable.

    Each episode draws from its own child stream so results do not depend on
    evaluation order.
    """
    if n_episodes < 1:
        raise UsageError("n_episodes must be >= 1")
    if metric.kappa <= 0:
        raise UsageError("kappa must be positive")
    root = np.random.SeedSequence(seed, spawn_key=(STREAMS["eval"],))
    episodes = []
    for ep, child in enumerate(root.spawn(n_episodes)):
        rng = np.random.Generator(np.random.PCG64(child))
        s = env.reset(rng)
        ep_return = 0.0
        ep_cost = 0.0
        length = 0
        for _ in range(env.horizon):
            a = policy(s, rng)
            a = np.asarray(a)
            if a.shape != (env.action_dim,):
                raise UsageError(
                    f"policy returned action of shape {a.shape}, expected ({env.action_dim},)")
            step = env.step(s, a, rng)
            ep_return += step.reward
            ep_cost += step.cost
            length += 1
            s = step.next_state
            if step.done:
                break
        episodes.append({
            "episode": ep,
            "return": ep_return,
            "cost": ep_cost,
            "length": length,
            "norm_reward": normalized_reward(ep_return, metric),
            "norm_cost": normalized_cost(ep_cost, metric),
        })
    nr = np.array([e["norm_reward"] for e in episodes])
    nc = np.array([e["norm_cost"] for e in episodes])
    return EvalReport(
        policy_id=policy_id, n_episodes=n_episodes, kappa=metric.kappa,
        mean_norm_reward=float(nr.mean()), std_norm_reward=float(nr.std()),
        mean_norm_cost=float(nc.mean()), std_norm_cost=float(nc.std()),
        mean_return=float(np.mean([e["return"] for e in episodes])),
        mean_cost=float(np.mean([e["cost"] for e in episodes])),
        episodes=episodes)


# -- discretization of continuous agents onto tabular CMDPs -----------------------


def discretize_policy(policy, adapter: TabularEnvAdapter, n_action_samples: int,
                      rng: np.random.Generator) -> CategoricalPolicy:
    """Empirical action frequencies per state, with continuous actions snapped
    to the nearest embedding."""
    if n_action_samples < 1:
        raise UsageError("n_action_samples must be >= 1")
    m = adapter.cmdp
    eye = np.eye(m.n_states)
    counts = np.zeros((m.n_states, m.n_actions))
    emb = m.action_embeddings
    for _ in range(n_action_samples):
        actions = np.asarray(policy(eye, rng))
        d2 = ((actions[:, None, :] - emb[None, :, :]) ** 2).sum(axis=2)
        picks = np.argmin(d2, axis=1)
        counts[np.arange(m.n_states), picks] += 1.0
    return CategoricalPolicy(counts / n_action_samples)


# -- divergence bound verification --------------------------------------------------


@dataclass
class TheoryReport:
    eps1: float                 # E_{d*}[KL(pi || pi_s)]
    eps2: float                 # E_{d*}[KL(pi_s || pi*)]
    sup_kl_pi_pis: float
    sup_kl_pis_pistar: float
    reward_bound: float
    cost_bound: float
    gamma: float
    kappa: float
    checks: list = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def theory_check(m: TabularCmdp, pi: CategoricalPolicy, pi_s: CategoricalPolicy,
                 pi_star: CategoricalPolicy | None = None) -> TheoryReport:
    """Numerically verify the visitation, performance-gap, and violation bounds.

    The divergence budgets are measured (not assumed): expected KLs under the
    optimal policy's visitation distribution. Infinite KLs make the dependent
    bounds vacuously true and are reported as such.
    """
    if pi_star is None:
        pi_star = constrained_optimal(m)
    d_star, _ = stationary_distribution(m, pi_star)
    d_pi, _ = stationary_distribution(m, pi)

    kl_pi_pis, _ = per_state_divergences(pi, pi_s)
    kl_pis_star, _ = per_state_divergences(pi_s, pi_star)
    _, tv_pi_star = per_state_divergences(pi, pi_star)

    def weighted(values):
        mask = d_star > 0
        if np.all(np.isfinite(values[mask])):
            return float(d_star[mask] @ values[mask])
        return float("inf")

    eps1 = weighted(kl_pi_pis)
    eps2 = weighted(kl_pis_star)
    exp_tv = float(d_star @ tv_pi_star)

    gamma = m.gamma
    r_m = m.reward_bound
    c_m = m.cost_bound
    vr_pi = value_at_start(m, pi, "reward")
    vr_star = value_at_start(m, pi_star, "reward")
    vc_pi = value_at_start(m, pi, "cost")

    kl_budget = np.sqrt(eps1 / 2.0) + np.sqrt(eps2 / 2.0) if np.isfinite(eps1 + eps2) \
        else float("inf")

    checks = []

    def add(name, lhs, rhs):
        vacuous = not np.isfinite(rhs)
        checks.append({"name": name, "lhs": float(lhs), "rhs": float(rhs),
                       "passed": bool(lhs <= rhs + BOUND_TOL), "vacuous": vacuous})

    add("visitation_tv", 0.5 * float(np.abs(d_pi - d_star).sum()),
        gamma / (1.0 - gamma) * exp_tv)
    add("value_gap_tv", abs(vr_pi - vr_star),
        2.0 * r_m / (1.0 - gamma) ** 2 * exp_tv)
    add("policy_tv_kl", exp_tv, kl_budget)
    add("performance_gap", vr_star - vr_pi,
        2.0 * r_m / (1.0 - gamma) ** 2 * kl_budget)
    add("constraint_violation", vc_pi - m.kappa,
        2.0 * c_m / (1.0 - gamma) ** 2 * kl_budget)

    return TheoryReport(
        eps1=eps1, eps2=eps2,
        sup_kl_pi_pis=float(np.max(kl_pi_pis)),
        sup_kl_pis_pistar=float(np.max(kl_pis_star)),
        reward_bound=r_m, cost_bound=c_m, gamma=gamma, kappa=m.kappa,
        checks=checks)


# -- latent restriction sweep ---------------------------------------------------------


def spearman(x, y) -> float:
    """Spearman rank correlation with average ranks on ties."""
    def ranks(v):
        v = np.asarray(v, dtype=np.float64)
        order = np.argsort(v, kind="stable")
        out = np.empty(v.size)
        sv = v[order]
        i = 0
        while i < v.size:
            j = i
            while j + 1 < v.size and sv[j + 1] == sv[i]:
                j += 1
            out[order[i:j + 1]] = 0.5 * (i + j) + 1.0
            i = j + 1
        return out

    rx, ry = ranks(x), ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx * rx).sum() * (ry * ry).sum())
    if denom == 0:
        return 0.0
    return float((rx * ry).sum() / denom)


def sweep_epsilon(config: TrainConfig, dataset: OfflineDataset, eps_list, seeds,
                  env=None, kappa: float | None = None, n_episodes: int = 20) -> dict:
    """Train and evaluate per (restriction, seed); reports per-policy rows and
    the rank correlation between the restriction and the optimized policy's
    mean episode cost."""
    if not eps_list:
        raise UsageError("eps_list must be non-empty")
    from .envs import make_env
    from .policy import policy_fn

    if env is None:
        env = make_env(config.env)
    if kappa is None:
        kappa = float(getattr(env.spec, "kappa", 1.0))
    metric = MetricDef.from_dataset(dataset, kappa=kappa)
    rows = []
    o_costs = []
    for eps in eps_list:
        for seed in seeds:
            cfg = dataclasses.replace(config, epsilon=float(eps), seed=int(seed))
            critics, bundle, _, _ = train(cfg, dataset, env=env)
            for pid in ("lspc-s", "lspc-o"):
                rep = evaluate(policy_fn(bundle, pid), env, n_episodes, metric,
                               seed=int(seed), policy_id=pid)
                rows.append({"epsilon": float(eps), "seed": int(seed), "policy": pid,
                             "mean_norm_reward": rep.mean_norm_reward,
                             "mean_norm_cost": rep.mean_norm_cost,
                             "mean_return": rep.mean_return,
                             "mean_cost": rep.mean_cost})
                if pid == "lspc-o":
                    o_costs.append((float(eps), rep.mean_cost))
    rho = spearman([e for e, _ in o_costs], [c for _, c in o_costs])
    return {"rows": rows, "spearman_eps_cost": rho,
            "eps_list": [float(e) for e in eps_list],
            "seeds": [int(s) for s in seeds], "kappa": kappa}
