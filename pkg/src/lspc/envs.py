"""Toy constrained-MDP environments and exact tabular solvers.

PointHazard is a continuous 2-D navigation task whose reward-greedy path
crosses a cost disk while a slower, cost-free detour exists. GridHazard is a
5x5 tabular CMDP used as the testbed for exact policy evaluation and the
divergence-bound verifier. Both are selectable by string id with overridable
spec fields.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleError, UsageError

# -- shared step record -------------------------------------------------------


@dataclass
class CmdpStep:
    next_state: np.ndarray
    reward: float
    cost: float
    done: bool


# -- continuous point navigation ----------------------------------------------


@dataclass
class PointHazardSpec:
    state_low: tuple = (-1.0, -1.0)
    state_high: tuple = (1.0, 1.0)
    action_low: tuple = (-0.2, -0.2)
    action_high: tuple = (0.2, 0.2)
    goal: tuple = (0.8, 0.8)
    goal_radius: float = 0.1
    terminal_bonus: float = 10.0
    hazard_center: tuple = (0.0, 0.0)
    hazard_radius: float = 0.3
    start: tuple = (-0.8, -0.8)
    start_jitter: float = 0.05
    horizon: int = 100
    dyn_noise: float = 0.0
    kappa: float = 5.0


class PointHazard:
    """Box-bounded point mass; cost 1 inside the hazard disk, reward -|s'-goal|."""

    state_dim = 2
    action_dim = 2

    def __init__(self, spec: PointHazardSpec | None = None):
        self.spec = spec or PointHazardSpec()
        s = self.spec
        self.state_low = np.asarray(s.state_low, dtype=np.float64)
        self.state_high = np.asarray(s.state_high, dtype=np.float64)
        self.action_low = np.asarray(s.action_low, dtype=np.float64)
        self.action_high = np.asarray(s.action_high, dtype=np.float64)
        self._goal = np.asarray(s.goal, dtype=np.float64)
        self._hazard = np.asarray(s.hazard_center, dtype=np.float64)

    @property
    def horizon(self) -> int:
        return self.spec.horizon

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        jitter = rng.uniform(-self.spec.start_jitter, self.spec.start_jitter, size=2)
        return np.clip(np.asarray(self.spec.start) + jitter,
                       self.state_low, self.state_high)

    def step(self, state, action, rng: np.random.Generator) -> CmdpStep:
        state = np.asarray(state, dtype=np.float64)
        action = np.asarray(action, dtype=np.float64)
        if not (np.all(np.isfinite(state)) and np.all(np.isfinite(action))):
            raise UsageError("non-finite state or action")
        a = np.clip(action, self.action_low, self.action_high)
        nxt = state + a
        if self.spec.dyn_noise > 0:
            nxt = nxt + rng.normal(0.0, self.spec.dyn_noise, size=2)
        nxt = np.clip(nxt, self.state_low, self.state_high)
        goal_dist = float(np.linalg.norm(nxt - self._goal))
        reward = -goal_dist
        done = goal_dist < self.spec.goal_radius
        if done:
            reward += self.spec.terminal_bonus
        cost = 1.0 if float(np.linalg.norm(nxt - self._hazard)) < self.spec.hazard_radius else 0.0
        return CmdpStep(next_state=nxt, reward=reward, cost=cost, done=done)


# -- tabular CMDP ---------------------------------------------------------------


@dataclass
class TabularCmdp:
    n_states: int
    n_actions: int
    transitions: np.ndarray      # (S, A, S), rows sum to 1
    rewards: np.ndarray          # (S, A)
    costs: np.ndarray            # (S, A), >= 0
    gamma: float
    kappa: float
    rho0: np.ndarray             # (S,)
    terminal: np.ndarray         # (S,) bool
    action_embeddings: np.ndarray | None = None   # (A, d) continuous stand-ins

    def __post_init__(self):
        P = self.transitions
        if P.shape != (self.n_states, self.n_actions, self.n_states):
            raise UsageError("transition tensor shape mismatch")
        if np.max(np.abs(P.sum(axis=2) - 1.0)) > 1e-12:
            raise UsageError("transition rows must sum to 1")
        if abs(self.rho0.sum() - 1.0) > 1e-12:
            raise UsageError("rho0 must sum to 1")
        if np.any(self.costs < 0):
            raise UsageError("costs must be non-negative")

    @property
    def reward_bound(self) -> float:
        return float(np.max(np.abs(self.rewards)))

    @property
    def cost_bound(self) -> float:
        return float(np.max(self.costs))


@dataclass
class CategoricalPolicy:
    probs: np.ndarray  # (S, A), row-stochastic

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if np.any(p < -1e-12):
            raise UsageError("policy probabilities must be non-negative")
        if np.max(np.abs(p.sum(axis=1) - 1.0)) > 1e-9:
            raise UsageError("policy rows must sum to 1")
        self.probs = np.clip(p, 0.0, None)

    @classmethod
    def uniform(cls, m: TabularCmdp) -> "CategoricalPolicy":
        return cls(np.full((m.n_states, m.n_actions), 1.0 / m.n_actions))

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "CategoricalPolicy":
        actions = np.asarray(actions, dtype=int)
        p = np.zeros((actions.size, n_actions))
        p[np.arange(actions.size), actions] = 1.0
        return cls(p)


GRID_ACTION_EMBEDDINGS = np.array(
    [[0.0, 1.0], [0.0, -1.0], [-1.0, 0.0], [1.0, 0.0]])  # up, down, left, right


def grid_hazard(size: int = 5, p_slip: float = 0.1, gamma: float = 0.99,
                kappa: float = 0.2) -> TabularCmdp:
    """Grid CMDP: goal at top-middle pays 1 and absorbs; the three center
    cells of the middle row cost 1 per visit; moves slip sideways with
    probability p_slip split over the other three directions."""
    n = size * size
    mid = size // 2
    goal = 0 * size + mid
    start = (size - 1) * size + mid
    hazard = [mid * size + c for c in range(mid - 1, mid + 2)]
    deltas = [(-1, 0), (1, 0), (0, -1), (0, 1)]  # up, down, left, right

    def move(s, d):
        r, c = divmod(s, size)
        nr, nc = r + deltas[d][0], c + deltas[d][1]
        if 0 <= nr < size and 0 <= nc < size:
            return nr * size + nc
        return s

    P = np.zeros((n, 4, n))
    r = np.zeros((n, 4))
    c = np.zeros((n, 4))
    for s in range(n):
        if s == goal:
            P[s, :, s] = 1.0
            continue
        for a in range(4):
            for d in range(4):
                prob = (1.0 - p_slip) if d == a else p_slip / 3.0
                nxt = move(s, d)
                P[s, a, nxt] += prob
                if nxt == goal:
                    r[s, a] += prob
            if s in hazard:
                c[s, a] = 1.0
    rho0 = np.zeros(n)
    rho0[start] = 1.0
    terminal = np.zeros(n, dtype=bool)
    terminal[goal] = True
    return TabularCmdp(n_states=n, n_actions=4, transitions=P, rewards=r,
                       costs=c, gamma=gamma, kappa=kappa, rho0=rho0,
                       terminal=terminal,
                       action_embeddings=GRID_ACTION_EMBEDDINGS.copy())


class TabularEnvAdapter:
    """Rollout facade over a TabularCmdp for continuous-action agents.

    States are one-hot vectors; continuous actions are snapped to the nearest
    embedding before the discrete transition is sampled.
    """

    def __init__(self, m: TabularCmdp, horizon: int = 500):
        if m.action_embeddings is None:
            raise UsageError("adapter needs a CMDP with action embeddings")
        self.cmdp = m
        self.horizon = horizon
        self.state_dim = m.n_states
        self.action_dim = m.action_embeddings.shape[1]
        self.action_low = m.action_embeddings.min(axis=0)
        self.action_high = m.action_embeddings.max(axis=0)

    @property
    def spec(self):
        return self.cmdp

    def one_hot(self, idx: int) -> np.ndarray:
        v = np.zeros(self.cmdp.n_states, dtype=np.float64)
        v[idx] = 1.0
        return v

    def nearest_action(self, action_vec) -> int:
        d = np.linalg.norm(self.cmdp.action_embeddings - np.asarray(action_vec), axis=1)
        return int(np.argmin(d))

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        idx = int(rng.choice(self.cmdp.n_states, p=self.cmdp.rho0))
        return self.one_hot(idx)

    def step(self, state, action, rng: np.random.Generator) -> CmdpStep:
        s = int(np.argmax(state))
        a = self.nearest_action(action)
        return self.discrete_step(s, a, rng)

    def discrete_step(self, s: int, a: int, rng: np.random.Generator) -> CmdpStep:
        m = self.cmdp
        nxt = int(rng.choice(m.n_states, p=m.transitions[s, a]))
        return CmdpStep(next_state=self.one_hot(nxt),
                        reward=float(m.rewards[s, a]),
                        cost=float(m.costs[s, a]),
                        done=bool(m.terminal[nxt]))


# -- exact evaluation -----------------------------------------------------------


def _policy_kernels(m: TabularCmdp, pol: CategoricalPolicy):
    P_pi = np.einsum("sa,sat->st", pol.probs, m.transitions)
    return P_pi


def policy_eval(m: TabularCmdp, pol: CategoricalPolicy, signal: str = "reward") -> np.ndarray:
    """State values of pol for the chosen signal by direct linear solve."""
    if signal not in ("reward", "cost"):
        raise UsageError(f"unknown signal {signal!r}")
    h = m.rewards if signal == "reward" else m.costs
    h_pi = (pol.probs * h).sum(axis=1)
    P_pi = _policy_kernels(m, pol)
    A = np.eye(m.n_states) - m.gamma * P_pi
    return np.linalg.solve(A, h_pi)


def value_at_start(m: TabularCmdp, pol: CategoricalPolicy, signal: str = "reward") -> float:
    return float(m.rho0 @ policy_eval(m, pol, signal))


def policy_eval_sweeps(m: TabularCmdp, pol: CategoricalPolicy, signal: str = "reward",
                       tol: float = 1e-12, max_sweeps: int = 100000) -> np.ndarray:
    """Iterative fixed-point evaluation; agreement oracle for policy_eval."""
    h = m.rewards if signal == "reward" else m.costs
    h_pi = (pol.probs * h).sum(axis=1)
    P_pi = _policy_kernels(m, pol)
    v = np.zeros(m.n_states)
    for _ in range(max_sweeps):
        v_new = h_pi + m.gamma * (P_pi @ v)
        if np.max(np.abs(v_new - v)) < tol:
            return v_new
        v = v_new
    return v


def stationary_distribution(m: TabularCmdp, pol: CategoricalPolicy):
    """Discounted visitation distribution d = (1-gamma) rho0 + gamma P_pi^T d.

    Returns (d_states, d_state_actions); both sum to 1.
    """
    P_pi = _policy_kernels(m, pol)
    A = np.eye(m.n_states) - m.gamma * P_pi.T
    d = np.linalg.solve(A, (1.0 - m.gamma) * m.rho0)
    d_sa = d[:, None] * pol.probs
    return d, d_sa


def value_iteration(m: TabularCmdp, payoff: np.ndarray | None = None,
                    tol: float = 1e-12, max_sweeps: int = 200000):
    """Optimal values/policy for an arbitrary (S, A) payoff matrix.

    Ties break toward the lowest action index so results are deterministic.
    """
    M = m.rewards if payoff is None else payoff
    v = np.zeros(m.n_states)
    for _ in range(max_sweeps):
        q = M + m.gamma * np.einsum("sat,t->sa", m.transitions, v)
        v_new = q.max(axis=1)
        if np.max(np.abs(v_new - v)) < tol:
            v = v_new
            break
        v = v_new
    q = M + m.gamma * np.einsum("sat,t->sa", m.transitions, v)
    greedy = np.argmax(q, axis=1)
    return v, CategoricalPolicy.deterministic(greedy, m.n_actions)


# -- constrained optimum ---------------------------------------------------------

_ENUM_LIMIT = 4096
FEAS_TOL = 1e-9


def _mix_policies(p: CategoricalPolicy, q: CategoricalPolicy, w: float) -> CategoricalPolicy:
    return CategoricalPolicy((1.0 - w) * p.probs + w * q.probs)


def _boundary_mixture(m: TabularCmdp, feasible: CategoricalPolicy,
                      infeasible: CategoricalPolicy, tol: float = 1e-6):
    """Largest mixture weight toward the infeasible policy that stays feasible."""
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if value_at_start(m, _mix_policies(feasible, infeasible, mid), "cost") <= m.kappa:
            lo = mid
        else:
            hi = mid
    return _mix_policies(feasible, infeasible, lo)


def _enumerate_constrained(m: TabularCmdp) -> CategoricalPolicy:
    import itertools

    best_feas = None
    best_feas_vr = -np.inf
    best_infeas = None
    best_infeas_vr = -np.inf
    for assignment in itertools.product(range(m.n_actions), repeat=m.n_states):
        pol = CategoricalPolicy.deterministic(np.array(assignment), m.n_actions)
        vr = value_at_start(m, pol, "reward")
        vc = value_at_start(m, pol, "cost")
        if vc <= m.kappa + FEAS_TOL:
            if vr > best_feas_vr:
                best_feas, best_feas_vr = pol, vr
        elif vr > best_infeas_vr:
            best_infeas, best_infeas_vr = pol, vr
    if best_feas is None:
        raise InfeasibleError(f"no policy satisfies cost threshold {m.kappa}")
    if best_infeas is not None and best_infeas_vr > best_feas_vr:
        mixed = _boundary_mixture(m, best_feas, best_infeas)
        if value_at_start(m, mixed, "reward") > best_feas_vr:
            return mixed
    return best_feas


def _occupancy_lp(m: TabularCmdp) -> CategoricalPolicy:
    """Exact constrained optimum through the discounted occupancy LP."""
    from scipy.optimize import linprog

    S, A = m.n_states, m.n_actions
    n = S * A
    # flow conservation: sum_a mu(s',a) - gamma sum_{s,a} P(s'|s,a) mu(s,a) = (1-gamma) rho0(s')
    A_eq = np.zeros((S, n))
    for sp in range(S):
        for a in range(A):
            A_eq[sp, sp * A + a] += 1.0
        A_eq[sp, :] -= m.gamma * m.transitions[:, :, sp].reshape(-1)
    b_eq = (1.0 - m.gamma) * m.rho0
    c_vec = -m.rewards.reshape(-1)
    A_ub = m.costs.reshape(-1)[None, :]
    b_ub = np.array([m.kappa * (1.0 - m.gamma)])
    res = linprog(c_vec, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=(0, None), method="highs")
    if not res.success:
        raise InfeasibleError(f"occupancy LP failed: {res.message}")
    mu = res.x.reshape(S, A)
    mass = mu.sum(axis=1, keepdims=True)
    probs = np.where(mass > 1e-15, mu / np.maximum(mass, 1e-300), 1.0 / A)
    probs = probs / probs.sum(axis=1, keepdims=True)
    return CategoricalPolicy(probs)


def _min_cost_policy(m: TabularCmdp) -> CategoricalPolicy:
    _, pol = value_iteration(m, payoff=-m.costs)
    return pol


def constrained_optimal(m: TabularCmdp) -> CategoricalPolicy:
    """Reward-maximal policy subject to the start-state cost threshold.

    Small systems are solved by exhaustive enumeration of deterministic
    policies plus a boundary mixture between the best feasible and the
    reward-best infeasible one. Larger systems use the occupancy-measure LP
    (enumeration is exponential in the state count), refined back inside the
    feasible set if solver tolerance leaves the cost marginally above kappa.
    """
    if m.n_states > 30 or m.n_actions > 4:
        raise UsageError("constrained_optimal is limited to S <= 30, A <= 4")
    if np.isinf(m.kappa):
        _, pol = value_iteration(m)
        return pol
    if m.n_actions ** m.n_states <= _ENUM_LIMIT:
        pol = _enumerate_constrained(m)
    else:
        pol = _occupancy_lp(m)
        if value_at_start(m, pol, "cost") > m.kappa + FEAS_TOL:
            safe = _min_cost_policy(m)
            if value_at_start(m, safe, "cost") > m.kappa + FEAS_TOL:
                raise InfeasibleError(f"no policy satisfies cost threshold {m.kappa}")
            pol = _boundary_mixture(m, safe, pol)
    vc = value_at_start(m, pol, "cost")
    if vc > m.kappa + FEAS_TOL:
        raise InfeasibleError(f"constrained optimum infeasible: {vc} > {m.kappa}")
    return pol


# -- divergences ------------------------------------------------------------------


def _row_kl(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    if np.any(q[mask] <= 0):
        return np.inf
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def policy_divergences(m: TabularCmdp, p: CategoricalPolicy, q: CategoricalPolicy,
                       weighting: np.ndarray):
    """(expected KL, expected TV) of p vs q under a state weighting."""
    weighting = np.asarray(weighting, dtype=np.float64)
    kls = np.array([_row_kl(p.probs[s], q.probs[s]) for s in range(m.n_states)])
    tvs = 0.5 * np.abs(p.probs - q.probs).sum(axis=1)
    mask = weighting > 0
    if np.all(np.isfinite(kls[mask])):
        exp_kl = float(weighting[mask] @ kls[mask])
    else:
        exp_kl = np.inf
    exp_tv = float(weighting @ tvs)
    return exp_kl, exp_tv


def per_state_divergences(p: CategoricalPolicy, q: CategoricalPolicy):
    kls = np.array([_row_kl(p.probs[s], q.probs[s]) for s in range(p.probs.shape[0])])
    tvs = 0.5 * np.abs(p.probs - q.probs).sum(axis=1)
    return kls, tvs


# -- environment registry ----------------------------------------------------------


def make_env(env_id: str, overrides: dict | None = None):
    overrides = dict(overrides or {})
    if env_id == "point-hazard":
        fields = {f.name for f in dataclasses.fields(PointHazardSpec)}
        bad = set(overrides) - fields
        if bad:
            raise UsageError(f"unknown point-hazard spec fields: {sorted(bad)}")
        spec = PointHazardSpec(**{k: tuple(v) if isinstance(v, list) else v
                                  for k, v in overrides.items()})
        return PointHazard(spec)
    if env_id == "grid-hazard":
        horizon = int(overrides.pop("horizon", 500))
        allowed = {"size", "p_slip", "gamma", "kappa"}
        bad = set(overrides) - allowed
        if bad:
            raise UsageError(f"unknown grid-hazard spec fields: {sorted(bad)}")
        return TabularEnvAdapter(grid_hazard(**overrides), horizon=horizon)
    raise UsageError(f"unknown environment id {env_id!r}")
