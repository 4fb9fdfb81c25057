"""Offline transition datasets: scripted collection, the LSPC-DS v1 binary
format, mini-batch sampling, and normalized reward/cost metrics.

Arrays are float32 little-endian in memory and on disk so file round trips
are bitwise. Episode boundaries are marked by the done flag on the last
transition of each episode (terminal or horizon truncation alike).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, UsageError
from .envs import PointHazard, TabularEnvAdapter, constrained_optimal

MAGIC = "LSPC-DS"
VERSION = 1
FIELDS = ["state", "action", "reward", "cost", "next_state", "done"]

F32 = np.dtype("<f4")
F64 = np.dtype("<f8")


@dataclass
class OfflineDataset:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    costs: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    episode_starts: list[int]

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[1]

    def validate(self) -> None:
        n = self.n
        if not (self.actions.shape[0] == self.rewards.shape[0] == self.costs.shape[0]
                == self.next_states.shape[0] == self.dones.shape[0] == n):
            raise FormatError("inconsistent array lengths")
        if np.any(self.costs < 0):
            raise FormatError("negative costs")
        starts = self.episode_starts
        if not starts or starts[0] != 0 or sorted(starts) != list(starts):
            raise FormatError("episode_starts must be sorted and begin with 0")
        if any(s >= n for s in starts):
            raise FormatError("episode start index out of range")
        ends = [s - 1 for s in starts[1:]] + [n - 1]
        done_idx = set(np.flatnonzero(self.dones > 0.5).tolist())
        if done_idx != set(ends):
            raise FormatError("dones must mark exactly the last transition of each episode")

    def episode_slices(self) -> list[tuple[int, int]]:
        starts = list(self.episode_starts) + [self.n]
        return [(starts[i], starts[i + 1]) for i in range(len(starts) - 1)]

    def episode_returns(self) -> np.ndarray:
        return np.array([float(self.rewards[a:b].sum()) for a, b in self.episode_slices()])

    def episode_costs(self) -> np.ndarray:
        return np.array([float(self.costs[a:b].sum()) for a, b in self.episode_slices()])

    def safe_fraction(self, kappa: float) -> float:
        """Share of episodes whose undiscounted cost stays within kappa."""
        ec = self.episode_costs()
        return float(np.mean(ec <= kappa))


@dataclass
class Batch:
    indices: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    costs: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    @property
    def size(self) -> int:
        return self.indices.size


def sample_batch(ds: OfflineDataset, batch_size: int, rng: np.random.Generator) -> Batch:
    """Uniform sampling with replacement."""
    if ds.n < 1:
        raise UsageError("cannot sample from an empty dataset")
    if batch_size < 1:
        raise UsageError("batch_size must be >= 1")
    idx = rng.integers(0, ds.n, size=batch_size)
    return Batch(indices=idx, states=ds.states[idx], actions=ds.actions[idx],
                 rewards=ds.rewards[idx], costs=ds.costs[idx],
                 next_states=ds.next_states[idx], dones=ds.dones[idx])


# -- metrics -------------------------------------------------------------------


@dataclass
class MetricDef:
    r_min: float
    r_max: float
    kappa: float
    sigma: float = 1e-8

    def __post_init__(self):
        if not self.r_max > self.r_min:
            raise UsageError("r_max must exceed r_min")

    @classmethod
    def from_dataset(cls, ds: OfflineDataset, kappa: float, sigma: float = 1e-8) -> "MetricDef":
        returns = ds.episode_returns()
        return cls(r_min=float(returns.min()), r_max=float(returns.max()),
                   kappa=kappa, sigma=sigma)


def normalized_reward(episode_return: float, m: MetricDef) -> float:
    return (episode_return - m.r_min) / (m.r_max - m.r_min)


def normalized_cost(episode_cost: float, m: MetricDef) -> float:
    return (episode_cost + m.sigma) / (m.kappa + m.sigma)


# -- scripted behaviors ---------------------------------------------------------


def _resample_polyline(points, spacing=0.02):
    points = [np.asarray(p, dtype=np.float64) for p in points]
    dense = [points[0]]
    for a, b in zip(points[:-1], points[1:]):
        seg = b - a
        length = np.linalg.norm(seg)
        n = max(1, int(np.ceil(length / spacing)))
        for k in range(1, n + 1):
            dense.append(a + seg * (k / n))
    return np.stack(dense)


def _path_tracker(env: PointHazard, path_points, step_len, noise,
                  lookahead=0.12, explore_prob=0.15, kick=0.1,
                  kick_min_hazard_dist=0.65):
    """Pure-pursuit tracking of a polyline: aim at a fixed-lookahead carrot on
    the path. The lookahead fixes the cross-track correction gain, so off-path
    states in the data always carry a restoring action; occasional bounded
    exploration kicks (never consecutively, never near the hazard) widen the
    recovery band the clone can learn from.
    """
    path = _resample_polyline(path_points)
    hazard = np.asarray(env.spec.hazard_center, dtype=np.float64)
    arclen = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(path, axis=0), axis=1))])

    def act(state, t, rng):
        state = np.asarray(state, dtype=np.float64)
        # monotone progress: nearest path point at or ahead of current progress
        window = (arclen >= act.progress - 1e-9) & (arclen <= act.progress + 6 * step_len)
        idxs = np.flatnonzero(window)
        if idxs.size == 0:
            idxs = np.array([len(path) - 1])
        d = np.linalg.norm(path[idxs] - state, axis=1)
        nearest = idxs[int(np.argmin(d))]
        act.progress = max(act.progress, float(arclen[nearest]))
        target_len = act.progress + lookahead
        carrot = path[min(int(np.searchsorted(arclen, target_len)), len(path) - 1)]
        delta = carrot - state
        dist = np.linalg.norm(delta)
        direction = delta / dist if dist > 1e-9 else np.zeros(2)
        kicked = False
        if noise > 0:
            far_from_hazard = np.linalg.norm(state - hazard) > kick_min_hazard_dist
            if (explore_prob > 0 and not act.last_kicked and far_from_hazard
                    and rng.uniform() < explore_prob):
                a = rng.uniform(-kick, kick, size=2)
                kicked = True
            else:
                speed = step_len * rng.uniform(1.0 - noise, 1.0 + noise)
                lateral = step_len * rng.uniform(-noise, noise, size=2)
                a = direction * speed + lateral
        else:
            a = direction * step_len
        act.last_kicked = kicked
        return np.clip(a, env.action_low, env.action_high)

    def reset():
        act.progress = 0.0
        act.last_kicked = False

    act.progress = 0.0
    act.last_kicked = False
    act.reset = reset
    return act


STRAIGHT_STEP = 0.042
DETOUR_STEP = 0.045
BEHAVIOR_NOISE = 0.5
AVOID_MARGIN = 0.15


def _arc_waypoints(env: PointHazard) -> list[np.ndarray]:
    """Detour route: follow the direct corridor to the avoidance circle, skirt
    the hazard along it, then head for the goal. Sharing the corridor with the
    greedy behavior puts the two action modes in conflict exactly where the
    safety decision is made."""
    center = np.asarray(env.spec.hazard_center, dtype=np.float64)
    start = np.asarray(env.spec.start, dtype=np.float64)
    goal = np.asarray(env.spec.goal, dtype=np.float64)
    radius = env.spec.hazard_radius + AVOID_MARGIN
    a0 = np.arctan2(*(start - center)[::-1])
    a1 = np.arctan2(*(goal - center)[::-1])
    while a1 <= a0:
        a1 += 2.0 * np.pi
    n_arc = max(2, int(np.ceil((a1 - a0) / np.deg2rad(22.5))) + 1)
    angles = np.linspace(a0, a1, n_arc)
    pts = [center + radius * np.array([np.cos(t), np.sin(t)]) for t in angles]
    return pts + [goal]


def _point_behavior(env: PointHazard, name: str, noise: float):
    start = np.asarray(env.spec.start, dtype=np.float64)
    goal = np.asarray(env.spec.goal, dtype=np.float64)
    if name == "straight":
        return _path_tracker(env, [start, goal], STRAIGHT_STEP, noise)
    if name == "detour":
        return _path_tracker(env, [start] + _arc_waypoints(env), DETOUR_STEP, noise)
    raise UsageError(f"unknown point-hazard behavior {name!r}")


def _grid_behavior(env: TabularEnvAdapter, name: str, rng: np.random.Generator):
    m = env.cmdp
    if name == "uniform":
        def act(state, t, r):
            a = int(r.integers(0, m.n_actions))
            return m.action_embeddings[a]
        act.reset = lambda: None
        return act
    if name == "safe":
        pol = constrained_optimal(m)

        def act(state, t, r):
            s = int(np.argmax(state))
            if r.uniform() < 0.1:
                a = int(r.integers(0, m.n_actions))
            else:
                a = int(r.choice(m.n_actions, p=pol.probs[s]))
            return m.action_embeddings[a]
        act.reset = lambda: None
        return act
    raise UsageError(f"unknown grid behavior {name!r}")


def make_behavior(env, spec: str, rng: np.random.Generator):
    """Resolve a behavior spec string into (episode factory, mix weight).

    Point-hazard: straight | detour | straight-noisy | detour-noisy | mix:<w_safe>.
    Grid-hazard: uniform | safe | grid-mix:<w_safe>.
    """
    if isinstance(env, PointHazard):
        if spec.startswith("mix:"):
            w_safe = float(spec.split(":", 1)[1])
            if not 0.0 <= w_safe <= 1.0:
                raise UsageError("mixture weight must lie in [0, 1]")
            safe = _point_behavior(env, "detour", BEHAVIOR_NOISE)
            unsafe = _point_behavior(env, "straight", BEHAVIOR_NOISE)

            def pick(r):
                return safe if r.uniform() < w_safe else unsafe
            return pick
        base, _, variant = spec.partition("-")
        noise = BEHAVIOR_NOISE if variant == "noisy" else 0.0
        if variant not in ("", "noisy"):
            raise UsageError(f"unknown behavior {spec!r}")
        beh = _point_behavior(env, base, noise)
        return lambda r: beh
    if isinstance(env, TabularEnvAdapter):
        if spec.startswith("grid-mix:"):
            w_safe = float(spec.split(":", 1)[1])
            safe = _grid_behavior(env, "safe", rng)
            unsafe = _grid_behavior(env, "uniform", rng)

            def pick(r):
                return safe if r.uniform() < w_safe else unsafe
            return pick
        beh = _grid_behavior(env, spec, rng)
        return lambda r: beh
    raise UsageError(f"no behaviors registered for {type(env).__name__}")


def collect(env, behavior: str, n_transitions: int, seed: int) -> OfflineDataset:
    """Roll scripted episodes until at least n_transitions are stored.

    The final episode is always kept whole so done flags line up with
    episode boundaries; the count may therefore exceed n_transitions.
    """
    if n_transitions <= 0:
        raise UsageError("n_transitions must be positive")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    pick = make_behavior(env, behavior, rng)
    states, actions, rewards, costs, next_states, dones = [], [], [], [], [], []
    episode_starts = []
    total = 0
    while total < n_transitions:
        episode_starts.append(total)
        beh = pick(rng)
        beh.reset()
        s = env.reset(rng)
        for t in range(env.horizon):
            a = beh(s, t, rng)
            step = env.step(s, a, rng)
            last = step.done or t == env.horizon - 1
            states.append(np.asarray(s, dtype=F32))
            actions.append(np.asarray(a, dtype=F32))
            rewards.append(step.reward)
            costs.append(step.cost)
            next_states.append(np.asarray(step.next_state, dtype=F32))
            dones.append(1.0 if last else 0.0)
            total += 1
            s = step.next_state
            if step.done:
                break
    ds = OfflineDataset(
        states=np.stack(states).astype(F32),
        actions=np.stack(actions).astype(F32),
        rewards=np.asarray(rewards, dtype=F32),
        costs=np.asarray(costs, dtype=F32),
        next_states=np.stack(next_states).astype(F32),
        dones=np.asarray(dones, dtype=F32),
        episode_starts=episode_starts,
    )
    ds.validate()
    return ds


# -- file format -------------------------------------------------------------------


def save(ds: OfflineDataset, path) -> None:
    ds.validate()
    header = {
        "magic": MAGIC,
        "version": VERSION,
        "n": int(ds.n),
        "state_dim": int(ds.state_dim),
        "action_dim": int(ds.action_dim),
        "fields": FIELDS,
        "dtype": "f32le",
        "episode_starts": [int(s) for s in ds.episode_starts],
    }
    with open(path, "wb") as f:
        f.write((json.dumps(header, separators=(",", ":")) + "\n").encode("utf-8"))
        for arr in (ds.states, ds.actions, ds.rewards, ds.costs, ds.next_states, ds.dones):
            f.write(np.ascontiguousarray(arr, dtype=F32).tobytes())


def load(path) -> OfflineDataset:
    with open(path, "rb") as f:
        raw = f.read()
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError("missing header line")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unparseable header: {exc}") from exc
    if header.get("magic") != MAGIC:
        raise FormatError(f"bad magic {header.get('magic')!r}")
    if header.get("version") != VERSION:
        raise FormatError(f"unsupported version {header.get('version')!r}")
    n = int(header["n"])
    s_dim = int(header["state_dim"])
    a_dim = int(header["action_dim"])
    dtype_tag = header.get("dtype", "f32le")
    if dtype_tag == "f32le":
        dt = F32
    elif dtype_tag == "f64le":
        dt = F64
        warnings.warn("LSPC-DS blob is float64; down-converting to float32")
    else:
        raise FormatError(f"unsupported dtype {dtype_tag!r}")
    blob = raw[nl + 1:]
    n_values = n * (2 * s_dim + a_dim + 3)
    expected = n_values * dt.itemsize
    if len(blob) < expected:
        raise FormatError(f"truncated blob: {len(blob)} bytes, expected {expected}")
    if len(blob) > expected:
        raise FormatError(f"length mismatch: {len(blob)} bytes, expected {expected}")
    flat = np.frombuffer(blob, dtype=dt)
    sizes = [n * s_dim, n * a_dim, n, n, n * s_dim, n]
    offsets = np.cumsum([0] + sizes)
    parts = [flat[offsets[i]:offsets[i + 1]] for i in range(6)]
    ds = OfflineDataset(
        states=parts[0].reshape(n, s_dim).astype(F32),
        actions=parts[1].reshape(n, a_dim).astype(F32),
        rewards=parts[2].astype(F32),
        costs=parts[3].astype(F32),
        next_states=parts[4].reshape(n, s_dim).astype(F32),
        dones=parts[5].astype(F32),
        episode_starts=[int(s) for s in header["episode_starts"]],
    )
    ds.validate()
    return ds
