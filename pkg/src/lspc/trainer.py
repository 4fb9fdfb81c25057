"""Training orchestration.

One iteration samples a single batch and applies, in order: reward value,
reward Qs, cost value, cost Qs, the weighted CVAE, the latent safety encoder,
then the four target soft updates. Policy steps never touch critic
parameters. All randomness flows from one root seed through named child
streams so adding a consumer cannot perturb the others, and generator states
are serialized into the checkpoint sidecar so a resumed run continues
bit-for-bit.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, NumericError, UsageError
from . import checkpoint as ckpt
from . import nn
from .critics import (CriticSet, check_expectile, cost_q_loss, cost_value_loss,
                      make_critics, reward_q_loss, reward_value_loss)
from .data import MetricDef, OfflineDataset, sample_batch
from .envs import make_env
from .policy import PolicyBundle, cvae_loss, encoder_loss, make_bundle

STREAMS = {"init": 0, "batch": 1, "cvae-noise": 2, "enc-noise": 3, "eval": 4}

NET_KEYS = ("q1", "q2", "q1_target", "q2_target", "v",
            "qc1", "qc2", "qc1_target", "qc2_target", "vc",
            "cvae_enc", "cvae_dec", "lat_enc")

OPT_KEYS = ("v", "q1", "q2", "vc", "qc1", "qc2", "cvae_enc", "cvae_dec", "lat_enc")

CKPT_FILE = "model.ckpt"
SIDECAR_FILE = "sidecar.json"


def named_stream(seed: int, name: str) -> np.random.Generator:
    """Independent child generator for one named consumer."""
    seq = np.random.SeedSequence(seed, spawn_key=(STREAMS[name],))
    return np.random.Generator(np.random.PCG64(seq))


@dataclass
class TrainConfig:
    steps: int = 5000
    batch_size: int = 1024
    gamma: float = 0.99
    tau: float = 0.005
    expectile: float = 0.7
    cost_temp: float = 2.0
    reward_temp: float = 2.0
    lr: float = 3e-4
    w_max: float = 200.0
    kl_coef: float = 0.5
    d_z: int = 32
    epsilon: float = 0.25
    seed: int = 0
    eval_every: int = 0
    env: str = "point-hazard"
    width: int = 64
    depth: int = 2
    critic_warmup_steps: int = 0
    critic_only: bool = False
    allow_symmetric_expectile: bool = False
    c_zero_thresh: float | None = None
    latent_sampler: str = "clip"

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1:
            raise UsageError("steps must be >= 0 and batch_size >= 1")
        for name in ("lr", "tau", "gamma"):
            if getattr(self, name) <= 0:
                raise UsageError(f"{name} must be positive")
        check_expectile(self.expectile, self.allow_symmetric_expectile)

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Desk-scale profile: small batch and latent space, width 64."""
        base = dict(batch_size=256, width=64, d_z=8)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise FormatError(f"unreadable config: {exc}") from exc
        if not isinstance(raw, dict):
            raise FormatError("config must be a flat JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise FormatError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for rec in self.records:
                f.write(json.dumps(rec, sort_keys=True) + "\n")


@dataclass
class TrainState:
    critics: CriticSet
    bundle: PolicyBundle
    adam: dict
    rngs: dict
    step: int = 0


def init_state(config: TrainConfig, state_dim: int, action_dim: int,
               action_low, action_high) -> TrainState:
    rng = named_stream(config.seed, "init")
    critics = make_critics(state_dim, action_dim, width=config.width, depth=config.depth,
                           gamma=config.gamma, expectile=config.expectile, tau=config.tau,
                           rng=rng, allow_symmetric=config.allow_symmetric_expectile,
                           action_low=action_low, action_high=action_high)
    bundle = make_bundle(state_dim, action_dim, d_z=config.d_z, width=config.width,
                         depth=config.depth, epsilon=config.epsilon,
                         cost_temp=config.cost_temp, reward_temp=config.reward_temp,
                         kl_coef=config.kl_coef, w_max=config.w_max,
                         action_low=action_low, action_high=action_high,
                         c_zero_thresh=config.c_zero_thresh,
                         latent_sampler=config.latent_sampler, rng=rng)
    nets = _net_map(critics, bundle)
    adam = {key: nn.AdamState(nets[key]) for key in OPT_KEYS}
    rngs = {name: named_stream(config.seed, name)
            for name in ("batch", "cvae-noise", "enc-noise")}
    return TrainState(critics=critics, bundle=bundle, adam=adam, rngs=rngs, step=0)


def _net_map(critics: CriticSet, bundle: PolicyBundle) -> dict:
    nets = critics.all_nets()
    nets.update(bundle.policy_nets())
    return nets


def train(config: TrainConfig, dataset: OfflineDataset, env=None,
          state: TrainState | None = None, trace: list | None = None,
          eval_fn=None):
    """Run config.steps total iterations (continuing from state if given).

    Returns (critics, bundle, log, state).
    """
    if dataset.n < 1:
        raise UsageError("dataset is empty")
    if env is None:
        env = make_env(config.env)
    if dataset.state_dim != env.state_dim or dataset.action_dim != env.action_dim:
        raise UsageError("dataset dimensions do not match the environment")
    if state is None:
        state = init_state(config, dataset.state_dim, dataset.action_dim,
                           env.action_low, env.action_high)
    cs, bundle = state.critics, state.bundle
    log = TrainLog()
    lr = config.lr
    while state.step < config.steps:
        step = state.step
        batch = sample_batch(dataset, config.batch_size, state.rngs["batch"])
        try:
            loss_v, g_v = reward_value_loss(cs, batch)
            nn.adam_step(state.adam["v"], cs.v, g_v, lr)
            _trace(trace, "v")
            loss_q, g_q1, g_q2 = reward_q_loss(cs, batch)
            nn.adam_step(state.adam["q1"], cs.q1, g_q1, lr)
            nn.adam_step(state.adam["q2"], cs.q2, g_q2, lr)
            _trace(trace, "q")
            loss_vc, g_vc = cost_value_loss(cs, batch)
            nn.adam_step(state.adam["vc"], cs.vc, g_vc, lr)
            _trace(trace, "vc")
            loss_qc, g_qc1, g_qc2 = cost_q_loss(cs, batch)
            nn.adam_step(state.adam["qc1"], cs.qc1, g_qc1, lr)
            nn.adam_step(state.adam["qc2"], cs.qc2, g_qc2, lr)
            _trace(trace, "qc")
            policy_active = (not config.critic_only) and step >= config.critic_warmup_steps
            loss_cvae = loss_enc = None
            w_cost = w_reward = None
            if policy_active:
                noise = state.rngs["cvae-noise"].standard_normal((batch.size, config.d_z))
                loss_cvae, g_enc, g_dec, w_cost = cvae_loss(bundle, cs, batch, noise)
                nn.adam_step(state.adam["cvae_enc"], bundle.cvae_enc, g_enc, lr)
                nn.adam_step(state.adam["cvae_dec"], bundle.cvae_dec, g_dec, lr)
                _trace(trace, "cvae")
                noise = state.rngs["enc-noise"].standard_normal((batch.size, config.d_z))
                loss_enc, g_lat, w_reward = encoder_loss(bundle, cs, batch, noise)
                nn.adam_step(state.adam["lat_enc"], bundle.lat_enc, g_lat, lr)
                _trace(trace, "enc")
        except NumericError as exc:
            raise NumericError(f"step {step}: {exc}") from exc
        cs.soft_update_targets()
        _trace(trace, "targets")
        state.step = step + 1
        if config.eval_every and state.step % config.eval_every == 0:
            rec = {"step": state.step, "loss_v": loss_v, "loss_q": loss_q,
                   "loss_vc": loss_vc, "loss_qc": loss_qc,
                   "loss_cvae": loss_cvae, "loss_enc": loss_enc,
                   "w_cost_mean": w_cost, "w_reward_mean": w_reward}
            if eval_fn is not None:
                rec["eval"] = eval_fn(cs, bundle)
            log.records.append(rec)
    return cs, bundle, log, state


def _trace(trace, name):
    if trace is not None:
        trace.append(name)


# -- checkpointing ------------------------------------------------------------------


def save_checkpoint(critics: CriticSet, bundle: PolicyBundle, out_dir,
                    adam: dict | None = None, rngs: dict | None = None,
                    step: int | None = None, train_config: TrainConfig | None = None,
                    metric: MetricDef | None = None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    nets = _net_map(critics, bundle)
    tensors: dict[str, np.ndarray] = {}
    for key in NET_KEYS:
        for tname, arr in nets[key].tensors():
            tensors[f"{key}.{tname}"] = arr
    if adam is not None:
        for key in OPT_KEYS:
            for tname, arr in adam[key].tensors():
                tensors[f"opt.{key}.{tname}"] = arr
    sidecar = {
        "scalars": {
            "epsilon": bundle.epsilon,
            "cost_temp": bundle.cost_temp,
            "reward_temp": bundle.reward_temp,
            "kl_coef": bundle.kl_coef,
            "w_max": bundle.w_max,
            "d_z": bundle.d_z,
            "c_zero_thresh": bundle.c_zero_thresh,
            "latent_sampler": bundle.latent_sampler,
        },
        "critic": {"gamma": critics.gamma, "expectile": critics.expectile,
                   "tau": critics.tau},
        "action_low": [float(x) for x in bundle.action_low],
        "action_high": [float(x) for x in bundle.action_high],
        "nets": {key: {"layer_sizes": nets[key].layer_sizes,
                       "activation": nets[key].activation,
                       "head": nets[key].head} for key in NET_KEYS},
        "step": step,
        "adam_t": {key: adam[key].t for key in OPT_KEYS} if adam is not None else None,
        "rng": {name: rngs[name].bit_generator.state for name in rngs} if rngs else None,
        "train_config": train_config.to_dict() if train_config else None,
        "metric": {"r_min": metric.r_min, "r_max": metric.r_max} if metric else None,
    }
    ckpt.write_tensors(os.path.join(out_dir, CKPT_FILE), tensors)
    with open(os.path.join(out_dir, SIDECAR_FILE), "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)


def load_checkpoint(ckpt_dir):
    """Rebuild (critics, bundle, meta) from a checkpoint directory.

    meta carries the sidecar plus, when the checkpoint was saved with
    optimizer and rng state, everything needed to resume bit-for-bit.
    """
    model_path = os.path.join(ckpt_dir, CKPT_FILE)
    sidecar_path = os.path.join(ckpt_dir, SIDECAR_FILE)
    if not os.path.exists(model_path) or not os.path.exists(sidecar_path):
        raise FormatError(f"checkpoint directory {ckpt_dir} is missing "
                          f"{CKPT_FILE} or {SIDECAR_FILE}")
    tensors = ckpt.read_tensors(model_path)
    try:
        with open(sidecar_path, "r", encoding="utf-8") as f:
            sidecar = json.load(f)
    except json.JSONDecodeError as exc:
        raise FormatError(f"unparseable sidecar: {exc}") from exc

    nets = {}
    for key in NET_KEYS:
        info = sidecar["nets"][key]
        net = nn.MlpNet(info["layer_sizes"], activation=info["activation"],
                        head=info["head"])
        for tname, _ in net.tensors():
            full = f"{key}.{tname}"
            if full not in tensors:
                raise FormatError(f"missing tensor {full}")
            net.set_tensor(tname, tensors[full])
        nets[key] = net
    crit = sidecar["critic"]
    critics = CriticSet(q1=nets["q1"], q2=nets["q2"], q1_target=nets["q1_target"],
                        q2_target=nets["q2_target"], v=nets["v"], qc1=nets["qc1"],
                        qc2=nets["qc2"], qc1_target=nets["qc1_target"],
                        qc2_target=nets["qc2_target"], vc=nets["vc"],
                        gamma=crit["gamma"], expectile=crit["expectile"], tau=crit["tau"],
                        action_low=np.asarray(sidecar["action_low"]),
                        action_high=np.asarray(sidecar["action_high"]))
    sc = sidecar["scalars"]
    bundle = PolicyBundle(cvae_enc=nets["cvae_enc"], cvae_dec=nets["cvae_dec"],
                          lat_enc=nets["lat_enc"], d_z=sc["d_z"], epsilon=sc["epsilon"],
                          cost_temp=sc["cost_temp"], reward_temp=sc["reward_temp"],
                          kl_coef=sc["kl_coef"], w_max=sc["w_max"],
                          action_low=np.asarray(sidecar["action_low"]),
                          action_high=np.asarray(sidecar["action_high"]),
                          c_zero_thresh=sc["c_zero_thresh"],
                          latent_sampler=sc["latent_sampler"])
    meta = {"sidecar": sidecar}
    if sidecar.get("adam_t") is not None:
        adam = {}
        for key in OPT_KEYS:
            st = nn.AdamState(nets[key])
            st.t = int(sidecar["adam_t"][key])
            for tname, _ in st.tensors():
                full = f"opt.{key}.{tname}"
                if full not in tensors:
                    raise FormatError(f"missing tensor {full}")
                st.set_tensor(tname, tensors[full])
            adam[key] = st
        meta["adam"] = adam
    if sidecar.get("rng"):
        rngs = {}
        for name, bg_state in sidecar["rng"].items():
            gen = np.random.Generator(np.random.PCG64())
            gen.bit_generator.state = bg_state
            rngs[name] = gen
        meta["rngs"] = rngs
    if sidecar.get("step") is not None:
        meta["step"] = int(sidecar["step"])
    if sidecar.get("train_config"):
        meta["train_config"] = TrainConfig(**sidecar["train_config"])
    if sidecar.get("metric"):
        meta["metric"] = sidecar["metric"]
    return critics, bundle, meta


def resume_state(ckpt_dir) -> TrainState:
    critics, bundle, meta = load_checkpoint(ckpt_dir)
    if "adam" not in meta or "rngs" not in meta or "step" not in meta:
        raise FormatError("checkpoint lacks optimizer/rng state; cannot resume")
    return TrainState(critics=critics, bundle=bundle, adam=meta["adam"],
                      rngs=meta["rngs"], step=meta["step"])
