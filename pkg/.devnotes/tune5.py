import time, json
import numpy as np
import lspc.data as data
from lspc import envs, trainer
from lspc.critics import cost_values
from lspc.evaltheory import evaluate
from lspc.policy import policy_fn, decode_mean
from lspc.data import MetricDef

env = envs.make_env("point-hazard")
data.BEHAVIOR_NOISE = 0.35
ds = data.collect(env, "mix:0.5", 50000, seed=7)
metric = MetricDef.from_dataset(ds, kappa=5.0)

def probe(tag, seed, **over):
    t0 = time.perf_counter()
    cfg = trainer.TrainConfig.desk(seed=seed, critic_warmup_steps=1000, **over)
    critics, b, _, _ = trainer.train(cfg, ds, env=env)
    line = {"tag": tag, "seed": seed}
    # weight discrimination at the start/branch state
    s0 = np.array([[-0.8, -0.8]])
    a_straight = np.array([[0.0297, 0.0297]])
    a_detour = np.array([[0.045, 0.0]])
    for name, a in (("straight", a_straight), ("detour", a_detour)):
        qc, vc = cost_values(critics, s0, a)
        line[f"Ac_{name}"] = round(float(qc[0] - vc[0]), 2)
    # decoder sigma on data
    idx = np.random.default_rng(0).integers(0, ds.n, 512)
    a_norm = b.normalize_actions(ds.actions[idx])
    enc = b.cvae_enc.forward(np.concatenate([ds.states[idx], a_norm], 1).astype(np.float32))
    import lspc.nn as nn
    z = nn.gaussian_sample(enc, np.zeros((512, b.d_z), dtype=np.float32))
    dec = b.cvae_dec.forward(np.concatenate([ds.states[idx], z], 1).astype(np.float32))
    line["sigma_dec_med"] = round(float(np.median(np.exp(dec.log_std))), 3)
    # z spread at branch and circle entry
    for nm, pt in (("branch", [-0.8, -0.8]), ("entry", [-0.45, -0.45])):
        zs = np.clip(np.random.default_rng(1).standard_normal((300, b.d_z)), -0.25, 0.25)
        acts = decode_mean(b, np.repeat(np.array([pt]), 300, axis=0), zs)
        line[f"zspread_{nm}"] = round(float(acts.std(axis=0).max()), 4)
    for pid in ("lspc-s", "lspc-o"):
        rep = evaluate(policy_fn(b, pid), env, 20, metric, seed=1000 + seed, policy_id=pid)
        line[pid] = {"nr": round(rep.mean_norm_reward, 2), "nc": round(rep.mean_norm_cost, 2)}
    line["secs"] = round(time.perf_counter() - t0)
    print(json.dumps(line), flush=True)

for seed in (0, 1, 2):
    probe("D:tau.02-15k", seed, steps=15000, tau=0.02)
for seed in (0, 1, 2):
    probe("E:tau.02-15k-kl.25", seed, steps=15000, tau=0.02, kl_coef=0.25)
