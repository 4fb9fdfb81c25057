import time, json
import numpy as np
import lspc.data as data
from lspc import envs, trainer
from lspc.evaltheory import evaluate
from lspc.policy import policy_fn, decode_mean
from lspc.data import MetricDef

env = envs.make_env("point-hazard")
data.BEHAVIOR_NOISE = 0.35
ds = data.collect(env, "mix:0.5", 50000, seed=7)
metric = MetricDef.from_dataset(ds, kappa=5.0)

# rollout quality vs training length with the smooth head, tau=0.02
for seed in (0, 1, 2):
    for steps in (4000, 6000, 9000, 13000):
        t0 = time.perf_counter()
        cfg = trainer.TrainConfig.desk(steps=steps, seed=seed, critic_warmup_steps=1000, tau=0.02)
        critics, b, _, _ = trainer.train(cfg, ds, env=env)
        line = {"seed": seed, "steps": steps}
        for pid in ("lspc-s", "lspc-o"):
            rep = evaluate(policy_fn(b, pid), env, 20, metric, seed=1000 + seed, policy_id=pid)
            line[pid] = {"nr": round(rep.mean_norm_reward, 2), "nc": round(rep.mean_norm_cost, 2)}
        idx = np.random.default_rng(0).integers(0, ds.n, 512)
        a_norm = b.normalize_actions(ds.actions[idx]).astype(np.float32)
        x = np.concatenate([ds.states[idx].astype(np.float32), a_norm], 1)
        enc = b.cvae_enc.forward(x)
        dec = b.cvae_dec.forward(np.concatenate([ds.states[idx].astype(np.float32), enc.mean], 1))
        line["sig_dec"] = round(float(np.median(np.exp(dec.log_std))), 3)
        zs = np.clip(np.random.default_rng(1).standard_normal((300, b.d_z)), -0.25, 0.25)
        acts = decode_mean(b, np.repeat([[-0.45, -0.45]], 300, axis=0), zs)
        line["zspread"] = round(float(acts.std(axis=0).max()), 4)
        line["secs"] = round(time.perf_counter() - t0)
        print(json.dumps(line), flush=True)
