import time, json, sys
import numpy as np
from lspc import data, envs, trainer
from lspc.evaltheory import evaluate, sweep_epsilon
from lspc.policy import policy_fn
from lspc.data import MetricDef

env = envs.make_env("point-hazard")
ds = data.collect(env, "mix:0.5", 50000, seed=7)
metric = MetricDef.from_dataset(ds, kappa=5.0)

def criterion4(tag, mk_cfg):
    t0 = time.perf_counter()
    out = {"tag": tag, "seeds": {}}
    for seed in (0, 1, 2):
        _, b0, _, _ = trainer.train(mk_cfg(seed, cost_temp=0.0), ds, env=env)
        rep0 = evaluate(policy_fn(b0, "cvae"), env, 20, metric, seed=1000 + seed)
        critics, b, _, _ = trainer.train(mk_cfg(seed), ds, env=env)
        row = {"cvae0_nc": round(rep0.mean_norm_cost, 2)}
        for pid in ("lspc-s", "lspc-o"):
            rep = evaluate(policy_fn(b, pid), env, 20, metric, seed=1000 + seed, policy_id=pid)
            row[pid] = [round(rep.mean_norm_reward, 2), round(rep.mean_norm_cost, 2)]
        out["seeds"][seed] = row
    out["c4_secs"] = round(time.perf_counter() - t0)
    print(json.dumps(out), flush=True)
    return out

def sweep(tag, cfg):
    t0 = time.perf_counter()
    table = sweep_epsilon(cfg, ds, [0.1, 0.25, 0.6, 1.0], seeds=[0, 1, 2], env=env, kappa=5.0)
    pts = [(r["epsilon"], r["seed"], round(r["mean_cost"], 2)) for r in table["rows"] if r["policy"] == "lspc-o"]
    print(json.dumps({"tag": tag, "spearman": round(table["spearman_eps_cost"], 3),
                      "points": pts, "sweep_secs": round(time.perf_counter() - t0)}), flush=True)

r1 = lambda seed, **ov: trainer.TrainConfig.desk(steps=8000, seed=seed, critic_warmup_steps=1000, **ov)
criterion4("R1:tau.005-8k", r1)
sweep("R1", r1(0))

r2 = lambda seed, **ov: trainer.TrainConfig.desk(steps=16000, seed=seed, critic_warmup_steps=8000,
                                                 tau=0.02, depth=3, **ov)
criterion4("R2:tau.02-16k-d3", r2)
sweep("R2", r2(0))
