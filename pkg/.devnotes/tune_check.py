import time, json
import numpy as np
from lspc import data, envs, trainer
from lspc.evaltheory import evaluate, sweep_epsilon, spearman
from lspc.policy import policy_fn
from lspc.data import MetricDef

env = envs.make_env("point-hazard")
ds = data.collect(env, "mix:0.5", 40000, seed=7)
metric = MetricDef.from_dataset(ds, kappa=5.0)
out = {"criterion4": [], "sweep": None}
t0 = time.perf_counter()
for seed in (0, 1, 2):
    row = {"seed": seed}
    cfg0 = trainer.TrainConfig.desk(steps=5000, seed=seed, cost_temp=0.0)
    _, b0, _, _ = trainer.train(cfg0, ds, env=env)
    rep = evaluate(policy_fn(b0, "cvae"), env, 20, metric, seed=1000 + seed)
    row["cvae0_nc"] = rep.mean_norm_cost
    cfg = trainer.TrainConfig.desk(steps=5000, seed=seed)
    _, b, _, _ = trainer.train(cfg, ds, env=env)
    for pid in ("lspc-s", "lspc-o"):
        rep = evaluate(policy_fn(b, pid), env, 20, metric, seed=1000 + seed)
        row[pid] = {"nr": rep.mean_norm_reward, "nc": rep.mean_norm_cost, "c": rep.mean_cost}
    out["criterion4"].append(row)
    print("criterion4", json.dumps(row), flush=True)
print(f"c4 elapsed {time.perf_counter()-t0:.0f}s", flush=True)

t0 = time.perf_counter()
cfg = trainer.TrainConfig.desk(steps=5000)
table = sweep_epsilon(cfg, ds, [0.1, 0.25, 0.6, 1.0], seeds=[0, 1, 2], env=env, kappa=5.0)
out["sweep"] = table
print(f"sweep elapsed {time.perf_counter()-t0:.0f}s spearman={table['spearman_eps_cost']:.3f}", flush=True)
for r in table["rows"]:
    if r["policy"] == "lspc-o":
        print(f"  eps={r['epsilon']} seed={r['seed']} cost={r['mean_cost']:.2f} nr={r['mean_norm_reward']:.2f}", flush=True)
with open("/root/pkg/.devnotes/tune_check.json", "w") as f:
    json.dump(out, f, indent=1)
