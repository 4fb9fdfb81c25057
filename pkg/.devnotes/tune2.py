import time, json
import numpy as np
from lspc import data, envs, trainer
from lspc.evaltheory import evaluate
from lspc.policy import policy_fn
from lspc.data import MetricDef

env = envs.make_env("point-hazard")
ds = data.collect(env, "mix:0.5", 50000, seed=7)
metric = MetricDef.from_dataset(ds, kappa=5.0)
t_all = time.perf_counter()
for seed in (0, 1, 2):
    t0 = time.perf_counter()
    cfg0 = trainer.TrainConfig.desk(steps=10000, seed=seed, cost_temp=0.0, critic_warmup_steps=1000)
    _, b0, _, _ = trainer.train(cfg0, ds, env=env)
    rep0 = evaluate(policy_fn(b0, "cvae"), env, 20, metric, seed=1000 + seed)
    cfg = trainer.TrainConfig.desk(steps=10000, seed=seed, critic_warmup_steps=1000)
    _, b, _, _ = trainer.train(cfg, ds, env=env)
    line = {"seed": seed, "cvae0_nc": round(rep0.mean_norm_cost, 2)}
    for pid in ("lspc-s", "lspc-o"):
        rep = evaluate(policy_fn(b, pid), env, 20, metric, seed=1000 + seed, policy_id=pid)
        line[pid] = {"nr": round(rep.mean_norm_reward, 2), "nc": round(rep.mean_norm_cost, 2),
                     "len": round(float(np.mean([e["length"] for e in rep.episodes])), 0)}
    print(json.dumps(line), f"({time.perf_counter()-t0:.0f}s)", flush=True)
print(f"total {time.perf_counter()-t_all:.0f}s")
