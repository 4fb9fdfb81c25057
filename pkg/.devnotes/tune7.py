import time, json
import numpy as np
import lspc.data as data
from lspc import envs, trainer
from lspc.critics import cost_values
from lspc.evaltheory import evaluate
from lspc.policy import policy_fn
from lspc.data import MetricDef

env = envs.make_env("point-hazard")
data.BEHAVIOR_NOISE = 0.35
ds = data.collect(env, "mix:0.5", 50000, seed=7)
metric = MetricDef.from_dataset(ds, kappa=5.0)

for seed in (0, 1, 2):
    t0 = time.perf_counter()
    cfg = trainer.TrainConfig.desk(steps=16000, seed=seed, critic_warmup_steps=10000, tau=0.02)
    critics, b, _, _ = trainer.train(cfg, ds, env=env)
    line = {"seed": seed}
    s0 = np.array([[-0.8, -0.8]])
    for nm, a in (("straight", [[0.0297, 0.0297]]), ("detour", [[0.045, 0.0]])):
        qc, vc = cost_values(critics, s0, np.array(a))
        line[f"Ac_{nm}"] = round(float(qc[0] - vc[0]), 2)
    for pid in ("cvae", "lspc-s", "lspc-o"):
        rep = evaluate(policy_fn(b, pid), env, 20, metric, seed=1000 + seed, policy_id=pid)
        line[pid] = {"nr": round(rep.mean_norm_reward, 2), "nc": round(rep.mean_norm_cost, 2)}
    cfg0 = trainer.TrainConfig.desk(steps=16000, seed=seed, cost_temp=0.0, critic_warmup_steps=10000, tau=0.02)
    _, b0, _, _ = trainer.train(cfg0, ds, env=env)
    rep0 = evaluate(policy_fn(b0, "cvae"), env, 20, metric, seed=1000 + seed)
    line["cvae0_nc"] = round(rep0.mean_norm_cost, 2)
    line["secs"] = round(time.perf_counter() - t0)
    print(json.dumps(line), flush=True)
