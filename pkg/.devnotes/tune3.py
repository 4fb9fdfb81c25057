import time, json
import numpy as np
from lspc import data, envs, trainer
from lspc.evaltheory import evaluate
from lspc.policy import policy_fn, decode_mean
from lspc.data import MetricDef

env = envs.make_env("point-hazard")
ds = data.collect(env, "mix:0.5", 50000, seed=7)
metric = MetricDef.from_dataset(ds, kappa=5.0)
for steps in (5000, 8000):
    print(f"=== steps={steps}", flush=True)
    for seed in (0, 1, 2):
        t0 = time.perf_counter()
        cfg0 = trainer.TrainConfig.desk(steps=steps, seed=seed, cost_temp=0.0, critic_warmup_steps=1000)
        _, b0, _, _ = trainer.train(cfg0, ds, env=env)
        rep0 = evaluate(policy_fn(b0, "cvae"), env, 20, metric, seed=1000 + seed)
        cfg = trainer.TrainConfig.desk(steps=steps, seed=seed, critic_warmup_steps=1000)
        _, b, _, _ = trainer.train(cfg, ds, env=env)
        line = {"seed": seed, "cvae0_nc": round(rep0.mean_norm_cost, 2)}
        for pid in ("lspc-s", "lspc-o"):
            rep = evaluate(policy_fn(b, pid), env, 20, metric, seed=1000 + seed, policy_id=pid)
            line[pid] = {"nr": round(rep.mean_norm_reward, 2), "nc": round(rep.mean_norm_cost, 2),
                         "len": round(float(np.mean([e["length"] for e in rep.episodes])), 0)}
        # z responsiveness at the start state
        s = np.array([-0.8, -0.8])
        zs = np.clip(np.random.default_rng(1).standard_normal((200, b.d_z)), -0.25, 0.25)
        acts = decode_mean(b, np.repeat(s[None, :], 200, axis=0), zs)
        line["z_spread"] = [round(float(v), 4) for v in acts.std(axis=0)]
        print(json.dumps(line), f"({time.perf_counter()-t0:.0f}s)", flush=True)
