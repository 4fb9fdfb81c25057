import time, json
import numpy as np
import lspc.data as data
from lspc import envs, trainer
from lspc.evaltheory import evaluate
from lspc.policy import policy_fn, decode_mean
from lspc.data import MetricDef

env = envs.make_env("point-hazard")

def run(tag, noise, n, seed, **cfg_over):
    data.BEHAVIOR_NOISE = noise
    ds = data.collect(env, "mix:0.5", n, seed=7)
    metric = MetricDef.from_dataset(ds, kappa=5.0)
    t0 = time.perf_counter()
    cfg = trainer.TrainConfig.desk(seed=seed, critic_warmup_steps=1000, **cfg_over)
    _, b, _, _ = trainer.train(cfg, ds, env=env)
    line = {"tag": tag, "seed": seed}
    for pid in ("lspc-s", "lspc-o"):
        rep = evaluate(policy_fn(b, pid), env, 20, metric, seed=1000 + seed, policy_id=pid)
        line[pid] = {"nr": round(rep.mean_norm_reward, 2), "nc": round(rep.mean_norm_cost, 2)}
    # z responsiveness near the branch (circle entry region)
    s = np.array([-0.45, -0.45])
    zs = np.clip(np.random.default_rng(1).standard_normal((300, b.d_z)), -0.25, 0.25)
    acts = decode_mean(b, np.repeat(s[None, :], 300, axis=0), zs)
    line["z_spread"] = round(float(acts.std(axis=0).max()), 4)
    # prior-mode (z=0) rollout: does the weighted clone reach the goal?
    rr = np.random.default_rng(5)
    st = env.reset(np.random.default_rng(42)); reached = False; ret = 0.0
    for t in range(100):
        a = decode_mean(b, st[None, :], np.zeros((1, b.d_z)))[0]
        step = env.step(st, a, rr); ret += step.reward; st = step.next_state
        if step.done: reached = True; break
    line["z0_goal"] = reached; line["z0_ret"] = round(ret, 0)
    line["secs"] = round(time.perf_counter() - t0)
    print(json.dumps(line), flush=True)

for seed in (0, 1, 2):
    run("C:n.35-8k", 0.35, 50000, seed, steps=8000)
for seed in (0, 1, 2):
    run("B:n.5-8k-kl.1", 0.5, 50000, seed, steps=8000, kl_coef=0.1)
for seed in (0, 1, 2):
    run("A:n.5-20k", 0.5, 50000, seed, steps=20000)
