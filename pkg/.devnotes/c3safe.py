import time
import numpy as np
from lspc.data import collect
from lspc.envs import CategoricalPolicy, TabularCmdp, make_env, policy_eval
from lspc.trainer import TrainConfig, train

env = make_env("grid-hazard")
m = env.cmdp
ds = collect(env, "safe", 50000, seed=33)

s_idx = np.argmax(ds.states, axis=1)
a_idx = np.array([env.nearest_action(a) for a in ds.actions])
ns_idx = np.argmax(ds.next_states, axis=1)
counts = np.zeros((25, 4, 25))
np.add.at(counts, (s_idx, a_idx, ns_idx), 1.0)
pair_n = counts.sum(axis=2)
P_emp = np.where(pair_n[:, :, None] > 0, counts / np.maximum(pair_n, 1)[:, :, None], m.transitions)
pol_emp = CategoricalPolicy(np.where(pair_n.sum(1, keepdims=True) > 0,
                                     pair_n / np.maximum(pair_n.sum(1, keepdims=True), 1), 0.25))
m_emp = TabularCmdp(25, 4, P_emp, m.rewards, m.costs, m.gamma, m.kappa, m.rho0,
                    m.terminal, m.action_embeddings)
q_emp = {}
for sig, h in (("reward", m.rewards), ("cost", m.costs)):
    v = policy_eval(m_emp, pol_emp, sig)
    q_emp[sig] = h + m.gamma * np.einsum("sat,t->sa", P_emp, v)
print("visited(>=10):", (pair_n >= 10).mean(), " q_c max:", q_emp["cost"].max().round(2),
      " q_r range:", q_emp["reward"].min().round(2), q_emp["reward"].max().round(2), flush=True)

def sup_err(cs):
    eye = np.eye(25, dtype=np.float64)
    sr = sc = 0.0
    for a in range(4):
        an = cs.normalize_actions(np.repeat(m.action_embeddings[a][None, :], 25, axis=0))
        x = np.concatenate([eye, an], axis=1)
        qr = np.minimum(cs.q1.forward(x)[:, 0], cs.q2.forward(x)[:, 0])
        qc = np.maximum(cs.qc1.forward(x)[:, 0], cs.qc2.forward(x)[:, 0])
        mask = pair_n[:, a] >= 10
        sr = max(sr, np.abs(qr - q_emp["reward"][:, a])[mask].max())
        sc = max(sc, np.abs(qc - q_emp["cost"][:, a])[mask].max())
    return sr, sc

for tau, lr in ((0.02, 5e-4), (0.05, 1e-3)):
    t0 = time.perf_counter()
    cfg = TrainConfig.desk(steps=20000, seed=0, critic_only=True, expectile=0.5,
                           allow_symmetric_expectile=True, env="grid-hazard", lr=lr, tau=tau)
    cs, _, _, _ = train(cfg, ds, env=env)
    sr, sc = sup_err(cs)
    print(f"tau={tau} lr={lr}: sup_r {sr:.4f} sup_c {sc:.4f} ({time.perf_counter()-t0:.0f}s)", flush=True)
