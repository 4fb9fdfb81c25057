import json

import numpy as np
import pytest

from lspc import checkpoint as ckpt
from lspc.data import MetricDef, collect
from lspc.envs import make_env
from lspc.errors import FormatError, NumericError, UsageError
from lspc.trainer import (NET_KEYS, TrainConfig, init_state, load_checkpoint,
                          named_stream, resume_state, save_checkpoint, train)


@pytest.fixture(scope="module")
def point_env():
    return make_env("point-hazard")


@pytest.fixture(scope="module")
def tiny_ds(point_env):
    return collect(point_env, "mix:0.5", 2500, seed=17)


def _tiny_cfg(**over):
    base = dict(steps=25, batch_size=32, width=16, d_z=4, seed=0)
    base.update(over)
    return TrainConfig(**base)


def _all_tensors(critics, bundle):
    nets = critics.all_nets()
    nets.update(bundle.policy_nets())
    return {f"{key}.{name}": arr for key, net in nets.items()
            for name, arr in net.tensors()}


# -- config --------------------------------------------------------------------


def test_config_defaults_match_common_hyperparameters():
    cfg = TrainConfig()
    assert cfg.batch_size == 1024
    assert cfg.gamma == 0.99
    assert cfg.tau == 0.005
    assert cfg.expectile == 0.7
    assert cfg.cost_temp == 2.0 and cfg.reward_temp == 2.0
    assert cfg.lr == 3e-4
    assert cfg.w_max == 200.0
    assert cfg.kl_coef == 0.5
    assert cfg.d_z == 32
    assert cfg.epsilon == 0.25


def test_desk_profile_overrides():
    cfg = TrainConfig.desk()
    assert cfg.batch_size == 256 and cfg.width == 64 and cfg.d_z == 8


def test_config_validation():
    with pytest.raises(UsageError):
        TrainConfig(expectile=0.5)
    TrainConfig(expectile=0.5, allow_symmetric_expectile=True)
    with pytest.raises(UsageError):
        TrainConfig(tau=0.0)
    with pytest.raises(UsageError):
        TrainConfig(steps=-1)


def test_config_from_json_rejects_unknown_keys(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"steps": 10, "bogus": 1}))
    with pytest.raises(FormatError, match="bogus"):
        TrainConfig.from_json(p)
    p.write_text("not json")
    with pytest.raises(FormatError):
        TrainConfig.from_json(p)
    p.write_text(json.dumps({"steps": 10, "batch_size": 64}))
    assert TrainConfig.from_json(p).steps == 10


def test_named_streams_are_independent():
    a = named_stream(7, "batch").standard_normal(4)
    b = named_stream(7, "cvae-noise").standard_normal(4)
    assert not np.allclose(a, b)
    a2 = named_stream(7, "batch").standard_normal(4)
    np.testing.assert_array_equal(a, a2)


# -- training loop ------------------------------------------------------------------


def test_train_zero_steps_returns_initialized(tiny_ds, point_env):
    cfg = _tiny_cfg(steps=0)
    critics, bundle, log, state = train(cfg, tiny_ds, env=point_env)
    assert state.step == 0
    assert log.records == []
    ref = init_state(cfg, 2, 2, point_env.action_low, point_env.action_high)
    for (a, b) in zip(_all_tensors(critics, bundle).values(),
                      _all_tensors(ref.critics, ref.bundle).values()):
        np.testing.assert_array_equal(a, b)


def test_train_deterministic_bitwise(tiny_ds, point_env):
    runs = []
    for _ in range(2):
        critics, bundle, _, _ = train(_tiny_cfg(), tiny_ds, env=point_env)
        runs.append(_all_tensors(critics, bundle))
    for name in runs[0]:
        np.testing.assert_array_equal(runs[0][name], runs[1][name])


def test_train_update_order_trace(tiny_ds, point_env):
    trace = []
    train(_tiny_cfg(steps=2), tiny_ds, env=point_env, trace=trace)
    per_iter = ["v", "q", "vc", "qc", "cvae", "enc", "targets"]
    assert trace == per_iter * 2


def test_policy_steps_do_not_touch_critics(tiny_ds, point_env):
    with_policy, _, _, _ = train(_tiny_cfg(steps=30), tiny_ds, env=point_env)
    critic_only, _, _, _ = train(_tiny_cfg(steps=30, critic_only=True),
                                 tiny_ds, env=point_env)
    for (name, a), (_, b) in zip(with_policy.all_nets()["q1"].tensors(),
                                 critic_only.all_nets()["q1"].tensors()):
        np.testing.assert_array_equal(a, b)
    for key in ("v", "q2", "vc", "qc1", "qc2", "q1_target", "qc2_target"):
        for (_, a), (_, b) in zip(with_policy.all_nets()[key].tensors(),
                                  critic_only.all_nets()[key].tensors()):
            np.testing.assert_array_equal(a, b)


def test_train_warmup_skips_policy_updates(tiny_ds, point_env):
    trace = []
    train(_tiny_cfg(steps=3, critic_warmup_steps=2), tiny_ds, env=point_env,
          trace=trace)
    assert trace == (["v", "q", "vc", "qc", "targets"] * 2
                     + ["v", "q", "vc", "qc", "cvae", "enc", "targets"])


def test_train_aborts_on_nonfinite_with_step_and_loss(tiny_ds, point_env):
    poisoned = collect(point_env, "mix:0.5", 600, seed=17)
    poisoned.rewards = poisoned.rewards.copy()
    poisoned.rewards[:] = np.float32(1e30)
    with pytest.raises(NumericError, match=r"step \d+: non-finite reward"):
        train(_tiny_cfg(steps=5), poisoned, env=point_env)


def test_train_rejects_dim_mismatch(tiny_ds):
    grid = make_env("grid-hazard")
    with pytest.raises(UsageError):
        train(_tiny_cfg(), tiny_ds, env=grid)


def test_train_logs_at_interval(tiny_ds, point_env):
    _, _, log, _ = train(_tiny_cfg(steps=20, eval_every=10), tiny_ds, env=point_env)
    assert [r["step"] for r in log.records] == [10, 20]
    for rec in log.records:
        for key in ("loss_v", "loss_q", "loss_vc", "loss_qc", "loss_cvae", "loss_enc"):
            assert np.isfinite(rec[key])


# -- checkpointing -------------------------------------------------------------------


def test_checkpoint_roundtrip_bitwise(tiny_ds, point_env, tmp_path):
    critics, bundle, _, state = train(_tiny_cfg(), tiny_ds, env=point_env)
    out = tmp_path / "ckpt"
    metric = MetricDef.from_dataset(tiny_ds, kappa=5.0)
    save_checkpoint(critics, bundle, out, adam=state.adam, rngs=state.rngs,
                    step=state.step, train_config=_tiny_cfg(), metric=metric)
    c2, b2, meta = load_checkpoint(out)
    before = _all_tensors(critics, bundle)
    after = _all_tensors(c2, b2)
    for name in before:
        np.testing.assert_array_equal(before[name], after[name])
    assert meta["step"] == 25
    assert meta["metric"]["r_min"] == metric.r_min
    # a second save of the loaded objects produces identical bytes
    out2 = tmp_path / "ckpt2"
    save_checkpoint(c2, b2, out2, adam=meta["adam"], rngs=meta["rngs"],
                    step=meta["step"], train_config=meta["train_config"],
                    metric=metric)
    assert (out / "model.ckpt").read_bytes() == (out2 / "model.ckpt").read_bytes()


def test_checkpoint_missing_tensor_error(tiny_ds, point_env, tmp_path):
    critics, bundle, _, state = train(_tiny_cfg(steps=2), tiny_ds, env=point_env)
    out = tmp_path / "ckpt"
    save_checkpoint(critics, bundle, out)
    tensors = ckpt.read_tensors(out / "model.ckpt")
    del tensors["q1.L0.w"]
    ckpt.write_tensors(out / "model.ckpt", tensors)
    with pytest.raises(FormatError, match="missing tensor q1.L0.w"):
        load_checkpoint(out)


def test_checkpoint_contains_all_required_names(tiny_ds, point_env, tmp_path):
    critics, bundle, _, _ = train(_tiny_cfg(steps=1), tiny_ds, env=point_env)
    out = tmp_path / "ckpt"
    save_checkpoint(critics, bundle, out)
    tensors = ckpt.read_tensors(out / "model.ckpt")
    for key in NET_KEYS:
        assert f"{key}.L0.w" in tensors
        assert f"{key}.L0.b" in tensors


def test_checkpoint_manifest_errors(tmp_path):
    p = tmp_path / "m.ckpt"
    p.write_bytes(b'{"magic":"NOPE","version":1,"tensors":[],"dtype":"f32le"}\n')
    with pytest.raises(FormatError, match="magic"):
        ckpt.read_tensors(p)
    p.write_bytes(b'{"magic":"LSPC-CKPT","version":2,"tensors":[],"dtype":"f32le"}\n')
    with pytest.raises(FormatError, match="version"):
        ckpt.read_tensors(p)
    manifest = {"magic": "LSPC-CKPT", "version": 1, "dtype": "f32le",
                "tensors": [{"name": "w", "shape": [2, 2], "offset": 0, "len": 16}]}
    p.write_bytes((json.dumps(manifest) + "\n").encode() + b"\x00" * 8)
    with pytest.raises(FormatError, match="truncated"):
        ckpt.read_tensors(p)
    p.write_bytes((json.dumps(manifest) + "\n").encode() + b"\x00" * 24)
    with pytest.raises(FormatError, match="length mismatch"):
        ckpt.read_tensors(p)


def test_split_run_resume_equals_straight_through(tiny_ds, point_env, tmp_path):
    cfg_full = _tiny_cfg(steps=24)
    straight, s_bundle, _, _ = train(cfg_full, tiny_ds, env=point_env)

    cfg_half = _tiny_cfg(steps=12)
    critics, bundle, _, state = train(cfg_half, tiny_ds, env=point_env)
    out = tmp_path / "resume"
    save_checkpoint(critics, bundle, out, adam=state.adam, rngs=state.rngs,
                    step=state.step, train_config=cfg_half)
    resumed_state = resume_state(out)
    r_critics, r_bundle, _, _ = train(cfg_full, tiny_ds, env=point_env,
                                      state=resumed_state)
    a = _all_tensors(straight, s_bundle)
    b = _all_tensors(r_critics, r_bundle)
    for name in a:
        np.testing.assert_array_equal(a[name], b[name], err_msg=name)


def test_resume_requires_full_state(tiny_ds, point_env, tmp_path):
    critics, bundle, _, _ = train(_tiny_cfg(steps=2), tiny_ds, env=point_env)
    out = tmp_path / "bare"
    save_checkpoint(critics, bundle, out)
    with pytest.raises(FormatError, match="resume"):
        resume_state(out)
