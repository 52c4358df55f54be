import json

import numpy as np
import pytest

from cien_marl import harness
from cien_marl.checkpoint import CheckpointError, checkpoint_name, load_checkpoint, read_meta, save_checkpoint
from cien_marl.config import ConfigError, RunConfig, dump_config, from_dict, load_config


def test_defaults():
    c = RunConfig()
    assert c.episodes == 5000 and c.warmup_steps == 1000 and c.success_height == 1.30
    assert c.hyper.alpha == 0.2 and c.env.n_agents == 3


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        from_dict({"mode": "cien_sac", "learning_rate": 1e-3})
    with pytest.raises(ConfigError):
        from_dict({"env": {"friction": 1.0}})
    with pytest.raises(ConfigError):
        from_dict({"hyper": {"beta": 1.0}})
    with pytest.raises(ConfigError):
        from_dict({"noise": [0, 0], "fine_tune": {"source": "x", "lr": 1}})


def test_invalid_values_rejected():
    with pytest.raises(ConfigError):
        RunConfig(mode="mappo")
    with pytest.raises(ConfigError):
        from_dict({"fine_tune": {"source": "x.npz"}})
    with pytest.raises(ConfigError):
        from_dict({"seeds": [-1]})
    with pytest.raises(ConfigError):
        from_dict({"hyper": {"gamma": 2.0}})


def test_yaml_and_overrides(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("mode: independent\nenv:\n  n_agents: 4\nseeds: [1, 2]\n")
    c = load_config(p, ["env.horizon=50", "hyper.alpha=0.1", "noise=[0.01, 0.02]"])
    assert c.mode == "independent" and c.env.n_agents == 4 and c.env.horizon == 50
    assert c.hyper.alpha == 0.1 and c.seeds == (1, 2) and c.noise == (0.01, 0.02)


def test_json_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"mode": "centralized", "episodes": 7}))
    assert load_config(p).episodes == 7


def test_bad_override_and_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(None, ["episodes"])
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    (tmp_path / "bad.yaml").write_text("mode: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.yaml")


def test_dump_round_trip(tmp_path):
    c = from_dict({"mode": "cien_sac", "noise": [0.01, 0.0174], "fine_tune": {"source": "a.npz"},
                   "hidden": [8, 8], "env": {"n_agents": 5}})
    dump_config(c, tmp_path / "c.yaml")
    assert load_config(tmp_path / "c.yaml") == c


# -- checkpoints ---------------------------------------------------------------

def test_checkpoint_name():
    assert checkpoint_name("cien_sac", 7, 5000) == "cien_sac_seed7_ep5000.npz"


@pytest.mark.parametrize("mode", ["centralized", "cien_sac", "independent"])
def test_checkpoint_round_trip_bit_identical(tmp_path, tiny_config, mode):
    cfg = tiny_config(mode, episodes=3)
    agents = harness.build_networks(cfg, 3)
    harness.run_training(agents, cfg, 3, cfg.env, 3, None, 10)
    path = save_checkpoint(tmp_path / "c.npz", agents, mode, cfg.env.to_dict(), {"episode": 3})
    loaded, meta = load_checkpoint(path)
    assert meta["mode"] == mode and meta["episode"] == 3 and meta["n_agents"] == 3
    rng = np.random.default_rng(0)
    for a, b in zip(agents, loaded):
        assert a.update_count == b.update_count
        for name, net in a.networks().items():
            assert net.flat_params().tobytes() == b.networks()[name].flat_params().tobytes()
        for name, opt in a.optimizers().items():
            o = b.optimizers()[name]
            assert opt.step_count == o.step_count
            assert all(m1.tobytes() == m2.tobytes() for m1, m2 in zip(opt.second_moment, o.second_moment))
        s_i, s_o = rng.normal(size=a.dims.state_dim), rng.normal(size=2)
        assert a.act(s_i, s_o, True)[0].tobytes() == b.act(s_i, s_o, True)[0].tobytes()


def test_saving_twice_is_byte_identical(tmp_path, tiny_config):
    cfg = tiny_config("cien_sac")
    agents = harness.build_networks(cfg, 0)
    save_checkpoint(tmp_path / "a.npz", agents, "cien_sac", cfg.env.to_dict())
    save_checkpoint(tmp_path / "b.npz", agents, "cien_sac", cfg.env.to_dict())
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()


def test_corrupt_checkpoint(tmp_path):
    p = tmp_path / "bad.npz"
    p.write_bytes(b"not a zip")
    with pytest.raises(CheckpointError):
        load_checkpoint(p)
    with pytest.raises(FileNotFoundError):
        read_meta(tmp_path / "none.npz")
