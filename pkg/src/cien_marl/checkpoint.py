"""Single-file ``.npz`` checkpoints.

Each file holds a JSON metadata header (mode, agent count, dimensions,
hyperparameters, network architectures) under the key ``__meta__`` and one
flat parameter vector per network, row-major in layer order
(``W0, b0, W1, b1, ...``), plus Adam moments per optimized network.
Arrays are stored at full precision so save -> load -> forward is bit-identical.
"""

from __future__ import annotations

import json
import zipfile
from pathlib import Path

import numpy as np

from . import nn
from .agent import Agent, AgentDims, IsolationMonitor
from .sac import SacHyper

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def checkpoint_name(mode: str, seed: int, episode: int) -> str:
    return f"{mode}_seed{seed}_ep{episode}.npz"


def _net_meta(net: nn.DenseNetwork) -> dict:
    return {
        "layer_sizes": net.layer_sizes,
        "hidden_activation": net.hidden_activation,
        "output_head": net.output_head,
        "log_std_min": net.log_std_min,
        "log_std_max": net.log_std_max,
        "dtype": str(net.dtype),
    }


def _net_from(meta: dict, flat: np.ndarray) -> nn.DenseNetwork:
    net = nn.init_network(meta["layer_sizes"], None, meta["hidden_activation"], meta["output_head"],
                          dtype=np.dtype(meta["dtype"]), zero=True)
    net.log_std_min = meta["log_std_min"]
    net.log_std_max = meta["log_std_max"]
    net.set_flat_params(flat)
    return net


def _flat_moments(moments: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([m.ravel() for m in moments])


def _split_like(flat: np.ndarray, like: list[np.ndarray]) -> list[np.ndarray]:
    out, k = [], 0
    for ref in like:
        out.append(flat[k:k + ref.size].reshape(ref.shape).astype(ref.dtype))
        k += ref.size
    return out


def save_checkpoint(path: str | Path, agents: list[Agent], mode: str, env_config: dict,
                    extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays: dict[str, np.ndarray] = {}
    meta_agents = []
    for ag in agents:
        d = ag.dims
        nets = {}
        for name, net in ag.networks().items():
            arrays[f"agent{ag.agent_id}/{name}"] = net.flat_params()
            nets[name] = _net_meta(net)
        opts = {}
        for name, opt in ag.optimizers().items():
            arrays[f"agent{ag.agent_id}/opt_{name}/m"] = _flat_moments(opt.first_moment)
            arrays[f"agent{ag.agent_id}/opt_{name}/v"] = _flat_moments(opt.second_moment)
            opts[name] = {"step_count": opt.step_count, "learning_rate": opt.learning_rate,
                          "beta1": opt.beta1, "beta2": opt.beta2, "epsilon": opt.epsilon}
        meta_agents.append({
            "agent_id": ag.agent_id,
            "dims": {"state_dim": d.state_dim, "object_dim": d.object_dim, "action_dim": d.action_dim,
                     "influence_dim": d.influence_dim, "hidden": list(d.hidden), "cien_hidden": list(d.cien_hidden)},
            "action_scale": ag.policy.action_scale,
            "update_count": ag.update_count,
            "networks": nets,
            "optimizers": opts,
        })
    meta = {
        "format_version": FORMAT_VERSION,
        "mode": mode,
        "n_agents": env_config["n_agents"],
        "env": env_config,
        "hyper": agents[0].hyper.to_dict(),
        "agents": meta_agents,
        **(extra or {}),
    }
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def read_meta(path: str | Path) -> dict:
    return load_checkpoint(path)[1]


def load_checkpoint(path: str | Path) -> tuple[list[Agent], dict]:
    """Rebuild agents (networks, optimizer states, update counters) from ``path``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
        meta = json.loads(arrays.pop("__meta__").tobytes().decode())
    except (OSError, ValueError, KeyError, zipfile.BadZipFile, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format in {path}")
    hyper = SacHyper.from_dict(meta["hyper"])
    monitor = IsolationMonitor()
    agents = []
    try:
        for am in meta["agents"]:
            i = am["agent_id"]
            dd = am["dims"]
            dims = AgentDims(dd["state_dim"], dd["object_dim"], dd["action_dim"], dd["influence_dim"],
                             tuple(dd["hidden"]), tuple(dd["cien_hidden"]))
            nets = {name: _net_from(nm, arrays[f"agent{i}/{name}"]) for name, nm in am["networks"].items()}
            ag = Agent(i, dims, hyper, np.random.default_rng(0), am["action_scale"],
                       dtype=nets["actor"].dtype, zero_init=True, monitor=monitor)
            ag.policy.network = nets["actor"]
            ag.critics.q1, ag.critics.q2 = nets["q1"], nets["q2"]
            ag.critics.q1_target, ag.critics.q2_target = nets["q1_target"], nets["q2_target"]
            if ag.estimator is not None:
                ag.estimator.network, ag.estimator.target_network = nets["cien"], nets["cien_target"]
            ag.reset_optimizers()
            for name, opt in ag.optimizers().items():
                om = am["optimizers"][name]
                opt.first_moment = _split_like(arrays[f"agent{i}/opt_{name}/m"], opt.first_moment)
                opt.second_moment = _split_like(arrays[f"agent{i}/opt_{name}/v"], opt.second_moment)
                opt.step_count = om["step_count"]
                opt.learning_rate, opt.beta1 = om["learning_rate"], om["beta1"]
                opt.beta2, opt.epsilon = om["beta2"], om["epsilon"]
            ag.update_count = am["update_count"]
            agents.append(ag)
    except (KeyError, nn.ShapeError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    return agents, meta
