"""Versioned JSON checkpoints for DDPG agents.

A checkpoint stores every network as ``sizes`` plus named parameter arrays
(``shape`` and flat ``data``), the RMSprop accumulators, exploration state and
generator states, all tagged with ``format_version`` and the hash of the run
configuration. Floats are written with ``repr`` precision, so a save/load
round trip is exact. The replay buffer, when saved, goes to a sidecar
``.npy`` file.
"""
import json
from pathlib import Path

import numpy as np

from .._validation import ConfigurationError
from .agent import DdpgAgent, DdpgConfig
from .mlp import Mlp

FORMAT_VERSION = 1
KIND = "dwmlab-ddpg"


def _array(a):
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _unarray(d, where):
    shape = tuple(d["shape"])
    data = np.asarray(d["data"], dtype=float)
    if data.size != int(np.prod(shape)):
        raise ConfigurationError(f"{where}: {data.size} values do not fill shape {shape}")
    return data.reshape(shape)


def net_to_dict(net):
    return {"sizes": list(net.sizes), "slope": net.slope, "layer_norm": net.layer_norm,
            "params": {k: _array(v) for k, v in sorted(net.params.items())}}


def net_from_dict(d, where="network", expected_sizes=None):
    sizes = tuple(d["sizes"])
    if expected_sizes is not None and tuple(expected_sizes) != sizes:
        raise ConfigurationError(f"{where}: layer sizes {sizes} do not match expected {tuple(expected_sizes)}")
    net = Mlp(sizes, None, slope=d.get("slope", 0.01), layer_norm=d.get("layer_norm", True))
    for k, ref in net.params.items():
        if k not in d["params"]:
            raise ConfigurationError(f"{where}: missing parameter {k!r}")
        arr = _unarray(d["params"][k], f"{where}.{k}")
        if arr.shape != ref.shape:
            raise ConfigurationError(f"{where}.{k}: shape {arr.shape} does not match layer shape {ref.shape}")
        net.params[k] = arr
    extra = set(d["params"]) - set(net.params)
    if extra:
        raise ConfigurationError(f"{where}: unexpected parameters {sorted(extra)}")
    return net


def _rng_state(rng):
    return rng.bit_generator.state


def _set_rng_state(rng, state):
    rng.bit_generator.state = state


def agent_to_dict(agent, config_hash, extra=None):
    cfg = agent.config
    out = {
        "format_version": FORMAT_VERSION,
        "kind": KIND,
        "config_hash": config_hash,
        "hyper": dict(vars(cfg)),
        "networks": {name: net_to_dict(net) for name, net in agent.networks().items()},
        "optimizer": {name: {k: _array(v) for k, v in sorted(opt.sq.items())} for name, opt in agent.opt.items()},
        "noise": {"sigma": agent.noise.sigma, "x": agent.noise.x.tolist()},
        "buffer": {"size": agent.buffer.size, "pos": agent.buffer.pos},
        "rng": {"explore": _rng_state(agent.buffer.rng)},
    }
    if extra:
        out.update(extra)
    return out


def save_checkpoint(path, agent, config_hash, extra=None, with_buffer=False):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = agent_to_dict(agent, config_hash, extra)
    if with_buffer:
        side = path.with_suffix(".buffer.npy")
        np.save(side, agent.buffer.data[: max(agent.buffer.size, agent.buffer.pos)])
        doc["buffer"]["file"] = side.name
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def read_checkpoint(path, expected_hash=None):
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"checkpoint not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    if doc.get("kind") != KIND:
        raise ConfigurationError(f"{path} is not a DDPG checkpoint")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ConfigurationError(f"{path}: unsupported format_version {doc.get('format_version')}")
    if expected_hash is not None and doc.get("config_hash") != expected_hash:
        raise ConfigurationError(f"{path}: config hash {doc.get('config_hash')} does not match {expected_hash}")
    return doc


def load_agent(path, expected_hash=None, rng_init=None, rng_explore=None):
    """Rebuild a full agent (networks, optimizer, noise, buffer, generator state)."""
    path = Path(path)
    doc = read_checkpoint(path, expected_hash)
    cfg = DdpgConfig(**doc["hyper"])
    rng_init = np.random.default_rng(0) if rng_init is None else rng_init
    rng_explore = np.random.default_rng(0) if rng_explore is None else rng_explore
    agent = DdpgAgent(cfg, rng_init, rng_explore)
    for name, net in agent.networks().items():
        loaded = net_from_dict(doc["networks"][name], name, expected_sizes=net.sizes)
        net.params = loaded.params
    for name, opt in agent.opt.items():
        for k in opt.sq:
            opt.sq[k] = _unarray(doc["optimizer"][name][k], f"optimizer.{name}.{k}")
    agent.noise.sigma = doc["noise"]["sigma"]
    agent.noise.x = np.asarray(doc["noise"]["x"], dtype=float)
    _set_rng_state(agent.buffer.rng, doc["rng"]["explore"])
    buf = doc["buffer"]
    if "file" in buf:
        data = np.load(path.parent / buf["file"])
        agent.buffer.data = np.zeros((max(data.shape[0], 1), data.shape[1]))
        agent.buffer.data[: data.shape[0]] = data
        agent.buffer.size, agent.buffer.pos = buf["size"], buf["pos"]
    return agent, doc


def load_actor(path, expected_hash=None, expected_sizes=None):
    doc = read_checkpoint(path, expected_hash)
    actor = net_from_dict(doc["networks"]["actor"], "actor", expected_sizes)
    return actor, doc
