"""JSON policy checkpoints: layer sizes, flat row-major weights, log_std."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from .mlp import MLP
from .policy import PolicyParameters

FORMAT = "caevsim-policy"
VERSION = 1


def _net_tree(net: MLP) -> dict:
    return {
        "sizes": list(net.sizes),
        "layers": [{"W": w.ravel(order="C").tolist(), "b": b.tolist()}
                   for w, b in zip(net.weights, net.biases)],
    }


def _net_from_tree(tree) -> MLP:
    sizes = [int(s) for s in tree["sizes"]]
    layers = tree["layers"]
    if len(layers) != len(sizes) - 1:
        raise ValueError("layer count does not match sizes")
    weights, biases = [], []
    for (a, b), layer in zip(zip(sizes[:-1], sizes[1:]), layers):
        w = np.asarray(layer["W"], dtype=float)
        bias = np.asarray(layer["b"], dtype=float)
        if w.size != a * b or bias.size != b:
            raise ValueError(f"layer {a}x{b} has the wrong number of weights")
        weights.append(w.reshape(a, b))
        biases.append(bias)
    return MLP(sizes, weights, biases)


def policy_to_dict(params: PolicyParameters) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "actor": _net_tree(params.actor),
        "critic": _net_tree(params.critic),
        "log_std": params.log_std,
        "a_min": params.a_min,
        "a_max": params.a_max,
        "obs_scale": list(params.obs_scale),
        "config_hash": params.config_hash,
        "meta": params.meta,
    }


def policy_from_dict(tree) -> PolicyParameters:
    if tree.get("format") != FORMAT:
        raise ValueError("not a policy checkpoint")
    if tree.get("version") != VERSION:
        raise ValueError(f"unsupported checkpoint version {tree.get('version')!r}")
    params = PolicyParameters(
        actor=_net_from_tree(tree["actor"]),
        critic=_net_from_tree(tree["critic"]),
        log_std=float(tree["log_std"]),
        a_min=float(tree["a_min"]),
        a_max=float(tree["a_max"]),
        obs_scale=tuple(float(s) for s in tree["obs_scale"]),
        config_hash=str(tree.get("config_hash", "")),
        meta=dict(tree.get("meta", {})),
    )
    if not params.all_finite():
        raise ValueError("checkpoint contains non-finite weights")
    return params


def save_policy(params: PolicyParameters, path, force: bool = True) -> Path:
    path = Path(path)
    if path.exists() and not force:
        raise FileExistsError(f"{path} exists; pass --force to overwrite")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    # repr-exact floats so a reload is bit-identical
    tmp.write_text(json.dumps(policy_to_dict(params)), encoding="utf-8")
    tmp.replace(path)
    return path


def load_policy(path) -> PolicyParameters:
    path = Path(path)
    try:
        tree = json.loads(path.read_text(encoding="utf-8"))
        return policy_from_dict(tree)
    except FileNotFoundError:
        raise ConfigError(f"defender.policy: file not found: {path}",
                          [("defender.policy", "file not found")]) from None
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"defender.policy: unreadable checkpoint {path}: {exc}",
                          [("defender.policy", str(exc))]) from None
