"""Run configuration: JSON tree with per-environment defaults and strict key checking."""
import copy
import hashlib
import json
from pathlib import Path

from ._validation import ConfigurationError
from .identify import MOTOR_SEGMENTS

ENVIRONMENTS = ("mtc_twin", "motor_twin", "custom")
POLICIES = ("none", "constant", "ddpg")

# a value of None marks an optional field whose type is not checked
_COMMON = {
    "environment": "mtc_twin",
    "seed": 0,
    "replications": 40,
    "output_dir": "runs",
    "n_jobs": 1,
    "recording_noise": "shared",
    "policy": {"kind": "constant", "U": 2.5e-3, "checkpoint": None},
    "detector": {"alpha": 0.005, "threshold": None, "estimator_mode": "compensating"},
    "belief": {"q": 0.05, "rho": None, "w_beta": 50},
    "reward": {"w1": 0.35, "w2": 0.35, "w3": 0.30},
    "attack": {"kind": "replay", "onset": 200, "duration": None, "delta_t": 0,
               "injection": None, "control_override": "negate"},
    "train": {"episodes": 200, "hidden": 32, "lr": 1e-3, "tau": 5e-3, "gamma": 0.99, "batch_size": 128,
              "buffer_size": 1_000_000, "grad_clip": 1.0, "ou_theta": 0.15, "ou_sigma": 0.99, "ou_decay": 0.995,
              "updates_per_step": 1, "attack_prob": 0.5, "alpha": 0.10, "checkpoint_every": 20,
              "seed_offset": 1_000_003},
    "benchmark": {"arms": ["none", "low", "high", "ddpg"], "low": 1e-9, "high": 2.5e-3,
                  "table_v": [0.8655, 0.4327, 0.1731, 0.0865, 0.0432]},
    "sweep": {"variances": [1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0], "episodes": 10},
}

DEFAULTS = {
    "mtc_twin": {
        **copy.deepcopy(_COMMON),
        "plant": {"A": 1.0, "B": 0.010, "Q": 1.3741e-13, "mu0": 0.0, "Sigma0": 0.0},
        "controller": {"kp": 1.0, "setpoint": 0.012},
        "episode": {"horizon": 1000},
        "U_max": 2.5e-3,
    },
    "motor_twin": {
        **copy.deepcopy(_COMMON),
        "replications": 20,
        "detector": {"alpha": None, "threshold": 16.0, "estimator_mode": "compensating"},
        "belief": {"q": 0.05, "rho": None, "w_beta": 500},
        "attack": {"kind": "replay", "onset": 4000, "duration": None, "delta_t": 0,
                   "injection": None, "control_override": "negate"},
        "policy": {"kind": "constant", "U": 0.009, "checkpoint": None},
        "motor": {"segments": [{"A": a, "B": b, "Q": q, "setpoint": s} for a, b, q, s in MOTOR_SEGMENTS],
                  "gmm_seed": 20240611, "max_components": 3},
        "episode": {"horizon": 41000, "decision_block": 500, "processed_block": 100},
        "U_max": 0.01,
    },
}
DEFAULTS["motor_twin"]["train"] = {**DEFAULTS["motor_twin"]["train"], "episodes": 30, "hidden": 64,
                                   "checkpoint_every": 5, "alpha": None}
DEFAULTS["motor_twin"]["benchmark"] = {**DEFAULTS["motor_twin"]["benchmark"],
                                       "arms": ["none", "table_v", "ddpg"], "high": 0.01}
DEFAULTS["motor_twin"]["sweep"] = {**DEFAULTS["motor_twin"]["sweep"], "episodes": 2}
DEFAULTS["custom"] = copy.deepcopy(DEFAULTS["mtc_twin"])
DEFAULTS["custom"]["environment"] = "custom"

# keys whose value may be any JSON (lists, scalars, nested lists)
_FREE = {"plant.A", "plant.B", "plant.Q", "plant.mu0", "plant.Sigma0", "controller.kp", "controller.setpoint",
         "attack.injection", "motor.segments", "benchmark.arms", "benchmark.table_v", "sweep.variances"}
HASH_EXCLUDE = ("output_dir", "n_jobs")


def _merge(base, user, path=""):
    for key, val in user.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigurationError(f"unknown configuration key {where!r}")
        ref = base[key]
        if isinstance(ref, dict) and where not in _FREE:
            if not isinstance(val, dict):
                raise ConfigurationError(f"{where!r} must be a mapping")
            _merge(ref, val, where)
            continue
        if ref is not None and val is not None and where not in _FREE:
            if isinstance(ref, bool) != isinstance(val, bool):
                raise ConfigurationError(f"{where!r} has the wrong type: {val!r}")
            if isinstance(ref, (int, float)) and not isinstance(val, (int, float)):
                raise ConfigurationError(f"{where!r} must be numeric, got {val!r}")
            if isinstance(ref, int) and not isinstance(ref, bool) and isinstance(val, float):
                if not val.is_integer():
                    raise ConfigurationError(f"{where!r} must be an integer, got {val!r}")
                val = int(val)
            if isinstance(ref, str) and not isinstance(val, str):
                raise ConfigurationError(f"{where!r} must be a string, got {val!r}")
        base[key] = val


def _check(cfg):
    if cfg["environment"] not in ENVIRONMENTS:
        raise ConfigurationError(f"'environment' must be one of {ENVIRONMENTS}, got {cfg['environment']!r}")
    if cfg["policy"]["kind"] not in POLICIES:
        raise ConfigurationError(f"'policy.kind' must be one of {POLICIES}, got {cfg['policy']['kind']!r}")
    if cfg["replications"] < 1:
        raise ConfigurationError("'replications' must be >= 1")
    if cfg["recording_noise"] not in ("shared", "independent"):
        raise ConfigurationError("'recording_noise' must be 'shared' or 'independent'")
    det = cfg["detector"]
    if det["alpha"] is None and det["threshold"] is None:
        raise ConfigurationError("'detector' needs 'alpha' or 'threshold'")
    if det["alpha"] is not None and not 0.0 < det["alpha"] < 1.0:
        raise ConfigurationError(f"'detector.alpha' must lie in (0, 1), got {det['alpha']}")
    atk = cfg["attack"]
    if atk["kind"] == "replay" and atk["delta_t"] > atk["onset"] + 1:
        raise ConfigurationError("'attack.delta_t' reaches back before the start of the recording (delta_t <= onset + 1)")
    if cfg["U_max"] < 0:
        raise ConfigurationError("'U_max' must be nonnegative")
    for v in cfg["sweep"]["variances"]:
        if not isinstance(v, (int, float)) or v < 0:
            raise ConfigurationError(f"'sweep.variances' entries must be nonnegative numbers, got {v!r}")
    for arm in cfg["benchmark"]["arms"]:
        if arm not in ("none", "low", "high", "table_v", "ddpg") and not arm.startswith("constant:"):
            raise ConfigurationError(f"'benchmark.arms' entry {arm!r} is not recognized")
    if cfg["environment"] == "motor_twin":
        for i, seg in enumerate(cfg["motor"]["segments"]):
            missing = {"A", "B", "Q", "setpoint"} - set(seg)
            extra = set(seg) - {"A", "B", "Q", "setpoint"}
            if missing or extra:
                raise ConfigurationError(f"'motor.segments[{i}]' needs exactly A, B, Q, setpoint")


def from_dict(user):
    if not isinstance(user, dict):
        raise ConfigurationError("configuration root must be a mapping")
    env = user.get("environment", "mtc_twin")
    if env not in DEFAULTS:
        raise ConfigurationError(f"'environment' must be one of {ENVIRONMENTS}, got {env!r}")
    cfg = copy.deepcopy(DEFAULTS[env])
    _merge(cfg, user)
    _check(cfg)
    return cfg


def load(path):
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"configuration file not found: {path}")
    try:
        user = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
    return from_dict(user)


def set_path(user, dotted, value):
    """Apply a ``a.b.c=value`` override onto a user config tree."""
    node = user
    keys = dotted.split(".")
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"cannot set {dotted!r}: {k!r} is not a mapping")
    node[keys[-1]] = value


def config_hash(cfg):
    core = {k: v for k, v in cfg.items() if k not in HASH_EXCLUDE}
    blob = json.dumps(core, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def dumps(cfg):
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"
