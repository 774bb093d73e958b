"""Flip, injection and replay adversaries.

Timing convention: the adversary is active on decision steps
``onset <= t < onset + duration``. A control override at step ``t`` shapes
``y[t+1]``, and the measurement channel is spoofed from index ``onset + 1``
on, i.e. measurement ``t`` is spoofed exactly when step ``t - 1`` is active.
"""
from dataclasses import dataclass

import numpy as np

from ._validation import ConfigurationError, as_vector

KINDS = ("none", "flip_pre", "flip_post", "injection", "replay")
OVERRIDES = ("none", "negate", "negate_all", "custom")


@dataclass(frozen=True)
class AttackScenario:
    kind: str = "none"
    onset: int = 1
    duration: int = None
    delta_t: int = 0
    injection: object = None
    control_override: str = "negate"
    custom_control: object = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"attack.kind must be one of {KINDS}, got {self.kind!r}")
        if self.control_override not in OVERRIDES:
            raise ConfigurationError(f"attack.control_override must be one of {OVERRIDES}, got {self.control_override!r}")
        if self.onset < 1:
            raise ConfigurationError(f"attack.onset must be >= 1, got {self.onset}")
        if self.duration is not None and self.duration < 1:
            raise ConfigurationError(f"attack.duration must be positive, got {self.duration}")
        if self.delta_t < 0:
            raise ConfigurationError(f"attack.delta_t must be >= 0, got {self.delta_t}")
        if self.kind == "injection" and self.injection is None:
            raise ConfigurationError("attack.injection is required for injection attacks")
        if self.control_override == "custom" and self.custom_control is None:
            raise ConfigurationError("attack.custom_control is required for a custom override")

    @property
    def end(self):
        return np.inf if self.duration is None else self.onset + self.duration

    def active(self, t):
        return self.kind != "none" and self.onset <= t < self.end

    def spoofed(self, t):
        return self.kind in ("injection", "replay") and self.active(t - 1)

    def injection_at(self, t, n=1):
        a = self.injection
        if callable(a):
            return as_vector(a(t), "injection", n)
        a = np.asarray(a, dtype=float)
        # a scalar or a single n-vector is a constant bias; anything longer is indexed by t
        if a.ndim == 0 or (a.ndim == 1 and a.size == n and n > 1):
            return np.broadcast_to(a, (n,)).astype(float)
        return as_vector(a[t], "injection", n)


@dataclass
class RecordingBuffer:
    """Contiguous measurements ``y[start], y[start + 1], ...`` from a normal run."""

    measurements: list
    start: int = 0

    def __getitem__(self, t):
        i = t - self.start
        if i < 0 or i >= len(self.measurements):
            raise ConfigurationError(
                f"replay needs recorded index {t}, buffer covers [{self.start}, {self.start + len(self.measurements) - 1}]"
            )
        return self.measurements[i]

    def append(self, y):
        self.measurements.append(np.array(y, dtype=float))

    def __len__(self):
        return len(self.measurements)


def flip_control(u, phi, variant):
    """``-u + phi`` before watermarking (``pre``) or ``-u - phi`` after it (``post``)."""
    u = np.asarray(u, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if variant == "pre":
        return -u + phi
    if variant == "post":
        return -u - phi
    raise ConfigurationError(f"flip variant must be 'pre' or 'post', got {variant!r}")


def inject_measurement(y, a):
    return np.asarray(y, dtype=float) + np.asarray(a, dtype=float)


def replay_measurement(buf, scenario, t, y_true=None):
    """Recorded ``y[t - delta_t]`` while the channel is spoofed, else ``y_true``."""
    if not scenario.spoofed(t):
        return y_true
    return buf[t - scenario.delta_t]


def applied_input(scenario, t, u, phi):
    """Plant input at step ``t`` after any control override."""
    u = np.asarray(u, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if not scenario.active(t):
        return u + phi
    if scenario.kind == "flip_pre":
        return flip_control(u, phi, "pre")
    if scenario.kind == "flip_post":
        return flip_control(u, phi, "post")
    mode = scenario.control_override
    if mode == "negate":
        return flip_control(u, phi, "pre")
    if mode == "negate_all":
        return flip_control(u, phi, "post")
    if mode == "custom":
        seq = scenario.custom_control
        return np.asarray(seq(t) if callable(seq) else seq[t], dtype=float) + phi
    return u + phi


def observed_measurement(scenario, t, y_true, buf=None):
    """What the sensor channel reports at measurement index ``t``."""
    if not scenario.spoofed(t):
        return y_true
    if scenario.kind == "injection":
        return inject_measurement(y_true, scenario.injection_at(t, np.size(y_true)))
    return replay_measurement(buf, scenario, t, y_true)
