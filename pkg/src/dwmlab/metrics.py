"""Run-length, energy and degradation statistics over episode traces.

Alarm traces are 0/1 sequences indexed by measurement time, so element ``t``
is ``I_t``. Detection time is the first alarm at or after the onset ``tau``
and the delay is ``T_d - tau``; runs without such an alarm are censored and
counted, never dropped silently or zero-filled.
"""
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Arl1Result:
    arl1: float
    delays: tuple
    n_censored: int
    n: int


@dataclass(frozen=True)
class Arl0Result:
    arl0: float
    run_lengths: tuple
    n_censored: int
    n: int
    arl0_mle: float


def detection_time(alarms, tau):
    idx = np.flatnonzero(np.asarray(alarms)[tau:])
    return int(tau + idx[0]) if idx.size else None


def arl1(alarm_traces, tau):
    delays = []
    censored = 0
    for trace in alarm_traces:
        td = detection_time(trace, tau)
        if td is None:
            censored += 1
        else:
            delays.append(td - tau)
    mean = float(np.mean(delays)) if delays else float("nan")
    return Arl1Result(mean, tuple(delays), censored, len(alarm_traces))


def arl0(nominal_traces, start=1):
    """Mean index of the first false alarm, counting from ``start``.

    ``arl0_mle`` is the censoring-aware geometric estimate: total exposure
    divided by the number of observed alarms.
    """
    lengths, exposure, censored = [], 0, 0
    for trace in nominal_traces:
        trace = np.asarray(trace)
        idx = np.flatnonzero(trace[start:])
        if idx.size:
            lengths.append(int(idx[0]) + 1)
            exposure += int(idx[0]) + 1
        else:
            censored += 1
            exposure += max(trace.size - start, 0)
    mean = float(np.mean(lengths)) if lengths else float("inf")
    mle = exposure / len(lengths) if lengths else float("inf")
    return Arl0Result(mean, tuple(lengths), censored, len(nominal_traces), float(mle))


def energy(phi):
    """``sum_t ||phi_t||_1``."""
    phi = np.asarray(phi, dtype=float)
    return float(np.abs(phi).sum())


def degradation(y_wom, y):
    """Mean per-step ``||y_wom - y||_2``."""
    diff = np.asarray(y_wom, dtype=float) - np.asarray(y, dtype=float)
    if diff.ndim == 1:
        diff = diff[:, None]
    if diff.shape[0] == 0:
        return 0.0
    return float(np.mean(np.sqrt(np.sum(diff * diff, axis=1))))


def inter_alarm_intervals(alarms, tau):
    times = np.flatnonzero(np.asarray(alarms))
    times = times[times >= tau]
    return np.diff(times).tolist()


def mean_se(x):
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    if x.size == 0:
        return float("nan"), float("nan")
    se = float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0
    return float(x.mean()), se


@dataclass
class RunSummary:
    arl0: float = float("nan")
    arl1: float = float("nan")
    energy: float = 0.0
    degradation: float = 0.0
    inter_alarm: list = field(default_factory=list)
    detection_time: int = None
    n_censored: int = 0


def summarize_trace(alarms, phi, y_wom, y, tau=None):
    s = RunSummary(energy=energy(phi), degradation=degradation(y_wom, y))
    if tau is not None:
        s.detection_time = detection_time(alarms, tau)
        s.arl1 = float("nan") if s.detection_time is None else float(s.detection_time - tau)
        s.n_censored = int(s.detection_time is None)
        s.inter_alarm = inter_alarm_intervals(alarms, tau)
    return s


def sweep(evaluate, variances, episodes):
    """One row per variance, ascending in ``U``.

    ``evaluate(U, episodes)`` returns two arrays: the mean post-onset belief
    of each attacked episode and the degradation of each nominal episode.
    """
    rows = []
    for U in sorted(float(u) for u in variances):
        beliefs, degr = evaluate(U, episodes)
        b_mean, b_se = mean_se(beliefs)
        g_mean, g_se = mean_se(degr)
        rows.append({"U": U, "belief_mean": b_mean, "belief_se": b_se,
                     "degradation_mean": g_mean, "degradation_se": g_se, "episodes": int(episodes)})
    return rows
