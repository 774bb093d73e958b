"""Named random streams derived from one root seed.

Every source of randomness in a run gets its own ``numpy.random.Generator``
spawned from ``SeedSequence([seed, replication, stream_id])``. Arms of a
benchmark that share a seed and replication index therefore see the same
plant noise while their watermark draws stay independent of the recording.
"""
import numpy as np

STREAMS = {
    "plant": 0,
    "watermark": 1,
    "recording": 2,
    "exploration": 3,
    "init": 4,
    "control": 5,
    "scenario": 6,
}


def stream(seed, name, replication=0):
    if name not in STREAMS:
        raise KeyError(f"unknown random stream {name!r}")
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(replication), STREAMS[name]]))


def streams(seed, replication=0, names=None):
    names = STREAMS if names is None else names
    return {n: stream(seed, n, replication) for n in names}
