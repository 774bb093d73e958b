"""Input validation helpers shared by every module."""
import numpy as np

PSD_TOL = 1e-12


class ConfigurationError(ValueError):
    """Raised for inconsistent model, scenario or run configuration."""


class DomainError(ValueError):
    """Raised when a numeric argument falls outside its mathematical domain."""


def as_vector(x, name="x", dim=None):
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.ndim != 1:
        raise ConfigurationError(f"{name} must be a vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ConfigurationError(f"{name} must have length {dim}, got {v.shape[0]}")
    return v


def as_matrix(m, name="M", shape=None):
    a = np.asarray(m, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1 and shape is not None and shape[0] == 1:
        a = a.reshape(1, -1)
    elif a.ndim == 1 and shape is not None and shape[1] == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise ConfigurationError(f"{name} must be a matrix, got shape {a.shape}")
    if shape is not None:
        for got, want in zip(a.shape, shape):
            if want is not None and got != want:
                raise ConfigurationError(f"{name} must have shape {shape}, got {a.shape}")
    return a


def symmetrize(m):
    return 0.5 * (m + m.T)


def check_psd(m, name="M", tol=PSD_TOL):
    """Return the symmetrized matrix, raising if it has eigenvalues below ``-tol``."""
    a = as_matrix(m, name)
    if a.shape[0] != a.shape[1]:
        raise ConfigurationError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ConfigurationError(f"{name} has non-finite entries")
    s = symmetrize(a)
    lo = np.linalg.eigvalsh(s).min()
    if lo < -tol:
        raise ConfigurationError(f"{name} is not positive semidefinite (min eigenvalue {lo:.3e})")
    return s


def check_probability(p, name="p", open_interval=False):
    p = float(p)
    ok = (0.0 < p < 1.0) if open_interval else (0.0 <= p <= 1.0)
    if not ok:
        interval = "(0, 1)" if open_interval else "[0, 1]"
        raise DomainError(f"{name} must lie in {interval}, got {p}")
    return p
