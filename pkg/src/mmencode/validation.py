"""Input checks shared by the estimators."""

import numpy as np

from .data import NonFiniteError, TimeSeriesMatrix


def check_matrix(X, name="X", min_rows=1):
    """Coerce to a finite float64 2-D array."""
    if isinstance(X, TimeSeriesMatrix):
        X = X.data
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {X.shape}")
    if X.shape[0] < min_rows:
        raise ValueError(f"{name} needs at least {min_rows} rows, got {X.shape[0]}")
    if X.shape[1] == 0:
        raise ValueError(f"{name} has no columns")
    if not np.all(np.isfinite(X)):
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return X


def resolve_boundaries(X, run_boundaries=None, lengths=None):
    """Run start indices from explicit arguments or a TimeSeriesMatrix."""
    n = X.shape[0] if not isinstance(X, TimeSeriesMatrix) else X.shape[0]
    if run_boundaries is not None and lengths is not None:
        raise ValueError("pass run_boundaries or lengths, not both")
    if lengths is not None:
        lengths = np.asarray(lengths, dtype=int)
        if lengths.sum() != n or np.any(lengths < 1):
            raise ValueError(f"lengths {lengths.tolist()} do not partition {n} rows")
        run_boundaries = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    if run_boundaries is None:
        run_boundaries = X.run_boundaries if isinstance(X, TimeSeriesMatrix) else (0,)
    b = tuple(int(v) for v in run_boundaries)
    if b[0] != 0 or any(y <= x for x, y in zip(b, b[1:])) or b[-1] >= n:
        raise ValueError(f"run_boundaries {b} invalid for {n} rows")
    return b


def run_slices(boundaries, n):
    edges = list(boundaries) + [n]
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]


def check_same_rows(a, b, names=("X", "y")):
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"{names[0]} has {a.shape[0]} rows but {names[1]} has {b.shape[0]}")
