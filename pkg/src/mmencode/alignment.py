"""Lagged design matrices for a fixed hemodynamic delay."""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .data import TimeSeriesMatrix
from .validation import check_matrix, resolve_boundaries, run_slices

__all__ = ["AlignmentConfig", "AlignmentError", "build_design", "check_target_alignment", "LagDesigner"]


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class AlignmentConfig:
    stimulus_window: int = 1
    hrf_delay: int = 3
    boundary_policy: str = "zero_pad"

    def __post_init__(self):
        if int(self.stimulus_window) < 1:
            raise ValueError("stimulus_window must be >= 1")
        if int(self.hrf_delay) < 0:
            raise ValueError("hrf_delay must be >= 0")
        if self.boundary_policy not in ("zero_pad", "drop_rows"):
            raise ValueError(f"unknown boundary_policy {self.boundary_policy!r}")


def _lag_run(block, delay, sw):
    T, D = block.shape
    out = np.zeros((T, D * sw))
    for j in range(sw):
        lag = delay + j
        if lag < T:
            out[lag:, j * D:(j + 1) * D] = block[:T - lag]
    return out


def build_design(features, cfg=None, run_boundaries=None):
    """Concatenate lagged feature rows, most recent lag first.

    Row ``t`` holds ``features[t - d], features[t - d - 1], ...,
    features[t - d - sw + 1]`` where ``d`` is the delay, never reaching
    across a run boundary.

    Returns
    -------
    design : TimeSeriesMatrix or ndarray
        Same type as ``features``.
    row_index : ndarray of int
        Source row of each output row (identity under ``zero_pad``).
    """
    cfg = cfg or AlignmentConfig()
    is_tsm = isinstance(features, TimeSeriesMatrix)
    X = check_matrix(features, "features")
    bounds = resolve_boundaries(features, run_boundaries)
    delay, sw = int(cfg.hrf_delay), int(cfg.stimulus_window)

    blocks, keep = [], []
    for sl in run_slices(bounds, X.shape[0]):
        blocks.append(_lag_run(X[sl], delay, sw))
        rows = np.arange(sl.start, sl.stop)
        keep.append(rows[delay + sw - 1:] if cfg.boundary_policy == "drop_rows" else rows)
    design = np.vstack(blocks)

    if cfg.boundary_policy == "zero_pad":
        index = np.arange(X.shape[0])
        if not is_tsm:
            return design, index
        return features.with_data(design), index

    index = np.concatenate(keep)
    if index.size == 0:
        raise AlignmentError(
            f"drop_rows with delay={delay}, sw={sw} leaves no rows in any run"
        )
    design = design[index]
    if not is_tsm:
        return design, index
    lengths = [len(k) for k in keep if len(k)]
    new_bounds = tuple(np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(int))
    return TimeSeriesMatrix(design, new_bounds, features.tr_seconds), index


def check_target_alignment(features, bold):
    """Raise :class:`AlignmentError` unless rows and run segmentation agree."""
    f_bounds = features.run_boundaries if isinstance(features, TimeSeriesMatrix) else (0,)
    b_bounds = bold.run_boundaries if isinstance(bold, TimeSeriesMatrix) else (0,)
    nf, nb = np.shape(features)[0], np.shape(bold)[0]
    if nf != nb:
        raise AlignmentError(f"row count mismatch: features have {nf} rows, bold has {nb}")
    for i, (a, b) in enumerate(zip(f_bounds, b_bounds)):
        if a != b:
            raise AlignmentError(
                f"run boundary {i} differs: features start at row {a}, bold at row {b}"
            )
    if len(f_bounds) != len(b_bounds):
        i = min(len(f_bounds), len(b_bounds))
        raise AlignmentError(
            f"run boundary {i} differs: features have {len(f_bounds)} runs, bold has {len(b_bounds)}"
        )


class LagDesigner(TransformerMixin, BaseEstimator):
    """Transformer wrapper around :func:`build_design`.

    Stateless; ``fit`` only records the input width. Run boundaries come from
    a :class:`TimeSeriesMatrix` input or the ``run_boundaries`` argument.
    """

    def __init__(self, stimulus_window=1, hrf_delay=3, boundary_policy="zero_pad"):
        self.stimulus_window = stimulus_window
        self.hrf_delay = hrf_delay
        self.boundary_policy = boundary_policy

    def _cfg(self):
        return AlignmentConfig(self.stimulus_window, self.hrf_delay, self.boundary_policy)

    def fit(self, X, y=None, run_boundaries=None):
        self._cfg()
        self.n_features_in_ = check_matrix(X).shape[1]
        return self

    def transform(self, X, run_boundaries=None):
        design, index = build_design(X, self._cfg(), run_boundaries)
        self.row_index_ = index
        return design

    def fit_transform(self, X, y=None, run_boundaries=None):
        return self.fit(X).transform(X, run_boundaries)
