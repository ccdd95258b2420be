"""End-to-end fMRI-to-fMRI prediction with HMMs."""

from dataclasses import dataclass

import numpy as np

from ..validation import check_matrix, resolve_boundaries
from .model import GaussianHMM, GaussianLinearHMM, sample_hmm
from .preprocess import HmmPreprocessor


@dataclass
class HmmPipelineConfig:
    kind: str = "gaussian_linear"
    n_states: int = 10
    n_components_x: int = 10
    n_components_y: int = 100
    mode: str = "expectation"
    max_iter: int = 500
    tol: float = 1e-5
    seed: int = 0


def predict_glhmm_pipeline(train_y, test_T=None, train_x=None, test_x=None, cfg=None,
                           train_boundaries=None, test_boundaries=None, return_model=False):
    """Fit on training sessions and predict dependent parcels for the test set.

    For ``kind="gaussian_linear"``, ``test_x`` is either the measured
    predictor parcels (strategy i) or another model's predictions of them
    (strategy ii); the code path is the same. For ``kind="gaussian"`` only
    the test length is needed.

    Returns predictions in the original parcel space, de-standardized with
    pooled training-session statistics.
    """
    cfg = cfg or HmmPipelineConfig()
    Y = check_matrix(train_y, "train_y")
    tr_bounds = resolve_boundaries(train_y, train_boundaries)
    linear = cfg.kind == "gaussian_linear"
    if cfg.kind not in ("gaussian", "gaussian_linear"):
        raise ValueError(f"unknown HMM kind {cfg.kind!r}")
    if linear and (train_x is None or test_x is None):
        raise ValueError("gaussian_linear needs train_x and test_x")

    prep = HmmPreprocessor(cfg.n_components_x, cfg.n_components_y)
    prep.fit(Y, check_matrix(train_x, "train_x") if linear else None, tr_bounds)
    y_pc, _ = prep.transform_y(Y, tr_bounds)
    est_cls = GaussianLinearHMM if linear else GaussianHMM
    model = est_cls(n_states=cfg.n_states, max_iter=cfg.max_iter, tol=cfg.tol, random_state=cfg.seed)

    if linear:
        x_pc, _ = prep.transform_x(check_matrix(train_x, "train_x"), tr_bounds)
        model.fit(x_pc, y_pc, run_boundaries=tr_bounds)
        Xt = check_matrix(test_x, "test_x")
        te_bounds = resolve_boundaries(test_x, test_boundaries)
        xt_pc, _ = prep.transform_x(Xt, te_bounds)
        T = Xt.shape[0]
    else:
        model.fit(y_pc, run_boundaries=tr_bounds)
        if test_T is None:
            raise ValueError("gaussian kind needs test_T")
        T = int(test_T)
        te_bounds = tuple(test_boundaries) if test_boundaries is not None else (0,)
        xt_pc = None

    pred_pc = sample_hmm(model, T, x=xt_pc, seed=np.random.default_rng([cfg.seed, 1]).integers(2**31),
                         mode=cfg.mode, run_boundaries=te_bounds)
    pred = prep.inverse_transform_y(pred_pc, te_bounds)
    if return_model:
        return pred, model, prep
    return pred
