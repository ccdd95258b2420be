"""Multimodal fMRI encoding: lagged ridge models, stacking and HMMs."""

from .alignment import AlignmentConfig, LagDesigner, build_design, check_target_alignment
from .data import (
    DatasetSplit,
    TimeSeriesMatrix,
    load_manifest,
    parse_split_shorthand,
    read_matrix,
    write_matrix,
)
from .decomposition import SubsampledPCA, fit_pca
from .encoding import LaggedRidgeEncoder
from .evaluation import ScoreReport, aggregate_subjects, group_scores, pearson_per_parcel
from .ridge import RidgeLOOCV, fit_ridge_loocv
from .stacking import StackedRegression, fit_stacking

__version__ = "0.1.0"
