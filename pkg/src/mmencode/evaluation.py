"""Per-parcel Pearson scoring and aggregation."""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .validation import check_matrix

__all__ = ["ScoreReport", "pearson_per_parcel", "aggregate_subjects", "group_scores",
           "write_report", "load_groups"]


@dataclass
class ScoreReport:
    per_parcel_r: np.ndarray
    mean_r: float
    subject_id: str = "sub-01"
    degenerate_parcels: list = field(default_factory=list)
    per_group_r: dict | None = None

    def to_dict(self):
        return {
            "subject_id": self.subject_id,
            "mean_r": float(self.mean_r),
            "n_parcels": int(self.per_parcel_r.size),
            "degenerate_parcels": [int(i) for i in self.degenerate_parcels],
            "per_group_r": None if self.per_group_r is None
            else {k: float(v) for k, v in self.per_group_r.items()},
        }


def pearson_per_parcel(pred, truth, subject_id="sub-01"):
    """Column-wise sample Pearson correlation.

    Columns with zero variance on either side score 0 and are listed in
    ``degenerate_parcels``.
    """
    P = check_matrix(pred, "pred")
    Y = check_matrix(truth, "truth")
    if P.shape != Y.shape:
        raise ValueError(f"shape mismatch: pred {P.shape} vs truth {Y.shape}")
    if P.shape[0] < 3:
        raise ValueError(f"need at least 3 time points, got {P.shape[0]}")
    Pc = P - P.mean(axis=0)
    Yc = Y - Y.mean(axis=0)
    sp = np.sqrt(np.einsum("ij,ij->j", Pc, Pc))
    sy = np.sqrt(np.einsum("ij,ij->j", Yc, Yc))
    cov = np.einsum("ij,ij->j", Pc, Yc)
    degenerate = (sp == 0) | (sy == 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(degenerate, 0.0, cov / np.where(degenerate, 1.0, sp * sy))
    r = np.clip(r, -1.0, 1.0)
    return ScoreReport(r, float(r.mean()), subject_id, np.flatnonzero(degenerate).tolist())


def aggregate_subjects(reports):
    """Mean over subjects of each subject's parcel-mean r."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to aggregate")
    return float(np.mean([r.mean_r for r in reports]))


def group_scores(report, groups):
    n = report.per_parcel_r.size
    out = {}
    for name, idx in groups.items():
        idx = np.asarray(idx, dtype=int)
        if idx.size == 0:
            raise ValueError(f"group {name!r} is empty")
        if idx.min() < 0 or idx.max() >= n:
            raise ValueError(f"group {name!r} has indices outside [0, {n})")
        out[name] = float(report.per_parcel_r[idx].mean())
    report.per_group_r = out
    return out


def load_groups(path):
    raw = json.loads(Path(path).read_text())
    return {str(k): [int(i) for i in v] for k, v in raw.items()}


def write_report(report, out_prefix):
    """Write ``<prefix>.csv`` (parcel_index, r) and ``<prefix>.json``."""
    out_prefix = Path(out_prefix)
    with open(out_prefix.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parcel_index", "r"])
        for i, r in enumerate(report.per_parcel_r):
            w.writerow([i, repr(float(r))])
    out_prefix.with_suffix(".json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
