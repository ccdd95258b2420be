"""Time-series containers, on-disk matrix formats, manifests and split shorthands."""

from __future__ import annotations

import csv
import json
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "TimeSeriesMatrix",
    "MatrixFormatError",
    "EmptyMatrixError",
    "DimensionMismatchError",
    "NonFiniteError",
    "SplitShorthandError",
    "ManifestError",
    "read_matrix",
    "write_matrix",
    "save_container",
    "load_container",
    "RunSpec",
    "RunManifest",
    "load_manifest",
    "DatasetSplit",
    "parse_split_shorthand",
    "SPLIT_ALPHABET",
]

MAGIC = b"MBEM"
CONTAINER_MAGIC = b"MBEC"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHBBQQ")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class MatrixFormatError(ValueError):
    """Malformed header or payload in a matrix file."""


class EmptyMatrixError(MatrixFormatError):
    """A matrix file declares zero rows or zero columns."""


class DimensionMismatchError(MatrixFormatError):
    """Declared dimensions disagree with the payload."""


class NonFiniteError(ValueError):
    """NaN or Inf found where finite data is required."""


@dataclass(frozen=True, eq=False)
class TimeSeriesMatrix:
    """Dense T x D matrix with run segmentation.

    Parameters
    ----------
    data : ndarray of shape (T, D)
    run_boundaries : tuple of int
        Start row of each run. Must begin at 0 and be strictly increasing;
        the last run ends at T.
    tr_seconds : float
        Duration of one TR in seconds.
    """

    data: np.ndarray
    run_boundaries: tuple = (0,)
    tr_seconds: float = 1.49

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValueError(f"expected a 2-D matrix, got shape {data.shape}")
        if data.shape[0] == 0 or data.shape[1] == 0:
            raise EmptyMatrixError("empty matrix")
        if not np.all(np.isfinite(data)):
            raise NonFiniteError("matrix contains NaN or Inf")
        bounds = tuple(int(b) for b in self.run_boundaries)
        if not bounds or bounds[0] != 0:
            raise ValueError("run_boundaries must start at 0")
        if any(b1 <= b0 for b0, b1 in zip(bounds, bounds[1:])) or bounds[-1] >= data.shape[0]:
            raise ValueError(f"run_boundaries {bounds} invalid for {data.shape[0]} rows")
        if not self.tr_seconds > 0:
            raise ValueError("tr_seconds must be positive")
        data = data.view()
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "run_boundaries", bounds)
        object.__setattr__(self, "tr_seconds", float(self.tr_seconds))

    @property
    def shape(self):
        return self.data.shape

    @property
    def n_runs(self):
        return len(self.run_boundaries)

    @property
    def lengths(self):
        """Row count of every run."""
        edges = list(self.run_boundaries) + [self.data.shape[0]]
        return np.diff(edges)

    def runs(self):
        """Yield ``(start, stop)`` row ranges of each run."""
        edges = list(self.run_boundaries) + [self.data.shape[0]]
        return list(zip(edges[:-1], edges[1:]))

    def with_data(self, data):
        """Same segmentation, new values (row count must match)."""
        return TimeSeriesMatrix(data, self.run_boundaries, self.tr_seconds)

    @classmethod
    def concatenate(cls, parts):
        """Stack matrices in time, each part's runs kept separate."""
        parts = list(parts)
        if not parts:
            raise ValueError("nothing to concatenate")
        bounds, offset = [], 0
        for p in parts:
            bounds.extend(offset + b for b in p.run_boundaries)
            offset += p.shape[0]
        return cls(np.vstack([p.data for p in parts]), tuple(bounds), parts[0].tr_seconds)

    def __eq__(self, other):
        if not isinstance(other, TimeSeriesMatrix):
            return NotImplemented
        return (
            self.run_boundaries == other.run_boundaries
            and self.tr_seconds == other.tr_seconds
            and self.data.shape == other.data.shape
            and bool(np.array_equal(self.data, other.data))
        )

    __hash__ = None


def as_matrix(X):
    """Return ``(ndarray, run_boundaries)`` for an array or a TimeSeriesMatrix."""
    if isinstance(X, TimeSeriesMatrix):
        return np.asarray(X.data, dtype=float), X.run_boundaries
    return np.asarray(X, dtype=float), None


# -- binary / csv matrix files ------------------------------------------------


def _encode_matrix(data, dtype="f8"):
    dt = np.dtype("<f4") if np.dtype(dtype) == np.float32 else np.dtype("<f8")
    code = 0 if dt == np.dtype("<f4") else 1
    rows, cols = data.shape
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, code, 0, rows, cols)
    return header + np.ascontiguousarray(data, dtype=dt).tobytes(order="C")


def _decode_matrix(buf):
    if len(buf) < _HEADER.size:
        raise MatrixFormatError("truncated header")
    magic, version, code, reserved, rows, cols = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise MatrixFormatError(f"bad magic bytes {magic!r}")
    if version != FORMAT_VERSION:
        raise MatrixFormatError(f"unsupported format version {version}")
    if code not in _DTYPES or reserved != 0:
        raise MatrixFormatError(f"bad dtype code {code} / reserved byte {reserved}")
    if rows == 0 or cols == 0:
        raise EmptyMatrixError("empty matrix")
    dt = _DTYPES[code]
    expected = rows * cols * dt.itemsize
    payload = buf[_HEADER.size:]
    if len(payload) != expected:
        raise DimensionMismatchError(
            f"header declares {rows}x{cols} ({expected} bytes) but payload has {len(payload)} bytes"
        )
    return np.frombuffer(payload, dtype=dt).reshape(rows, cols).astype(np.float64)


def _check_finite(data):
    if not np.all(np.isfinite(data)):
        raise NonFiniteError("matrix contains NaN or Inf")
    return data


def read_matrix(path, format=None, run_boundaries=(0,), tr_seconds=1.49):
    """Read a matrix file into a :class:`TimeSeriesMatrix`.

    ``format`` is ``"binary"`` or ``"csv"``; inferred from the suffix when
    omitted (``.csv`` means csv, anything else binary).
    """
    path = Path(path)
    fmt = format or ("csv" if path.suffix.lower() == ".csv" else "binary")
    if fmt == "binary":
        data = _decode_matrix(path.read_bytes())
    elif fmt == "csv":
        rows = []
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), 1):
                if not row:
                    continue
                try:
                    rows.append([float(v) for v in row])
                except ValueError as exc:
                    raise MatrixFormatError(f"{path}:{lineno}: {exc}") from None
        if not rows:
            raise EmptyMatrixError("empty matrix")
        if len({len(r) for r in rows}) != 1:
            raise DimensionMismatchError(f"{path}: ragged rows")
        data = np.array(rows, dtype=np.float64)
    else:
        raise ValueError(f"unknown matrix format {fmt!r}")
    _check_finite(data)
    return TimeSeriesMatrix(data, run_boundaries, tr_seconds)


def write_matrix(m, path, format=None, dtype="f8"):
    """Write a matrix (TimeSeriesMatrix or 2-D array) to ``path``."""
    data, _ = as_matrix(m)
    if data.ndim != 2:
        raise ValueError("write_matrix expects a 2-D matrix")
    path = Path(path)
    fmt = format or ("csv" if path.suffix.lower() == ".csv" else "binary")
    if fmt == "binary":
        path.write_bytes(_encode_matrix(data, dtype))
    elif fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            for row in data:
                writer.writerow([repr(float(v)) for v in row])
    else:
        raise ValueError(f"unknown matrix format {fmt!r}")


# -- container: several named matrices + JSON metadata in one file --------------
#
# layout: b"MBEC" | u32 index length | JSON index | concatenated MBEM blobs
# index = {"meta": {...}, "entries": [{"name", "offset", "nbytes"}, ...]}


def save_container(path, arrays, meta=None):
    blobs, entries, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim > 2:
            raise ValueError(f"{name}: containers hold 2-D matrices only")
        if arr.size == 0:
            raise EmptyMatrixError(f"{name}: empty matrix")
        blob = _encode_matrix(arr)
        entries.append({"name": name, "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    index = json.dumps({"meta": meta or {}, "entries": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CONTAINER_MAGIC + struct.pack("<I", len(index)) + index)
        for blob in blobs:
            fh.write(blob)


def load_container(path):
    """Return ``(arrays, meta)``; arrays are 2-D float64 matrices."""
    buf = Path(path).read_bytes()
    if buf[:4] != CONTAINER_MAGIC:
        raise MatrixFormatError(f"{path}: not a matrix container")
    (n,) = struct.unpack_from("<I", buf, 4)
    index = json.loads(buf[8:8 + n])
    base = 8 + n
    arrays = {}
    for e in index["entries"]:
        start = base + e["offset"]
        arrays[e["name"]] = _decode_matrix(buf[start:start + e["nbytes"]])
    return arrays, index["meta"]


# -- dataset splits ---------------------------------------------------------------

SPLIT_ALPHABET = {
    "1": "s01", "2": "s02", "3": "s03", "4": "s04", "5": "s05", "6": "s06", "7": "s07",
    "B": "bourne", "W": "wolf", "F": "figures", "L": "life",
}


class SplitShorthandError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSplit:
    fit_tags: frozenset
    stack_tags: frozenset = frozenset()
    test_tags: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "fit_tags", frozenset(self.fit_tags))
        object.__setattr__(self, "stack_tags", frozenset(self.stack_tags))
        object.__setattr__(self, "test_tags", frozenset(self.test_tags))


def _parse_segment(segment, s):
    if not segment:
        raise SplitShorthandError(f"empty segment in {s!r}")
    tags = []
    for ch in segment:
        if ch not in SPLIT_ALPHABET:
            raise SplitShorthandError(f"unknown character {ch!r} in {s!r}")
        tag = SPLIT_ALPHABET[ch]
        if tag in tags:
            raise SplitShorthandError(f"duplicate character {ch!r} in {s!r}")
        tags.append(tag)
    return frozenset(tags)


def parse_split_shorthand(s, test=None):
    """Parse a fit/stack split written like ``"12346F-5BW"``.

    Digits 1-7 name Friends seasons, ``B``/``W``/``F``/``L`` the movies; the
    part after the dash is held out for stacking. ``test`` optionally gives
    a third segment in the same alphabet.

    >>> sorted(parse_split_shorthand("12-5B").stack_tags)
    ['bourne', 's05']
    """
    if not isinstance(s, str):
        raise SplitShorthandError("split shorthand must be a string")
    parts = s.split("-")
    if len(parts) > 2:
        raise SplitShorthandError(f"more than one dash in {s!r}")
    fit = _parse_segment(parts[0], s)
    stack = _parse_segment(parts[1], s) if len(parts) == 2 else frozenset()
    test_tags = _parse_segment(test, test) if test else frozenset()
    return DatasetSplit(fit, stack, test_tags)


# -- manifest ----------------------------------------------------------------------


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class RunSpec:
    run_id: str
    split_tags: frozenset
    feature_sources: dict
    bold_source: Path


@dataclass(frozen=True)
class RunManifest:
    runs: tuple
    parcel_count: int
    tr_seconds: float
    path: Path | None = field(default=None, compare=False)

    @property
    def model_names(self):
        names = set()
        for r in self.runs:
            names.update(r.feature_sources)
        return sorted(names)

    @property
    def tags(self):
        out = set()
        for r in self.runs:
            out.update(r.split_tags)
        return out

    def select(self, tags):
        """Runs carrying at least one of ``tags``, in manifest order."""
        tags = set(tags)
        missing = tags - self.tags
        if missing:
            raise ManifestError(f"split tag(s) not present in manifest: {sorted(missing)}")
        return [r for r in self.runs if r.split_tags & tags]

    def load_features(self, model, runs):
        parts = []
        for r in runs:
            if model not in r.feature_sources:
                raise ManifestError(f"run {r.run_id} has no features for model {model!r}")
            parts.append(read_matrix(r.feature_sources[model], tr_seconds=self.tr_seconds))
        return TimeSeriesMatrix.concatenate(parts)

    def load_bold(self, runs):
        parts = []
        for r in runs:
            m = read_matrix(r.bold_source, tr_seconds=self.tr_seconds)
            if m.shape[1] != self.parcel_count:
                raise ManifestError(
                    f"run {r.run_id}: bold has {m.shape[1]} parcels, manifest says {self.parcel_count}"
                )
            parts.append(m)
        return TimeSeriesMatrix.concatenate(parts)


def load_manifest(path):
    """Load a JSON manifest; relative file paths resolve against its directory."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from None
    base = path.parent
    try:
        tr = float(raw["tr_seconds"])
        parcels = int(raw["parcel_count"])
        runs_raw = raw["runs"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"manifest missing field: {exc}") from None
    if tr <= 0 or parcels <= 0:
        raise ManifestError("tr_seconds and parcel_count must be positive")
    runs, seen = [], set()
    for r in runs_raw:
        rid = str(r["run_id"])
        if rid in seen:
            raise ManifestError(f"duplicate run_id {rid!r}")
        seen.add(rid)
        feats = {k: base / v for k, v in r.get("features", {}).items()}
        bold = base / r["bold"]
        for p in [bold, *feats.values()]:
            if not p.exists():
                raise ManifestError(f"run {rid}: missing file {p}")
        runs.append(RunSpec(rid, frozenset(r.get("split_tags", [])), feats, bold))
    return RunManifest(tuple(runs), parcels, tr, path)


def dump_manifest(manifest_dict, path):
    Path(path).write_text(json.dumps(manifest_dict, indent=2, sort_keys=True) + "\n")


_CANON = re.compile(r"^[1-7BWFL]+(-[1-7BWFL]+)?$")


def is_canonical_shorthand(s):
    return bool(_CANON.match(s))
