"""Synthetic multimodal datasets with planted encoding weights and lags."""

from dataclasses import asdict, dataclass, field

import numpy as np

from .alignment import AlignmentConfig, build_design
from .data import SPLIT_ALPHABET, TimeSeriesMatrix
from .seeding import substream

__all__ = ["SynthConfig", "SyntheticDataset", "generate_synthetic", "default_run_tags"]

_TAG_ORDER = list(SPLIT_ALPHABET.values())


def default_run_tags(n_runs):
    """Run ``i`` gets the ``i``-th dataset tag, cycling s01..s07, bourne, wolf, figures, life."""
    return [_TAG_ORDER[i % len(_TAG_ORDER)] for i in range(n_runs)]


@dataclass
class SynthConfig:
    """Parameters of a synthetic dataset.

    Every parcel is a weighted sum of lagged features from each modality
    plus Gaussian noise. With ``coverage="complementary"`` parcel ``p`` is
    driven mainly by modality ``p % M`` (gain 1) and weakly by the others
    (``cross_gain``); with ``"shared"`` all gains are 1.
    """

    n_runs: int = 6
    trs_per_run: int = 500
    modalities: dict = field(default_factory=lambda: {"vision": 64, "audio": 32, "text": 128})
    n_parcels: int = 100
    noise: float = 1.0
    hrf_delay: int = 3
    stimulus_window: int = 1
    coverage: str = "complementary"
    cross_gain: float = 0.2
    feature_autocorr: float = 0.3
    hmm_states: int = 0
    hmm_separation: float = 3.0
    hmm_self_transition: float = 0.95
    tr_seconds: float = 1.49
    seed: int = 0

    def validate(self):
        if self.n_runs < 1 or self.trs_per_run < 1 or self.n_parcels < 1:
            raise ValueError("n_runs, trs_per_run and n_parcels must be positive")
        if not self.modalities or any(int(d) < 1 for d in self.modalities.values()):
            raise ValueError("every modality needs a positive feature dimension")
        if self.noise < 0 or self.hmm_states < 0:
            raise ValueError("noise and hmm_states must be nonnegative")
        if self.coverage not in ("complementary", "shared"):
            raise ValueError(f"unknown coverage {self.coverage!r}")
        AlignmentConfig(self.stimulus_window, self.hrf_delay)


@dataclass
class SyntheticDataset:
    features: dict
    bold: TimeSeriesMatrix
    ground_truth: dict
    run_tags: list

    def run_slice(self, i):
        return slice(*self.bold.runs()[i])


def _ar1(rng, T, D, rho):
    e = rng.standard_normal((T, D))
    if rho == 0:
        return e
    out = np.empty_like(e)
    out[0] = e[0]
    c = np.sqrt(1 - rho ** 2)
    for t in range(1, T):
        out[t] = rho * out[t - 1] + c * e[t]
    return out


def generate_synthetic(config):
    """Build features, BOLD and a record of every planted parameter.

    Deterministic given ``config.seed``.
    """
    config.validate()
    seed = config.seed
    T = config.n_runs * config.trs_per_run
    bounds = tuple(range(0, T, config.trs_per_run))
    names = list(config.modalities)
    M, P = len(names), config.n_parcels
    align = AlignmentConfig(config.stimulus_window, config.hrf_delay)

    gains = np.full((M, P), 1.0)
    if config.coverage == "complementary":
        gains[:] = config.cross_gain
        gains[np.arange(P) % M, np.arange(P)] = 1.0

    features, weights = {}, {}
    signal = np.zeros((T, P))
    w_rng = substream(seed, "synth/weights")
    for m, name in enumerate(names):
        D = int(config.modalities[name])
        f_rng = substream(seed, f"synth/features/{name}")
        data = np.vstack([_ar1(f_rng, config.trs_per_run, D, config.feature_autocorr)
                          for _ in range(config.n_runs)])
        feats = TimeSeriesMatrix(data, bounds, config.tr_seconds)
        design, _ = build_design(feats, align)
        W = w_rng.standard_normal((D * config.stimulus_window, P)) / np.sqrt(D * config.stimulus_window)
        W *= gains[m]
        signal += design.data @ W
        features[name] = feats
        weights[name] = W

    truth = {
        "config": asdict(config),
        "weights": weights,
        "gains": gains,
        "run_boundaries": list(bounds),
    }

    if config.hmm_states > 0:
        K = config.hmm_states
        h_rng = substream(seed, "synth/hmm")
        s = config.hmm_self_transition
        A = np.full((K, K), (1 - s) / max(K - 1, 1))
        np.fill_diagonal(A, s if K > 1 else 1.0)
        means = h_rng.standard_normal((K, P)) * config.hmm_separation
        z = np.empty(T, dtype=int)
        u = h_rng.random(T)
        for t in range(T):
            row = np.full(K, 1.0 / K) if t in bounds else A[z[t - 1]]
            z[t] = min(int(np.searchsorted(np.cumsum(row), u[t])), K - 1)
        signal += means[z]
        truth.update(hmm_transmat=A, hmm_means=means, hmm_states=z)

    noise = substream(seed, "synth/noise").standard_normal((T, P)) * config.noise
    bold = TimeSeriesMatrix(signal + noise, bounds, config.tr_seconds)
    truth["signal"] = signal
    return SyntheticDataset(features, bold, truth, default_run_tags(config.n_runs))
