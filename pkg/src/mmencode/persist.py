"""Save fitted estimators as matrix containers with a JSON index."""

import numpy as np

from .data import load_container, save_container
from .decomposition import SubsampledPCA
from .encoding import LaggedRidgeEncoder
from .hmm.model import GaussianHMM, GaussianLinearHMM
from .hmm.preprocess import HmmPreprocessor
from .ridge import RidgeLOOCV
from .stacking import StackedRegression


def _pca_arrays(pca, prefix):
    return {
        f"{prefix}mean": pca.mean_,
        f"{prefix}components": pca.components_,
        f"{prefix}explained_variance": pca.explained_variance_,
    }


def _pca_from(arrays, prefix, meta):
    pca = SubsampledPCA(int(meta[f"{prefix}n_components"]), int(meta[f"{prefix}stride"]))
    pca.mean_ = arrays[f"{prefix}mean"].ravel()
    pca.components_ = arrays[f"{prefix}components"]
    pca.explained_variance_ = arrays[f"{prefix}explained_variance"].ravel()
    pca.n_features_in_ = pca.components_.shape[1]
    return pca


def _pca_meta(pca, prefix):
    return {f"{prefix}n_components": int(pca.components_.shape[0]), f"{prefix}stride": int(pca.stride)}


def save_model(model, path, **extra_meta):
    """Write any supported fitted estimator to ``path``."""
    meta = dict(extra_meta)
    if isinstance(model, SubsampledPCA):
        arrays = _pca_arrays(model, "")
        meta.update(kind="pca", **_pca_meta(model, ""))
    elif isinstance(model, RidgeLOOCV):
        arrays = {"weights": model.coef_, "intercept": model.intercept_,
                  "alphas": model.alpha_, "alpha_grid": model.alphas_}
        meta.update(kind="ridge", standardize=bool(model.standardize))
    elif isinstance(model, LaggedRidgeEncoder):
        arrays = _pca_arrays(model.pca_, "pca_")
        arrays.update(weights=model.ridge_.coef_, intercept=model.ridge_.intercept_,
                      alphas=model.ridge_.alpha_, alpha_grid=model.ridge_.alphas_)
        meta.update(kind="encoder", stimulus_window=int(model.stimulus_window),
                    hrf_delay=int(model.hrf_delay),
                    n_components=int(model.n_components_), standardize=bool(model.standardize),
                    **_pca_meta(model.pca_, "pca_"))
    elif isinstance(model, StackedRegression):
        arrays = {"weights": model.weights_, "intercept": model.intercept_}
        if model.standardize_predictions:
            arrays.update(pred_mean=model.pred_mean_, pred_scale=model.pred_scale_)
        meta.update(kind="stacking", mode=model.mode,
                    standardize_predictions=bool(model.standardize_predictions),
                    degenerate_parcels=[int(i) for i in model.degenerate_parcels_])
    elif isinstance(model, (GaussianHMM, GaussianLinearHMM)):
        K = model.n_states_
        arrays = {"pi": model.startprob_, "A": model.transmat_}
        for k in range(K):
            arrays[f"mu_{k}"] = model.means_[k]
            arrays[f"sigma_{k}"] = model.covars_[k]
            if model.kind == "gaussian_linear":
                arrays[f"beta_{k}"] = model.coef_[k]
        if hasattr(model, "free_energy_"):
            arrays["free_energy_trace"] = model.free_energy_
        meta.update(kind="hmm", hmm_kind=model.kind, n_states=int(K),
                    params={k: v for k, v in model.get_params().items()})
    elif isinstance(model, HmmPreprocessor):
        arrays = _pca_arrays(model.pca_y_, "pca_y_")
        meta.update(kind="hmm_preprocessor", n_sessions=len(model.session_stats_y_),
                    has_x=model.session_stats_x_ is not None, **_pca_meta(model.pca_y_, "pca_y_"))
        for i, (m, s) in enumerate(model.session_stats_y_):
            arrays[f"y_mean_{i}"], arrays[f"y_std_{i}"] = m, s
        if model.session_stats_x_ is not None:
            for i, (m, s) in enumerate(model.session_stats_x_):
                arrays[f"x_mean_{i}"], arrays[f"x_std_{i}"] = m, s
            if model.pca_x_ is not None:
                arrays.update(_pca_arrays(model.pca_x_, "pca_x_"))
                meta.update(_pca_meta(model.pca_x_, "pca_x_"))
    else:
        raise TypeError(f"cannot save {type(model).__name__}")
    save_container(path, arrays, meta)


def load_model(path):
    arrays, meta = load_container(path)
    kind = meta.get("kind")
    vec = lambda name: arrays[name].ravel()  # noqa: E731
    if kind == "pca":
        return _pca_from(arrays, "", meta)
    if kind in ("ridge", "encoder"):
        ridge = RidgeLOOCV(alphas=vec("alpha_grid"), standardize=meta["standardize"])
        ridge.coef_ = arrays["weights"]
        ridge.intercept_ = vec("intercept")
        ridge.alpha_ = vec("alphas")
        ridge.alphas_ = vec("alpha_grid")
        ridge.n_features_in_ = ridge.coef_.shape[0]
        if kind == "ridge":
            return ridge
        enc = LaggedRidgeEncoder(meta["n_components"], meta["stimulus_window"], meta["hrf_delay"],
                                 meta["pca_stride"], list(ridge.alphas_), meta["standardize"])
        enc.pca_ = _pca_from(arrays, "pca_", meta)
        enc.ridge_ = ridge
        enc.n_components_ = meta["n_components"]
        enc.n_features_in_ = enc.pca_.n_features_in_
        return enc
    if kind == "stacking":
        st = StackedRegression(meta["mode"], meta["standardize_predictions"])
        st.weights_ = arrays["weights"]
        st.intercept_ = vec("intercept")
        st.degenerate_parcels_ = np.asarray(meta["degenerate_parcels"], dtype=int)
        st.n_parcels_, st.n_sets_ = st.weights_.shape
        if st.standardize_predictions:
            st.pred_mean_, st.pred_scale_ = arrays["pred_mean"], arrays["pred_scale"]
        return st
    if kind == "hmm":
        K = meta["n_states"]
        means = np.array([vec(f"mu_{k}") for k in range(K)])
        covars = np.array([arrays[f"sigma_{k}"] for k in range(K)])
        if meta["hmm_kind"] == "gaussian_linear":
            model = GaussianLinearHMM.from_params(vec("pi"), arrays["A"], means, covars,
                                                  np.array([arrays[f"beta_{k}"] for k in range(K)]))
        else:
            model = GaussianHMM.from_params(vec("pi"), arrays["A"], means, covars)
        model.set_params(**meta["params"])
        if "free_energy_trace" in arrays:
            model.free_energy_ = vec("free_energy_trace")
        return model
    if kind == "hmm_preprocessor":
        prep = HmmPreprocessor(meta.get("pca_x_n_components"), meta["pca_y_n_components"])
        prep.pca_y_ = _pca_from(arrays, "pca_y_", meta)
        n = meta["n_sessions"]
        prep.session_stats_y_ = [(vec(f"y_mean_{i}"), vec(f"y_std_{i}")) for i in range(n)]
        prep.session_stats_x_ = None
        prep.pca_x_ = None
        if meta["has_x"]:
            prep.session_stats_x_ = [(vec(f"x_mean_{i}"), vec(f"x_std_{i}")) for i in range(n)]
            if "pca_x_n_components" in meta:
                prep.pca_x_ = _pca_from(arrays, "pca_x_", meta)
        return prep
    raise ValueError(f"{path}: unknown model kind {kind!r}")
