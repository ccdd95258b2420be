"""Batch command-line interface.

Subcommands: synth, fit, predict, stack, hmm, eval, report. Every command
writes ``run_<command>.json`` with the resolved configuration, its hash,
the seed and checksums of every file read and written.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numerical
failure.
"""

import argparse
import csv
import hashlib
import itertools
import json
import logging
import sys
from pathlib import Path

import numpy as np
from scipy import linalg

from . import __version__
from .alignment import AlignmentError
from .data import (
    ManifestError,
    MatrixFormatError,
    NonFiniteError,
    SplitShorthandError,
    TimeSeriesMatrix,
    dump_manifest,
    load_manifest,
    parse_split_shorthand,
    read_matrix,
    save_container,
    write_matrix,
)
from .encoding import LaggedRidgeEncoder
from .evaluation import aggregate_subjects, group_scores, load_groups, pearson_per_parcel, write_report
from .hmm.pipeline import HmmPipelineConfig, predict_glhmm_pipeline
from .persist import load_model, save_model
from .seeding import subseed
from .stacking import StackedRegression
from .synth import SynthConfig, generate_synthetic

log = logging.getLogger("mmencode")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class UsageError(Exception):
    pass


DEFAULTS = {
    "seed": 0,
    "out": "out",
    "threads": None,
    # synth
    "runs": 6, "trs": 500, "models": "vision:64,audio:32,text:128", "parcels": 100,
    "noise": 1.0, "hrf_delay": 3, "sw": "1", "coverage": "complementary", "cross_gain": 0.2,
    "hmm_states": 0, "tr": 1.49, "feature_autocorr": 0.3,
    # fit / predict / stack
    "n_comp": "100", "pca_stride": 5, "pca_fit_split": None, "alphas": None,
    "standardize": False, "model_names": None, "test": None, "mode": "simplex",
    "standardize_predictions": False, "predictions": None,
    # hmm
    "kind": "gaussian_linear", "K": 10, "predictor_indices": None, "strategy": "i",
    "provider": None, "n_pcs_x": 10, "n_pcs_y": 100, "hmm_mode": "expectation",
    "train": None, "max_iter": 500, "tol": 1e-5,
    # eval / report
    "pred": None, "truth": None, "groups": None, "subjects": None, "scores": None,
}


# -- helpers ------------------------------------------------------------------------


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunLog:
    """Collects inputs/outputs of one command for the metadata file."""

    def __init__(self, command, cfg):
        self.command = command
        self.cfg = cfg
        self.inputs, self.outputs = set(), set()

    def read(self, *paths):
        self.inputs.update(str(p) for p in paths)

    def wrote(self, *paths):
        self.outputs.update(str(p) for p in paths)

    def finish(self, out_dir):
        cfg_json = json.dumps(self.cfg, sort_keys=True, default=str)
        meta = {
            "command": self.command,
            "version": __version__,
            "seed": self.cfg.get("seed"),
            "config": json.loads(cfg_json),
            "config_hash": hashlib.sha256(cfg_json.encode()).hexdigest(),
            "inputs": {p: _sha256(p) for p in sorted(self.inputs) if Path(p).is_file()},
            "outputs": {p: _sha256(p) for p in sorted(self.outputs) if Path(p).is_file()},
        }
        path = Path(out_dir) / f"run_{self.command}.json"
        path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _int_list(s):
    if s is None:
        return None
    if isinstance(s, (list, tuple)):
        return [int(v) for v in s]
    if isinstance(s, int):
        return [s]
    return [int(v) for v in str(s).split(",") if v.strip()]


def _float_list(s):
    if s is None:
        return None
    if isinstance(s, (list, tuple)):
        return [float(v) for v in s]
    return [float(v) for v in str(s).split(",") if v.strip()]


def _parse_models(spec):
    out = {}
    for item in str(spec).split(","):
        name, _, dim = item.partition(":")
        if not name or not dim:
            raise UsageError(f"bad --models entry {item!r}; expected name:dim")
        try:
            out[name.strip()] = int(dim)
        except ValueError:
            raise UsageError(f"bad dimension in --models entry {item!r}") from None
    return out


def _resolve_split(cfg, manifest):
    if not cfg.get("split"):
        raise UsageError("--split is required")
    split = parse_split_shorthand(cfg["split"], cfg.get("test"))
    if split.fit_tags & split.stack_tags:
        raise UsageError(f"fit and stack tags overlap: {sorted(split.fit_tags & split.stack_tags)}")
    fit_runs = manifest.select(split.fit_tags)
    stack_runs = manifest.select(split.stack_tags) if split.stack_tags else []
    used = {r.run_id for r in fit_runs} | {r.run_id for r in stack_runs}
    if split.test_tags:
        test_runs = manifest.select(split.test_tags)
    else:
        test_runs = [r for r in manifest.runs if r.run_id not in used]
    fit_ids, stack_ids, test_ids = ({r.run_id for r in rs} for rs in (fit_runs, stack_runs, test_runs))
    if fit_ids & stack_ids:
        raise UsageError(f"runs {sorted(fit_ids & stack_ids)} fall in both fit and stack splits")
    if test_ids & (fit_ids | stack_ids):
        raise UsageError(f"runs {sorted(test_ids & (fit_ids | stack_ids))} fall in the test split and a training split")
    if not fit_runs:
        raise UsageError("empty fit split")
    return split, fit_runs, stack_runs, test_runs


def _model_names(cfg, manifest):
    names = cfg.get("model_names")
    if names is None:
        return manifest.model_names
    names = names if isinstance(names, list) else [n for n in str(names).split(",") if n]
    missing = [n for n in names if n not in manifest.model_names]
    if missing:
        raise UsageError(f"model(s) not in manifest: {missing}")
    return names


def _bold(manifest, runs, rl):
    rl.read(*(r.bold_source for r in runs))
    return manifest.load_bold(runs)


def _features(manifest, model, runs, rl):
    rl.read(*(r.feature_sources[model] for r in runs if model in r.feature_sources))
    return manifest.load_features(model, runs)


def _per_model_value(value, model, cast):
    """Config values may be scalars, lists, or ``{model: value}`` dicts."""
    if isinstance(value, dict):
        value = value.get(model, value.get("default"))
    if isinstance(value, (list, tuple)):
        return [cast(v) for v in value]
    return [cast(v) for v in str(value).split(",") if str(v).strip()]


# -- commands ---------------------------------------------------------------------


def cmd_synth(cfg):
    out = Path(cfg["out"])
    models = _parse_models(cfg["models"])
    sw = _int_list(cfg["sw"])
    synth_cfg = SynthConfig(
        n_runs=int(cfg["runs"]), trs_per_run=int(cfg["trs"]), modalities=models,
        n_parcels=int(cfg["parcels"]), noise=float(cfg["noise"]), hrf_delay=int(cfg["hrf_delay"]),
        stimulus_window=sw[0], coverage=cfg["coverage"], cross_gain=float(cfg["cross_gain"]),
        feature_autocorr=float(cfg["feature_autocorr"]), hmm_states=int(cfg["hmm_states"]),
        tr_seconds=float(cfg["tr"]), seed=int(cfg["seed"]),
    )
    try:
        synth_cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ds = generate_synthetic(synth_cfg)
    rl = RunLog("synth", cfg)
    for sub in ["bold", *(f"features/{m}" for m in models)]:
        (out / sub).mkdir(parents=True, exist_ok=True)
    runs = []
    for i, tag in enumerate(ds.run_tags):
        rid = f"run-{i + 1:02d}"
        sl = ds.run_slice(i)
        bold_path = out / "bold" / f"{rid}.mbem"
        write_matrix(ds.bold.data[sl], bold_path)
        rl.wrote(bold_path)
        feats = {}
        for m in models:
            p = out / "features" / m / f"{rid}.mbem"
            write_matrix(ds.features[m].data[sl], p)
            rl.wrote(p)
            feats[m] = str(p.relative_to(out))
        runs.append({"run_id": rid, "split_tags": [tag], "features": feats,
                     "bold": str(bold_path.relative_to(out))})
    manifest = {"tr_seconds": synth_cfg.tr_seconds, "parcel_count": synth_cfg.n_parcels, "runs": runs}
    dump_manifest(manifest, out / "manifest.json")

    gt = ds.ground_truth
    arrays = {f"weights_{m}": w for m, w in gt["weights"].items()}
    arrays["gains"] = gt["gains"]
    meta = {"config": gt["config"], "run_boundaries": gt["run_boundaries"]}
    if "hmm_states" in gt:
        arrays.update(hmm_transmat=gt["hmm_transmat"], hmm_means=gt["hmm_means"],
                      hmm_states=gt["hmm_states"][None, :].astype(float))
    save_container(out / "ground_truth.mbc", arrays, meta)
    (out / "ground_truth.json").write_text(json.dumps(
        {"config": gt["config"], "run_tags": ds.run_tags, "arrays": sorted(arrays),
         "arrays_file": "ground_truth.mbc"}, indent=2, sort_keys=True) + "\n")
    rl.wrote(out / "manifest.json", out / "ground_truth.mbc", out / "ground_truth.json")
    rl.finish(out)
    print(f"wrote {len(runs)} runs x {len(models)} feature sources to {out}")


def cmd_fit(cfg):
    manifest = load_manifest(cfg["manifest"])
    out = Path(cfg["out"])
    (out / "models").mkdir(parents=True, exist_ok=True)
    rl = RunLog("fit", cfg)
    rl.read(cfg["manifest"])
    split, fit_runs, stack_runs, _ = _resolve_split(cfg, manifest)
    pca_runs = fit_runs
    if cfg.get("pca_fit_split"):
        pca_runs = manifest.select(parse_split_shorthand(cfg["pca_fit_split"]).fit_tags)
    alphas = _float_list(cfg.get("alphas"))
    bold_fit = _bold(manifest, fit_runs, rl)

    for model in _model_names(cfg, manifest):
        n_comps = _per_model_value(cfg["n_comp"], model, int)
        sws = _per_model_value(cfg["sw"], model, int)
        delay = _per_model_value(cfg["hrf_delay"], model, int)[0]
        stride = _per_model_value(cfg["pca_stride"], model, int)[0]
        X_fit = _features(manifest, model, fit_runs, rl)
        X_pca = _features(manifest, model, pca_runs, rl) if pca_runs is not fit_runs else None
        grid = list(itertools.product(sws, n_comps))

        def make(sw, k):
            return LaggedRidgeEncoder(k, sw, delay, stride, alphas, bool(cfg["standardize"]),
                                      clip_components=True)

        if len(grid) > 1:
            if not stack_runs:
                raise UsageError("a hyperparameter sweep scores on the stacking segment of --split")
            X_val = _features(manifest, model, stack_runs, rl)
            y_val = _bold(manifest, stack_runs, rl)
            rows = []
            for sw, k in grid:
                enc = make(sw, k).fit(X_fit, bold_fit, pca_data=X_pca)
                score = pearson_per_parcel(enc.predict(X_val).data, y_val.data).mean_r
                rows.append({"model": model, "sw": sw, "n_comp": k, "n_comp_effective": enc.n_components_,
                             "hrf_delay": delay, "mean_r": score})
                log.info("%s sw=%d n_comp=%d r=%.4f", model, sw, k, score)
            table = out / f"sweep_{model}.csv"
            with open(table, "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
                w.writeheader()
                for r in rows:
                    w.writerow({**r, "mean_r": repr(float(r["mean_r"]))})
            rl.wrote(table)
            best = max(rows, key=lambda r: r["mean_r"])
            sw, k = best["sw"], best["n_comp"]
            print(f"{model}: best sw={sw} n_comp={k} r={best['mean_r']:.4f} ({len(rows)} configurations)")
        else:
            sw, k = grid[0]
        enc = make(sw, k).fit(X_fit, bold_fit, pca_data=X_pca)
        path = out / "models" / f"{model}.mbc"
        save_model(enc, path, model_name=model, fit_runs=[r.run_id for r in fit_runs])
        rl.wrote(path)
        print(f"{model}: fitted sw={sw} n_comp={enc.n_components_} on {len(fit_runs)} runs")
    rl.finish(out)


def cmd_predict(cfg):
    manifest = load_manifest(cfg["manifest"])
    out = Path(cfg["out"])
    rl = RunLog("predict", cfg)
    rl.read(cfg["manifest"])
    _, fit_runs, stack_runs, test_runs = _resolve_split(cfg, manifest)
    runs = stack_runs + test_runs
    for model in _model_names(cfg, manifest):
        mpath = out / "models" / f"{model}.mbc"
        if not mpath.exists():
            raise ManifestError(f"no fitted model at {mpath}; run `fit` first")
        rl.read(mpath)
        enc = load_model(mpath)
        (out / "predictions" / model).mkdir(parents=True, exist_ok=True)
        for r in runs:
            X = _features(manifest, model, [r], rl)
            p = out / "predictions" / model / f"{r.run_id}.mbem"
            write_matrix(enc.predict(X).data, p)
            rl.wrote(p)
    rl.finish(out)
    print(f"wrote predictions for {len(runs)} runs")


def _load_predictions(pred_dir, model, runs, rl):
    parts = []
    for r in runs:
        p = Path(pred_dir) / model / f"{r.run_id}.mbem"
        if not p.exists():
            raise ManifestError(f"missing prediction {p}; run `predict` first")
        rl.read(p)
        parts.append(read_matrix(p))
    return TimeSeriesMatrix.concatenate(parts)


def cmd_stack(cfg):
    if "," in str(cfg.get("split") or ""):
        return _split_search(cfg)
    manifest = load_manifest(cfg["manifest"])
    out = Path(cfg["out"])
    rl = RunLog("stack", cfg)
    rl.read(cfg["manifest"])
    split, fit_runs, stack_runs, test_runs = _resolve_split(cfg, manifest)
    if not stack_runs:
        raise UsageError("stacking needs a stacking segment in --split (e.g. 1234-5)")
    names = _model_names(cfg, manifest)
    if len(names) < 2:
        raise UsageError(f"stacking needs at least 2 prediction sets, got {len(names)}")
    pred_dir = Path(cfg.get("predictions") or out / "predictions")
    preds_stack = [_load_predictions(pred_dir, m, stack_runs, rl).data for m in names]
    truth = _bold(manifest, stack_runs, rl)
    st = StackedRegression(cfg["mode"], bool(cfg["standardize_predictions"])).fit(preds_stack, truth.data)
    path = out / "models" / "stacking.mbc"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_model(st, path, model_names=names, stack_runs=[r.run_id for r in stack_runs])
    rl.wrote(path)

    fit_report = pearson_per_parcel(st.predict(preds_stack), truth.data, subject_id="stack-fit")
    fit_report.degenerate_parcels = sorted(set(fit_report.degenerate_parcels)
                                           | set(st.degenerate_parcels_.tolist()))
    (out / "reports").mkdir(parents=True, exist_ok=True)
    write_report(fit_report, out / "reports" / "stack_fit")
    rl.wrote(out / "reports" / "stack_fit.csv", out / "reports" / "stack_fit.json")

    (out / "predictions" / "stacked").mkdir(parents=True, exist_ok=True)
    for r in test_runs:
        preds = [_load_predictions(pred_dir, m, [r], rl).data for m in names]
        p = out / "predictions" / "stacked" / f"{r.run_id}.mbem"
        write_matrix(st.predict(preds), p)
        rl.wrote(p)
    rl.finish(out)
    print(f"stacked {len(names)} prediction sets; in-sample r={fit_report.mean_r:.4f}; "
          f"wrote {len(test_runs)} test runs")


def _split_search(cfg):
    """Fit, predict and stack once per split shorthand; score all on the same test runs."""
    splits = [v.strip() for v in str(cfg["split"]).split(",") if v.strip()]
    if not cfg.get("test"):
        raise UsageError("a split search needs --test so every split is scored on the same runs")
    if len(set(splits)) != len(splits):
        raise UsageError("duplicate split in --split list")
    manifest = load_manifest(cfg["manifest"])
    out = Path(cfg["out"])
    rl = RunLog("stack", cfg)
    rl.read(cfg["manifest"])
    test_runs = manifest.select(parse_split_shorthand(splits[0], cfg["test"]).test_tags)
    truth = _bold(manifest, test_runs, rl).data
    names = _model_names(cfg, manifest)
    rows = []
    for split in splits:
        sub_cfg = {**cfg, "split": split, "out": str(out / "splits" / split), "predictions": None}
        Path(sub_cfg["out"]).mkdir(parents=True, exist_ok=True)
        for step in (cmd_fit, cmd_predict, cmd_stack):
            step(sub_cfg)
        pred_dir = Path(sub_cfg["out"]) / "predictions"
        for model in names + ["stacked"]:
            pred = np.vstack([read_matrix(pred_dir / model / f"{r.run_id}.mbem").data
                              for r in test_runs])
            rows.append({"split": split, "model": model,
                         "mean_r": repr(float(pearson_per_parcel(pred, truth).mean_r))})
    table = out / "split_search.csv"
    with open(table, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["split", "model", "mean_r"], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    rl.wrote(table)
    rl.finish(out)
    best = max((r for r in rows if r["model"] == "stacked"), key=lambda r: float(r["mean_r"]))
    print(f"best split {best['split']}: stacked test r={float(best['mean_r']):.4f}")


def _gather(path, manifest, rl, kind):
    """A matrix file, or a directory of per-run files resolved through the manifest."""
    path = Path(path)
    if path.is_file():
        rl.read(path)
        return read_matrix(path), None
    if not path.is_dir():
        raise ManifestError(f"{kind} path {path} does not exist")
    files = sorted(path.glob("*.mbem"))
    if not files:
        raise ManifestError(f"no .mbem files in {path}")
    rl.read(*files)
    run_ids = [f.stem for f in files]
    return TimeSeriesMatrix.concatenate([read_matrix(f) for f in files]), run_ids


def cmd_eval(cfg):
    out = Path(cfg["out"])
    (out / "reports").mkdir(parents=True, exist_ok=True)
    rl = RunLog("eval", cfg)
    preds = cfg.get("pred") or []
    truths = cfg.get("truth") or []
    if not preds:
        raise UsageError("--pred is required")
    manifest = load_manifest(cfg["manifest"]) if cfg.get("manifest") else None
    if manifest is not None:
        rl.read(cfg["manifest"])
    subjects = cfg.get("subjects") or [f"sub-{i + 1:02d}" for i in range(len(preds))]
    if len(subjects) != len(preds):
        raise UsageError("--subjects must match the number of --pred entries")
    if truths and len(truths) != len(preds):
        raise UsageError("--truth must be given once per --pred")
    groups = load_groups(cfg["groups"]) if cfg.get("groups") else None
    if groups:
        rl.read(cfg["groups"])

    reports = []
    for i, pred_path in enumerate(preds):
        pred, run_ids = _gather(pred_path, manifest, rl, "prediction")
        if truths:
            truth, _ = _gather(truths[i], manifest, rl, "truth")
        elif manifest is not None and run_ids is not None:
            by_id = {r.run_id: r for r in manifest.runs}
            missing = [rid for rid in run_ids if rid not in by_id]
            if missing:
                raise ManifestError(f"prediction runs not in manifest: {missing}")
            truth = _bold(manifest, [by_id[rid] for rid in run_ids], rl)
        else:
            raise UsageError("give --truth, or --manifest with a prediction directory")
        rep = pearson_per_parcel(pred.data, truth.data, subject_id=subjects[i])
        if groups:
            group_scores(rep, groups)
        prefix = out / "reports" / f"eval_{subjects[i]}"
        write_report(rep, prefix)
        rl.wrote(prefix.with_suffix(".csv"), prefix.with_suffix(".json"))
        reports.append(rep)
        print(f"{subjects[i]}: mean r = {rep.mean_r:.6f}")
        for name, val in (rep.per_group_r or {}).items():
            print(f"  {name}: {val:.6f}")
    agg = aggregate_subjects(reports)
    summary = out / "reports" / "eval_summary.json"
    summary.write_text(json.dumps({"subjects": {r.subject_id: r.mean_r for r in reports},
                                   "aggregate_mean_r": agg}, indent=2, sort_keys=True) + "\n")
    rl.wrote(summary)
    print(f"aggregate: mean r = {agg:.6f}")
    rl.finish(out)


def cmd_report(cfg):
    out = Path(cfg["out"])
    rl = RunLog("report", cfg)
    paths = cfg.get("scores") or sorted((out / "reports").glob("eval_sub-*.json"))
    if not paths:
        raise UsageError("no score files given (--scores) or found under <out>/reports")
    rows = []
    for p in paths:
        rl.read(p)
        d = json.loads(Path(p).read_text())
        rows.append((d["subject_id"], float(d["mean_r"])))
    agg = float(np.mean([r for _, r in rows]))
    table = out / "report.csv"
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "mean_r"])
        for s, r in rows:
            w.writerow([s, repr(r)])
        w.writerow(["aggregate", repr(agg)])
    rl.wrote(table)
    for s, r in rows:
        print(f"{s:>12s}  {r:.6f}")
    print(f"{'aggregate':>12s}  {agg:.6f}")
    rl.finish(out)


def _indices(spec, rl):
    if spec is None:
        return None
    if isinstance(spec, list):
        return [int(i) for i in spec]
    p = Path(str(spec))
    if p.is_file():
        rl.read(p)
        text = p.read_text()
        try:
            return [int(i) for i in json.loads(text)]
        except json.JSONDecodeError:
            return [int(i) for i in text.replace(",", " ").split()]
    return _int_list(spec)


def cmd_hmm(cfg):
    manifest = load_manifest(cfg["manifest"])
    out = Path(cfg["out"])
    rl = RunLog("hmm", cfg)
    rl.read(cfg["manifest"])
    if not cfg.get("train") or not cfg.get("test"):
        raise UsageError("--train and --test split segments are required (e.g. --train 5 --test 6)")
    train_runs = manifest.select(parse_split_shorthand(cfg["train"]).fit_tags)
    test_runs = manifest.select(parse_split_shorthand(cfg["test"]).fit_tags)
    overlap = {r.run_id for r in train_runs} & {r.run_id for r in test_runs}
    if overlap:
        raise UsageError(f"train and test runs overlap: {sorted(overlap)}")
    kind = cfg["kind"]
    P = manifest.parcel_count
    Ytr = _bold(manifest, train_runs, rl)
    Yte = _bold(manifest, test_runs, rl)
    hcfg = HmmPipelineConfig(kind=kind, n_states=int(cfg["K"]), n_components_x=int(cfg["n_pcs_x"]),
                             n_components_y=int(cfg["n_pcs_y"]), mode=cfg["hmm_mode"],
                             max_iter=int(cfg["max_iter"]), tol=float(cfg["tol"]),
                             seed=subseed(int(cfg["seed"]), "hmm"))
    if kind == "gaussian_linear":
        pred_idx = _indices(cfg.get("predictor_indices"), rl)
        if not pred_idx:
            raise UsageError("gaussian_linear needs --predictor-indices")
        pred_idx = sorted(set(pred_idx))
        if min(pred_idx) < 0 or max(pred_idx) >= P:
            raise UsageError(f"predictor indices must lie in [0, {P})")
        dep_idx = [i for i in range(P) if i not in set(pred_idx)]
        if cfg["strategy"] == "i":
            test_x = Yte.data[:, pred_idx]
        elif cfg["strategy"] == "ii":
            if not cfg.get("provider"):
                raise UsageError("strategy ii needs --provider (directory of predicted runs)")
            prov = _load_predictions(Path(cfg["provider"]).parent, Path(cfg["provider"]).name, test_runs, rl)
            test_x = prov.data[:, pred_idx]
        else:
            raise UsageError(f"unknown strategy {cfg['strategy']!r}")
        pred = predict_glhmm_pipeline(
            Ytr.data[:, dep_idx], train_x=Ytr.data[:, pred_idx], test_x=test_x, cfg=hcfg,
            train_boundaries=Ytr.run_boundaries, test_boundaries=Yte.run_boundaries)
        truth = Yte.data[:, dep_idx]
    elif kind == "gaussian":
        dep_idx = list(range(P))
        pred = predict_glhmm_pipeline(Ytr.data, test_T=Yte.shape[0], cfg=hcfg,
                                      train_boundaries=Ytr.run_boundaries,
                                      test_boundaries=Yte.run_boundaries)
        truth = Yte.data
    else:
        raise UsageError(f"unknown HMM kind {kind!r}")

    (out / "hmm").mkdir(parents=True, exist_ok=True)
    tag = f"{kind}_{cfg['strategy']}" if kind == "gaussian_linear" else kind
    pred_path = out / "hmm" / f"pred_{tag}.mbem"
    write_matrix(pred, pred_path)
    rep = pearson_per_parcel(pred, truth, subject_id=tag)
    write_report(rep, out / "hmm" / f"score_{tag}")
    (out / "hmm" / f"dependent_parcels_{tag}.json").write_text(json.dumps(dep_idx) + "\n")
    rl.wrote(pred_path, out / "hmm" / f"score_{tag}.csv", out / "hmm" / f"score_{tag}.json")
    print(f"{tag}: mean r over {len(dep_idx)} dependent parcels = {rep.mean_r:.4f}")
    rl.finish(out)


# -- argument parsing -------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="mmencode", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--manifest")
        p.add_argument("--config", help="JSON file of option values; flags override it")
        p.add_argument("--split", help="fit/stack shorthand such as 12346-5BW")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--threads", type=int)
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    p = common(sub.add_parser("synth", help="generate a synthetic dataset"))
    p.add_argument("--runs", type=int)
    p.add_argument("--trs", type=int, help="TRs per run")
    p.add_argument("--models", help="comma list of name:dim")
    p.add_argument("--parcels", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--hrf-delay", type=int)
    p.add_argument("--sw", help="planted stimulus window")
    p.add_argument("--coverage", choices=["complementary", "shared"])
    p.add_argument("--cross-gain", type=float)
    p.add_argument("--feature-autocorr", type=float)
    p.add_argument("--hmm-states", type=int)
    p.add_argument("--tr", type=float)

    def encoder_flags(p, sweep_help):
        p.add_argument("--n-comp", help=f"PCs kept{sweep_help}")
        p.add_argument("--sw", help=f"stimulus window{sweep_help}")
        p.add_argument("--hrf-delay", type=int)
        p.add_argument("--pca-stride", type=int)
        p.add_argument("--pca-fit-split", help="shorthand segment of runs the PCA is fit on")
        p.add_argument("--alphas", help="comma list of ridge alphas")
        p.add_argument("--standardize", action="store_true", default=None)

    for name, helptext in [("fit", "fit PCA + lagged ridge per feature source"),
                           ("predict", "predict stacking and test runs with fitted models")]:
        p = common(sub.add_parser(name, help=helptext))
        p.add_argument("--test", help="test tags in shorthand letters (default: all other runs)")
        p.add_argument("--model-names", help="comma list of feature sources (default: all)")
        if name == "fit":
            encoder_flags(p, "; comma list sweeps")

    p = common(sub.add_parser(
        "stack", help="fit per-parcel stacking on the stacking split",
        description="With a comma list in --split (e.g. 1234-5,123-45) every split is fitted, "
                    "predicted, stacked and scored on the shared --test runs, and a results "
                    "table is written to split_search.csv."))
    p.add_argument("--test")
    p.add_argument("--model-names")
    encoder_flags(p, " (split search only)")
    p.add_argument("--mode", choices=["simplex", "ridge_unconstrained"])
    p.add_argument("--standardize-predictions", action="store_true", default=None)
    p.add_argument("--predictions", help="prediction directory (default <out>/predictions)")

    p = common(sub.add_parser("hmm", help="fMRI-to-fMRI prediction with a (GL)HMM"))
    p.add_argument("--train", help="training runs, shorthand letters")
    p.add_argument("--test", help="test runs, shorthand letters")
    p.add_argument("--kind", choices=["gaussian", "gaussian_linear"])
    p.add_argument("--K", type=int)
    p.add_argument("--predictor-indices", help="comma list, or a JSON/text file of parcel indices")
    p.add_argument("--strategy", choices=["i", "ii"])
    p.add_argument("--provider", help="directory of provider-model predictions per run")
    p.add_argument("--n-pcs-x", type=int)
    p.add_argument("--n-pcs-y", type=int)
    p.add_argument("--hmm-mode", choices=["expectation", "sample"])
    p.add_argument("--max-iter", type=int)
    p.add_argument("--tol", type=float)

    p = common(sub.add_parser("eval", help="per-parcel Pearson scoring"))
    p.add_argument("--pred", nargs="+", help="prediction file(s) or per-run directories")
    p.add_argument("--truth", nargs="+")
    p.add_argument("--groups", help="JSON sidecar: group name -> parcel indices")
    p.add_argument("--subjects", nargs="+")

    p = common(sub.add_parser("report", help="aggregate per-subject score files"))
    p.add_argument("--scores", nargs="+")
    return parser


def resolve_config(args):
    """Merge built-in defaults < config file < explicit flags."""
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must hold a JSON object")
        cfg.update({k.replace("-", "_"): v for k, v in file_cfg.items()})
    for k, v in vars(args).items():
        if v is not None and k not in ("config",):
            cfg[k] = v
    return cfg


COMMANDS = {
    "synth": cmd_synth, "fit": cmd_fit, "predict": cmd_predict, "stack": cmd_stack,
    "hmm": cmd_hmm, "eval": cmd_eval, "report": cmd_report,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if cfg.get("command") == "synth" and int(cfg["parcels"]) < 1:
            raise UsageError("--parcels must be positive")
        Path(cfg["out"]).mkdir(parents=True, exist_ok=True)
        if cfg.get("threads"):
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=int(cfg["threads"])):
                COMMANDS[args.command](cfg)
        else:
            COMMANDS[args.command](cfg)
    except (UsageError, SplitShorthandError) as exc:
        print(f"mmencode {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, linalg.LinAlgError, np.linalg.LinAlgError) as exc:
        print(f"mmencode {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ManifestError, MatrixFormatError, NonFiniteError, AlignmentError, ValueError, OSError) as exc:
        print(f"mmencode {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
