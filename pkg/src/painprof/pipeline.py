"""Pipeline stages operating on an output directory.

Layout under ``out_dir``::

    cohort/      manifest.json (+ planted profiles), per-subject CSVs   [synth]
    features/    windows/ and profiles/ array stores, summary.json       [extract]
    profile/     assignments.json, similarity.csv, heatmap.svg,
                 cluster_stats.{json,txt}, descriptors.csv               [profile]
    model/       mtnn.json, nc_<modality>.json, loss_curve.csv           [train]
    report/      report.json, report.txt, predictions.csv                [evaluate]

Every artifact carries the configuration hash and seed.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd

from painprof import metrics, mtnn, profiler
from painprof.config import Config
from painprof.dataset import io as dio
from painprof.dataset.model import MODALITIES, ProfileSet, WindowSet
from painprof.dataset.synth import generate_synthetic_cohort
from painprof.dataset.windows import extract_recording
from painprof.errors import InputError, MissingArtifactError
from painprof.facefeat import video_feature_names
from painprof.signalcore import PHYSIO_FEATURE_NAMES

log = logging.getLogger(__name__)

MODALITY_LABEL = {"physio": "Physio", "video": "Video", "multimodal": "Multimodal"}


def _dirs(out_dir):
    out = Path(out_dir)
    return {k: out / k for k in ("cohort", "features", "profile", "model", "report")}


def _write_json(path, doc):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _comment(cfg: Config):
    p = cfg.provenance()
    return f"config_sha256={p['config_sha256']} seed={p['seed']}"


def _require(path, stage):
    if not Path(path).exists():
        raise MissingArtifactError(f"{path} not found; run `{stage}` first")


# ---------------------------------------------------------------------------


def run_synth(cfg: Config, out_dir):
    cohort = generate_synthetic_cohort(cfg.cohort_spec())
    directory = _dirs(out_dir)["cohort"]
    planted = {sid: k + 1 for sid, k in cohort.planted.items()}
    extra = {"planted_profiles": planted, "provenance": cfg.provenance()}
    path = dio.write_cohort(cohort.recordings, directory, cfg.data.compress, extra)
    log.info("wrote %d synthetic recordings to %s", len(cohort.recordings), directory)
    return path


def _extract_one(entry, wcfg):
    rec = dio.load_recording(entry)
    ws, ps = extract_recording(rec, wcfg)
    return ws, ps, {"age": rec.age, "gender": rec.gender}


def run_extract(cfg: Config, out_dir):
    manifest = cfg.manifest_path(out_dir)
    if not manifest.exists():
        raise MissingArtifactError(f"cohort manifest {manifest} not found; run `synth` or set data.manifest")
    entries = dio.read_manifest(manifest)
    wcfg = cfg.window_config()
    if cfg.data.workers > 1:
        with ProcessPoolExecutor(cfg.data.workers) as pool:
            results = list(pool.map(_extract_one, entries, [wcfg] * len(entries)))
    else:
        results = [_extract_one(e, wcfg) for e in entries]
    ws = WindowSet.concat([r[0] for r in results])
    ps = ProfileSet.concat([r[1] for r in results])
    demographics = {e.subject_id: r[2] for e, r in zip(entries, results)}

    d = _dirs(out_dir)["features"]
    prov = {"provenance": cfg.provenance()}
    dio.save_windows(ws, d / "windows", prov)
    dio.save_profiles(ps, d / "profiles", demographics, prov)
    summary = {
        "n_subjects": len(entries),
        "n_windows": {s: int((ws.split == s).sum()) for s in ("train", "val", "test")},
        "n_profile_windows": len(ps),
        "dims": {"physio": int(ws.physio.shape[1]), "video": int(ws.video.shape[1]),
                 "multimodal": int(ws.physio.shape[1] + ws.video.shape[1])},
        "feature_names": list(PHYSIO_FEATURE_NAMES) + video_feature_names(),
        **prov,
    }
    _write_json(d / "summary.json", summary)
    return summary


def run_profile(cfg: Config, out_dir):
    d = _dirs(out_dir)
    _require(d["features"] / "profiles" / "meta.json", "extract")
    ps, demographics = dio.load_profiles(d["features"] / "profiles")
    descriptors, excluded = profiler.build_descriptors(ps)
    if len(descriptors) < cfg.profiling.c:
        raise InputError(f"{len(descriptors)} usable subjects cannot form {cfg.profiling.c} clusters")
    ids = [x.subject_id for x in descriptors]
    X = profiler.descriptor_matrix(descriptors)
    W = profiler.similarity_matrix(X, cfg.profiling.gamma)
    p = cfg.profiling
    model = profiler.spectral_cluster(W, p.c, seed=cfg.seed, n_init=p.n_init, subject_ids=ids,
                                      gamma=p.gamma, tol=p.eigen_tol, max_sweeps=p.max_sweeps)
    out = d["profile"]
    out.mkdir(parents=True, exist_ok=True)
    profiler.save_assignments(model, out / "assignments.json", {"provenance": cfg.provenance()},
                              {"excluded": excluded})
    comment = _comment(cfg)
    profiler.save_similarity_csv(W, ids, out / "similarity.csv", comment)
    (out / "heatmap.svg").write_text(profiler.heatmap_svg(W, model.labels, ids, comment=comment))

    stats = profiler.cluster_statistics(model.assignments, demographics)
    _write_json(out / "cluster_stats.json",
                {"rows": [metrics._json_safe(r.to_dict()) for r in stats], "provenance": cfg.provenance()})
    (out / "cluster_stats.txt").write_text(f"# {comment}\n" + profiler.format_cluster_table(stats) + "\n")

    names = list(PHYSIO_FEATURE_NAMES) + ["l_exp"]
    cols = [f"L{lvl}_{n}" for lvl in range(1, 5) for n in names]
    df = pd.DataFrame(X, columns=cols)
    df.insert(0, "cluster", model.labels)
    df.insert(0, "subject", ids)
    with open(out / "descriptors.csv", "w", newline="\n") as fh:
        fh.write(f"# {comment}\n")
        df.to_csv(fh, index=False, float_format="%.10g", lineterminator="\n")
    return model, stats


def _train_windows(ws, assignments):
    known = np.array([s in assignments for s in ws.subject], dtype=bool)
    if not known.all():
        dropped = sorted(set(ws.subject[~known].tolist()))
        log.warning("dropping windows of %d unclustered subject(s): %s", len(dropped), ", ".join(dropped))
    return ws.subset(known)


def run_train(cfg: Config, out_dir):
    d = _dirs(out_dir)
    _require(d["features"] / "windows" / "meta.json", "extract")
    _require(d["profile"] / "assignments.json", "profile")
    assignments, _ = profiler.load_assignments(d["profile"] / "assignments.json")
    ws = _train_windows(dio.load_windows(d["features"] / "windows"), assignments)
    mcfg = cfg.mtnn_config()
    prov = cfg.provenance()
    out = d["model"]
    out.mkdir(parents=True, exist_ok=True)

    main = cfg.model.modality
    result = mtnn.train(ws, assignments, mcfg, main)
    mtnn.save_model(result.model, out / "mtnn.json", prov)
    mtnn.save_model(result.phase1, out / f"nc_{main}.json", prov)
    history = [dict(h, model="mtnn") for h in result.history]
    for modality in cfg.eval.nc_modalities:
        if modality == main:
            continue
        nc = mtnn.train(ws, {s: 1 for s in assignments}, mcfg, modality, fine_tune=False)
        mtnn.save_model(nc.model, out / f"nc_{modality}.json", prov)
        history += [dict(h, model=f"nc_{modality}") for h in nc.history]

    df = pd.DataFrame(history, columns=["model", "phase", "head", "epoch", "train_mae", "val_mae"])
    with open(out / "loss_curve.csv", "w", newline="\n") as fh:
        fh.write(f"# {_comment(cfg)}\n")
        df.to_csv(fh, index=False, float_format="%.10g", lineterminator="\n")
    return result


def _load_baseline_predictions(run_dir):
    path = Path(run_dir) / "report" / "predictions.csv"
    if not path.exists():
        raise MissingArtifactError(f"baseline run has no predictions: {path}")
    return pd.read_csv(path, comment="#", float_precision="round_trip")


def run_evaluate(cfg: Config, out_dir):
    d = _dirs(out_dir)
    _require(d["model"] / "mtnn.json", "train")
    _require(d["features"] / "windows" / "meta.json", "extract")
    model = mtnn.load_model(d["model"] / "mtnn.json")
    test = _train_windows(dio.load_windows(d["features"] / "windows").where_split("test"), model.assignments)
    if len(test) == 0:
        raise InputError("no test windows to evaluate")

    table = metrics.Table(meta={"provenance": cfg.provenance(), "c": model.c, "modality": model.modality})
    nc_preds = {}
    for modality in MODALITIES:
        if modality in cfg.eval.nc_modalities or modality == model.modality:
            nc = mtnn.load_model(d["model"] / f"nc_{modality}.json")
            nc_preds[modality] = mtnn.predict_dataset(nc, test, {s: 1 for s in model.assignments})
    main_nc = f"{MODALITY_LABEL[model.modality]} (NC)"
    for modality, p in nc_preds.items():
        r = metrics.evaluate_predictions(p)
        if modality != model.modality:
            # single-modality baselines are tested against the main modality's NC model
            r.significance = metrics.compare(p, nc_preds[model.modality], main_nc)
        table.add(f"{MODALITY_LABEL[modality]} (NC)", r)

    preds = mtnn.predict_dataset(model, test)
    label = f"{MODALITY_LABEL[model.modality]} c={model.c}"
    reports = metrics.evaluate_by_cluster(preds)
    for r in reports[1:]:
        table.add(f"{label}: profile {r.scope.split()[-1]}", r)
    overall = reports[0]
    overall.significance = metrics.compare(preds, nc_preds[model.modality], main_nc)
    table.add(f"{label}: all", overall)

    if cfg.eval.baseline_run:
        base = _load_baseline_predictions(cfg.eval.baseline_run)
        mine = pd.DataFrame({"subject": preds.subject.astype(str), "t0": preds.t0})
        merged = mine.merge(base, on=["subject", "t0"], how="left", validate="one_to_one")
        if merged["y_pred"].isna().any():
            raise InputError("baseline run does not cover the same test windows")
        base_preds = mtnn.Predictions(preds.subject, preds.cluster, preds.t0,
                                      merged["y_pred"].to_numpy(), merged["y_true"].to_numpy())
        sig = metrics.compare(preds, base_preds, f"baseline:{Path(cfg.eval.baseline_run).name}")
        table.add(f"{label}: all (vs baseline)", metrics.EvalReport(
            overall.scope, overall.mae, overall.rmse, overall.icc31, overall.n_windows,
            overall.icc31_subject_mean, sig))

    out = d["report"]
    out.mkdir(parents=True, exist_ok=True)
    metrics.write_report(table, out / "report.json", out / "report.txt", _comment(cfg))
    df = pd.DataFrame({
        "subject": preds.subject.astype(str), "t0": preds.t0, "cluster": preds.cluster,
        "y_true": preds.y_true, "y_pred": preds.y_pred,
        **{f"y_pred_nc_{m}": p.y_pred for m, p in nc_preds.items()},
    })
    with open(out / "predictions.csv", "w", newline="\n") as fh:
        fh.write(f"# {_comment(cfg)}\n")
        df.to_csv(fh, index=False, lineterminator="\n")
    return table


def run_pipeline(cfg: Config, out_dir):
    if cfg.data.manifest is None:
        run_synth(cfg, out_dir)
    run_extract(cfg, out_dir)
    run_profile(cfg, out_dir)
    run_train(cfg, out_dir)
    return run_evaluate(cfg, out_dir)
