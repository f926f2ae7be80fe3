"""End-to-end orchestration shared by the HTTP service and the CLI: dataset
assembly, training runs, prediction, evaluation, and the four-core solver
comparison. Everything is dict-in/dict-out so both frontends serialize the
same artifacts.
"""

from __future__ import annotations

import numpy as np

from . import evaluate as ev
from . import features as feat
from . import geo, ingest
from . import model as model_mod
from . import train as train_mod
from .errors import ConfigError, EmptyDataset
from .ltc import SolverKind
from .model import LSTM_BASELINE

DATASET_VERSION = 1
PREDICTIONS_VERSION = 1
CORE_ORDER = (SolverKind.RK4, SolverKind.FUSED_EXPLICIT, SolverKind.EULER, LSTM_BASELINE)
CORE_LABELS = {
    SolverKind.RK4: "LTC RK4",
    SolverKind.FUSED_EXPLICIT: "LTC Explicit",
    SolverKind.EULER: "LTC Euler",
    LSTM_BASELINE: "LSTM",
}


def solver_from_name(name: str):
    if name == LSTM_BASELINE:
        return LSTM_BASELINE
    try:
        return SolverKind(name)
    except ValueError:
        raise ConfigError(f"unknown solver {name!r}; expected rk4|explicit|euler|lstm")


def scenario_documents(kind: int, seed: int, duration_h: int, step_h: int = 1,
                       **kwargs):
    """Ground-truth spill JSON text and the matching forcing samples."""
    series = feat.generate_scenario(kind, seed, duration_h, step_h, **kwargs)
    observations = [o for o, _ in series]
    env = [e for _, e in series]
    return ingest.spill_to_json(observations), feat.env_samples_to_json(env)


def build_dataset(series_pairs, scale: str) -> dict:
    """Assemble a normalized training dataset from one or more observation
    series. The normalizer fits on the (time-contiguous) training split only.

    series_pairs: [(observations, env_samples), ...]
    """
    raw_seqs = []
    for observations, env_samples in series_pairs:
        timed = feat.featurize_series(observations, env_samples)
        raw_seqs.extend(feat.build_sequences(timed, scale))
    if not raw_seqs:
        raise EmptyDataset("no sequences produced")
    n_train = len(raw_seqs) - max(1, int(round(len(raw_seqs) * 0.2)))
    if n_train < 1:
        raise EmptyDataset(f"{len(raw_seqs)} sequences cannot support a split")
    train_rows = [row for s in raw_seqs[:n_train] for row in s.window]
    normalizer = feat.fit_normalizer(train_rows)
    normed = feat.normalize_sequences(raw_seqs, normalizer)
    return {
        "schema_version": DATASET_VERSION,
        "scale": scale,
        "horizon_unit_h": 1.0 if scale == feat.SCALE_SHORT else 24.0,
        "normalizer": normalizer.to_dict(),
        "sequences": [
            {
                "end_time": s.end_time,
                "window": np.asarray(s.window).tolist(),
                "targets": {str(h): np.asarray(t).tolist()
                            for h, t in sorted(s.horizon_targets.items())},
            }
            for s in normed
        ],
    }


def dataset_sequences(doc: dict):
    if doc.get("schema_version") != DATASET_VERSION:
        raise ConfigError(f"unsupported dataset version {doc.get('schema_version')}")
    seqs = []
    for entry in doc["sequences"]:
        seqs.append(feat.FeatureSequence(
            window=np.asarray(entry["window"], dtype=float),
            horizon_targets={int(h): np.asarray(t, dtype=float)
                             for h, t in entry["targets"].items()},
            scale_class=doc["scale"],
            end_time=float(entry["end_time"]),
        ))
    return seqs


def scenario_dataset(kind: int, n_series: int, base_seed: int, duration_h: int,
                     scale: str = feat.SCALE_SHORT, step_h: int = 1) -> dict:
    """Convenience: several seeded runs of one scenario family, windowed and
    normalized into a single dataset."""
    pairs = []
    for k in range(n_series):
        series = feat.generate_scenario(kind, base_seed + 1000 * k, duration_h, step_h)
        pairs.append(([o for o, _ in series], [e for _, e in series]))
    return build_dataset(pairs, scale)


def train_from_dataset(doc: dict, config: train_mod.TrainConfig):
    seqs = dataset_sequences(doc)
    result = train_mod.train_model(seqs, config)
    checkpoint = model_mod.checkpoint_to_dict(result.params)
    history = [
        {"epoch": r.epoch, "train_loss": r.train_loss, "val_loss": r.val_loss,
         "val_mse": r.val_mse, "lr": r.lr}
        for r in result.history
    ]
    return checkpoint, history, result


def predict_windows(checkpoint: dict, dataset: dict, indices=None):
    """PredictionSets for selected dataset windows (all by default)."""
    params = model_mod.params_from_dict(checkpoint)
    seqs = dataset_sequences(dataset)
    if indices is None:
        indices = range(len(seqs))
    unit = float(dataset.get("horizon_unit_h", 1.0))
    out = []
    for i in indices:
        s = seqs[i]
        pset = model_mod.predict(s.window, params)
        out.append({
            "origin_ts": s.end_time,
            "horizons": list(pset.horizons),
            "means": {str(h): pset.means[h].tolist() for h in pset.horizons},
            "uncertainties": {str(h): pset.uncertainties[h].tolist()
                              for h in pset.horizons},
        })
    return {
        "schema_version": PREDICTIONS_VERSION,
        "horizon_unit_h": unit,
        "normalizer": dataset["normalizer"],
        "predictions": out,
    }


def _prediction_series(doc: dict):
    sets = []
    for entry in doc["predictions"]:
        horizons = tuple(int(h) for h in entry["horizons"])
        sets.append((float(entry["origin_ts"]), model_mod.PredictionSet(
            horizons=horizons,
            means={h: np.asarray(entry["means"][str(h)], dtype=float)
                   for h in horizons},
            uncertainties={h: np.asarray(entry["uncertainties"][str(h)], dtype=float)
                           for h in horizons},
        )))
    return sets


def evaluate_predictions(pred_doc: dict, truth_json: str, baseline_doc: dict = None,
                         seed: int = 0, cells_per_axis: int = 256):
    """MetricReport (+ CSV/GeoJSON) with bootstrap CIs; paired tests against
    an optional baseline prediction set."""
    if pred_doc.get("schema_version") != PREDICTIONS_VERSION:
        raise ConfigError(f"unsupported predictions version {pred_doc.get('schema_version')}")
    truth = ingest.parse_spill_json(truth_json)
    normalizer = feat.Normalizer.from_dict(pred_doc["normalizer"])
    unit = float(pred_doc.get("horizon_unit_h", 1.0))
    preds = _prediction_series(pred_doc)
    report = ev.evaluate_run(preds, truth, normalizer, horizon_unit_h=unit,
                             cells_per_axis=cells_per_axis)

    errors = _area_errors(preds, truth, normalizer, unit)
    lo, hi = ev.bootstrap_ci(errors, seed=seed)
    summary = {
        "report": report.to_dict(),
        "area_error_ci95": [lo, hi],
        "n_timesteps": len(errors),
    }
    if baseline_doc is not None:
        base_errors = _area_errors(_prediction_series(baseline_doc), truth,
                                   feat.Normalizer.from_dict(baseline_doc["normalizer"]),
                                   float(baseline_doc.get("horizon_unit_h", 1.0)))
        stat = ev.compare_paired(errors, base_errors, seed=seed)
        summary["paired_vs_baseline"] = {
            "mean_diff": stat.mean, "ci_low": stat.ci_low, "ci_high": stat.ci_high,
            "t": stat.t_stat, "df": stat.df, "p_value": stat.p_value,
            "wilcoxon_w": stat.wilcoxon_w, "wilcoxon_p": stat.wilcoxon_p,
        }
    csv_text = ev.report_csv(preds, truth, normalizer, horizon_unit_h=unit)
    geojson = ev.boundaries_geojson(preds, truth, normalizer, horizon_unit_h=unit)
    return summary, csv_text, geojson


def _area_errors(preds, truth, normalizer, unit):
    truth_by_ts = {round(o.timestamp, 3): o for o in truth}
    errors = []
    for origin_ts, pset in preds:
        for h in pset.horizons:
            obs = truth_by_ts.get(round(origin_ts + h * unit * 3600.0, 3))
            if obs is None:
                continue
            vec = feat.denormalize(pset.means[h][:feat.FEATURE_DIM], normalizer)
            errors.append(abs(vec[0] - geo.area_km2(obs.boundary)))
    return errors


# -- four-core comparison -----------------------------------------------------------


def _validation_metrics(params, seqs, normalizer, unit_h: float):
    """Feature-space validation scores: area MAE / centroid error in physical
    units, IoU between predicted and target reconstructed ellipses, and
    temporal consistency (centroid-speed variance along each fixed-horizon
    prediction track, averaged over horizons)."""
    area_errs, cent_errs, ious = [], [], []
    tracks = {}
    for s in seqs:
        pset = model_mod.predict(s.window, params)
        for h in pset.horizons:
            pred = feat.denormalize(pset.means[h][:feat.FEATURE_DIM], normalizer)
            tgt = feat.denormalize(np.asarray(s.horizon_targets[h])[:feat.FEATURE_DIM],
                                   normalizer)
            area_errs.append(abs(pred[0] - tgt[0]))
            cent_errs.append(geo.haversine_km(pred[8], pred[9], tgt[8], tgt[9]))
            try:
                ious.append(ev.overlap_ratio(ev.ellipse_from_features(pred),
                                             ev.ellipse_from_features(tgt),
                                             cells_per_axis=128))
            except Exception:
                ious.append(0.0)
            tracks.setdefault(h, []).append(
                (pred[8], pred[9], s.end_time + h * unit_h * 3600.0))
    return {
        "area_errors": area_errs,
        "centroid_errors": cent_errs,
        "ious": ious,
        "temporal_consistency": ev.track_consistency(tracks.values()),
    }


def compare_solvers(dataset: dict, seed: int = 0, max_epochs: int = None,
                    hidden: int = None, patience: int = None) -> dict:
    """Train the four cores on one dataset with their per-solver
    hyperparameters and score them on the validation block.

    Emits rows shaped like the headline comparison tables: per-core area
    statistics plus accuracy metrics with bootstrap CIs and paired tests
    against the LSTM baseline.
    """
    seqs = dataset_sequences(dataset)
    normalizer = feat.Normalizer.from_dict(dataset["normalizer"])
    unit = float(dataset.get("horizon_unit_h", 1.0))
    _, val_seqs = train_mod.split_dataset(seqs)
    seed_seq = np.random.SeedSequence(seed).spawn(len(CORE_ORDER))

    rows = {}
    per_core_metrics = {}
    for core, child in zip(CORE_ORDER, seed_seq):
        kwargs = {"solver": core, "seed": int(child.generate_state(1)[0] % 2**31)}
        if max_epochs is not None:
            kwargs["max_epochs"] = max_epochs
        if hidden is not None:
            kwargs["hidden"] = hidden
        if patience is not None:
            kwargs["patience"] = patience
        config = train_mod.TrainConfig(**kwargs)
        result = train_mod.train_model(seqs, config)
        metrics = _validation_metrics(result.params, val_seqs, normalizer, unit)
        per_core_metrics[core] = metrics

        pred_areas = []
        for s in val_seqs:
            pset = model_mod.predict(s.window, result.params)
            for h in pset.horizons:
                pred_areas.append(
                    feat.denormalize(pset.means[h][:feat.FEATURE_DIM], normalizer)[0])
        mean, std, amax, amin, rng_, count = ev.summary_stats(pred_areas)
        ci_lo, ci_hi = ev.bootstrap_ci(metrics["area_errors"], seed=seed)
        rows[CORE_LABELS[core]] = {
            "core": core if isinstance(core, str) else core.value,
            "mean_area_km2": mean, "std_area_km2": std,
            "max_area_km2": amax, "min_area_km2": amin,
            "area_range_km2": rng_, "time_steps": count,
            "area_mae_km2": float(np.mean(metrics["area_errors"])),
            "area_mae_ci95": [ci_lo, ci_hi],
            "centroid_disp_km": float(np.mean(metrics["centroid_errors"])),
            "spatial_accuracy": float(np.mean(metrics["ious"])),
            "temporal_consistency": metrics["temporal_consistency"],
            "best_epoch": result.best_epoch,
            "best_val_loss": result.best_val_loss,
        }

    lstm_errs = per_core_metrics[LSTM_BASELINE]["area_errors"]
    for core in CORE_ORDER:
        if core == LSTM_BASELINE:
            continue
        errs = per_core_metrics[core]["area_errors"]
        try:
            stat = ev.compare_paired(errs, lstm_errs, seed=seed)
            rows[CORE_LABELS[core]]["p_value_vs_lstm"] = stat.p_value
            rows[CORE_LABELS[core]]["wilcoxon_p_vs_lstm"] = stat.wilcoxon_p
        except Exception:
            rows[CORE_LABELS[core]]["p_value_vs_lstm"] = None
            rows[CORE_LABELS[core]]["wilcoxon_p_vs_lstm"] = None
    return {"rows": rows, "seed": seed, "n_validation_sequences": len(val_seqs)}


def compare_table_text(comparison: dict) -> str:
    header = (f"{'Model':<14}{'MeanArea':>10}{'Std':>8}{'Max':>9}{'Min':>9}"
              f"{'Range':>9}{'Steps':>6}{'AreaMAE':>9}{'SpatAcc':>8}{'TempCons':>10}")
    lines = [header, "-" * len(header)]
    for label in ("LTC RK4", "LTC Euler", "LTC Explicit", "LSTM"):
        r = comparison["rows"][label]
        lines.append(
            f"{label:<14}{r['mean_area_km2']:>10.1f}{r['std_area_km2']:>8.1f}"
            f"{r['max_area_km2']:>9.1f}{r['min_area_km2']:>9.1f}"
            f"{r['area_range_km2']:>9.1f}{r['time_steps']:>6d}"
            f"{r['area_mae_km2']:>9.2f}{r['spatial_accuracy']:>8.3f}"
            f"{r['temporal_consistency']:>10.4f}"
        )
    return "\n".join(lines) + "\n"
