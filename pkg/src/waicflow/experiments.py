"""Experiment orchestration: dataset simulation, ensemble training, scoring,
the superset validation, the illuminant scene-change stream, and the
ensemble-size sweep. All outputs are comma-separated tables plus a plain-text
report; nothing here is time-dependent, so identical configs reproduce
identical bytes.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .config import HarnessConfig
from .datasets import (Dataset, kde_mode, load_checkpoint, load_dataset,
                       outside_cluster_mask, pca_fit, pca_project, save_checkpoint,
                       save_dataset, split_train_test, superset_split)
from .errors import UsageError
from .numcore import derive_seed, make_rng
from .simulator import (band_matrix, camera_table, make_camera,
                        noisy_band_matrix, reflectance_matrix, sample_tissue_params,
                        simulate_dataset)
from .waic import Ensemble, member_log_likelihoods, train_ensemble, waic_from_logps

# sub-stream labels under the base seed, one per randomized stage
_STAGE_SIMULATE = 11
_STAGE_SPLIT = 12
_STAGE_SUPERSET = 13
_STAGE_TRAIN = 14
_STAGE_SCENE_FIELD = 15
_STAGE_SCENE_NOISE = 16


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _ensure_dir(path: str) -> None:
    os.makedirs(path, exist_ok=True)


# ---------------------------------------------------------------------------
# score tables

def write_scores_table(path: str, logps: np.ndarray) -> None:
    """Table: row id, per-member logp, mean, var, waic (one row per sample)."""
    waic, mean, var = waic_from_logps(logps)
    m = logps.shape[0]
    header = ("row," + ",".join(f"logp_member_{i}" for i in range(m))
              + ",mean_logp,var_logp,waic")
    lines = [header]
    for j in range(logps.shape[1]):
        vals = ",".join(_fmt(logps[i, j]) for i in range(m))
        lines.append(f"{j},{vals},{_fmt(mean[j])},{_fmt(var[j])},{_fmt(waic[j])}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass(frozen=True)
class SplitSummary:
    median: float
    map_estimate: float
    q02: float
    q25: float
    q75: float
    q98: float

    def __post_init__(self):
        if not self.q02 <= self.q25 <= self.q75 <= self.q98:
            raise UsageError("summary quantiles are not monotone")


def summarize_waic(waic: np.ndarray) -> SplitSummary:
    q02, q25, q75, q98 = np.quantile(waic, [0.02, 0.25, 0.75, 0.98])
    return SplitSummary(float(np.median(waic)), kde_mode(waic),
                        float(q02), float(q25), float(q75), float(q98))


def auroc(positive: np.ndarray, negative: np.ndarray) -> float:
    """Rank-based AUROC (Mann-Whitney) with average ranks for ties."""
    pos = np.asarray(positive, dtype=np.float64)
    neg = np.asarray(negative, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise UsageError("auroc needs at least one score in each class")
    both = np.concatenate([pos, neg])
    order = np.argsort(both, kind="mergesort")
    ranks = np.empty(both.size)
    sorted_vals = both[order]
    pos_rank = np.arange(1, both.size + 1, dtype=np.float64)
    i = 0
    while i < both.size:
        j = i
        while j + 1 < both.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        pos_rank[i:j + 1] = 0.5 * ((i + 1) + (j + 1))
        i = j + 1
    ranks[order] = pos_rank
    u = ranks[:pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def rolling_mean(series: np.ndarray, window: int = 5) -> np.ndarray:
    """Centered rolling mean, shrunk at the edges."""
    half = window // 2
    n = series.size
    out = np.empty(n)
    for t in range(n):
        lo, hi = max(0, t - half), min(n, t + half + 1)
        out[t] = series[lo:hi].mean()
    return out


def changepoint_index(series: np.ndarray, window: int = 5) -> int | None:
    """First index where the rolling mean crosses the midpoint between the
    medians of the first and last quarter of the series."""
    series = np.asarray(series, dtype=np.float64)
    if series.size < 4 * window:
        raise UsageError(f"series too short for changepoint detection: {series.size}")
    quarter = series.size // 4
    early = float(np.median(series[:quarter]))
    late = float(np.median(series[-quarter:]))
    if early == late:
        return None
    midpoint = 0.5 * (early + late)
    smooth = rolling_mean(series, window)
    crossed = smooth < midpoint if late < early else smooth > midpoint
    hits = np.flatnonzero(crossed)
    return int(hits[0]) if hits.size else None


# ---------------------------------------------------------------------------
# commands backing the CLI / service

def cmd_simulate(config: HarnessConfig, out_dir: str) -> dict:
    """Simulate, split, carve the superset, and write one tagged dataset file."""
    _ensure_dir(out_dir)
    camera = make_camera(config.camera, config.illuminant)
    dataset = simulate_dataset(config.n_rows, camera,
                               derive_seed(config.seed, _STAGE_SIMULATE),
                               config.noise_sigma)
    dataset.meta["config_hash"] = config.content_hash()
    train, test = split_train_test(dataset, config.train_ratio,
                                   make_rng(derive_seed(config.seed, _STAGE_SPLIT)))
    tr_s, sup, _ = superset_split(train, make_rng(derive_seed(config.seed, _STAGE_SUPERSET)),
                                  config.support_quantile, config.cluster_quantile,
                                  config.train_fraction)
    combined = Dataset(
        np.concatenate([tr_s.measurements, sup.measurements, test.measurements]),
        np.concatenate([tr_s.labels, sup.labels, test.labels]),
        np.concatenate([tr_s.split_tags, sup.split_tags, test.split_tags]),
        dict(sup.meta))
    dataset_path = os.path.join(out_dir, "dataset.csv")
    save_dataset(combined, dataset_path)
    camera_path = os.path.join(out_dir, "camera.csv")
    with open(camera_path, "w") as fh:
        fh.write(camera_table(camera))
    tags = combined.split_tags
    return {
        "dataset_path": dataset_path,
        "camera_table_path": camera_path,
        "n_rows": combined.n_rows,
        "n_train": int(np.isin(tags, ("tr_s", "sup", "sup_r")).sum()),
        "n_test": int((tags == "test").sum()),
        "n_tr_s": int((tags == "tr_s").sum()),
        "n_sup": int(np.isin(tags, ("sup", "sup_r")).sum()),
        "n_sup_r": int((tags == "sup_r").sum()),
    }


def _training_rows(dataset: Dataset, train_tag: str) -> Dataset:
    if train_tag != "auto":
        return dataset.rows_tagged(train_tag)
    for tag in ("tr_s", "train"):
        if np.isin(dataset.split_tags, [tag]).any():
            return dataset.rows_tagged(tag)
    return dataset


def cmd_train(config: HarnessConfig, dataset_path: str, out_dir: str) -> dict:
    """Train the ensemble on the dataset's training rows; write manifest,
    member checkpoints, and the loss-curve table."""
    _ensure_dir(out_dir)
    dataset = load_dataset(dataset_path)
    rows = _training_rows(dataset, config.train_tag)
    ensemble = train_ensemble(config.train_config(), rows.measurements,
                              derive_seed(config.seed, _STAGE_TRAIN),
                              n_members=config.members)
    manifest_path = os.path.join(out_dir, "ensemble.manifest")
    save_checkpoint(ensemble, manifest_path)
    curve_path = os.path.join(out_dir, "loss_curves.csv")
    lines = ["member,epoch,mean_nll"]
    for i, member in enumerate(ensemble.members):
        for e, nll in enumerate(member.loss_curve):
            lines.append(f"{i},{e},{_fmt(nll)}")
    with open(curve_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return {
        "manifest_path": manifest_path,
        "checkpoint_paths": [os.path.join(out_dir, f"ensemble_member_{i:02d}.flow")
                             for i in range(ensemble.n_members)],
        "loss_curve_path": curve_path,
        "n_training_rows": rows.n_rows,
        "final_nll": [member.loss_curve[-1] for member in ensemble.members],
    }


def cmd_score(manifest_path: str, dataset_path: str, out_dir: str) -> dict:
    """Score every dataset row under the ensemble; write the scores table."""
    _ensure_dir(out_dir)
    loaded = load_checkpoint(manifest_path)
    if not isinstance(loaded, Ensemble):
        raise UsageError(f"{manifest_path} is not an ensemble manifest")
    dataset = load_dataset(dataset_path)
    if dataset.n_rows == 0:
        raise UsageError("dataset has no rows to score")
    if dataset.dim != loaded.input_dim:
        raise UsageError(f"dataset dim {dataset.dim} does not match "
                         f"ensemble dim {loaded.input_dim}")
    logps = member_log_likelihoods(loaded, dataset.measurements)
    scores_path = os.path.join(out_dir, "scores.csv")
    write_scores_table(scores_path, logps)
    waic, _, _ = waic_from_logps(logps)
    return {
        "scores_path": scores_path,
        "n_rows": dataset.n_rows,
        "median_waic": float(np.median(waic)),
        "mean_waic": float(waic.mean()),
    }


# ---------------------------------------------------------------------------
# experiment 1: superset validation

@dataclass
class ExperimentReport:
    summaries: dict[str, SplitSummary]
    auroc_outside: float
    worst2_outside_fraction: float
    n_outside: int
    paths: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.auroc_outside <= 1.0:
            raise UsageError(f"AUROC {self.auroc_outside} outside [0, 1]")


def run_insilico_experiment(config: HarnessConfig, out_dir: str) -> ExperimentReport:
    """Self-contained superset validation: simulate, carve, train, score.

    Checks that the restricted superset scores like the reduced training set
    and that the detached cluster is flagged, and emits the score tables, the
    2-D PCA projection with best/worst-2% flags, and a text report.
    """
    _ensure_dir(out_dir)
    camera = make_camera(config.camera, config.illuminant)
    dataset = simulate_dataset(config.n_rows, camera,
                               derive_seed(config.seed, _STAGE_SIMULATE),
                               config.noise_sigma)
    train, _ = split_train_test(dataset, config.train_ratio,
                                make_rng(derive_seed(config.seed, _STAGE_SPLIT)))
    tr_s, sup, sup_r = superset_split(train,
                                      make_rng(derive_seed(config.seed, _STAGE_SUPERSET)),
                                      config.support_quantile, config.cluster_quantile,
                                      config.train_fraction)
    ensemble = train_ensemble(config.train_config(), tr_s.measurements,
                              derive_seed(config.seed, _STAGE_TRAIN),
                              n_members=config.members)

    logps = {name: member_log_likelihoods(ensemble, part.measurements)
             for name, part in (("tr_s", tr_s), ("sup", sup), ("sup_r", sup_r))}
    waics = {name: waic_from_logps(lp)[0] for name, lp in logps.items()}
    summaries = {name: summarize_waic(w) for name, w in waics.items()}

    outside = outside_cluster_mask(sup)
    in_support = np.asarray(sup.split_tags, dtype=object) == "sup_r"
    score_auroc = auroc(waics["sup"][outside], waics["sup"][in_support])

    k = max(1, int(round(0.02 * sup.n_rows)))
    order = np.argsort(waics["sup"], kind="mergesort")
    worst_rows = order[-k:]
    best_rows = order[:k]
    worst2_fraction = float(outside[worst_rows].mean())

    paths = {}
    for name in ("tr_s", "sup", "sup_r"):
        paths[f"scores_{name}"] = os.path.join(out_dir, f"waic_{name}.csv")
        write_scores_table(paths[f"scores_{name}"], logps[name])

    paths["summary"] = os.path.join(out_dir, "summary.csv")
    with open(paths["summary"], "w") as fh:
        fh.write("split,median,map,q02,q25,q75,q98\n")
        for name, s in summaries.items():
            fh.write(f"{name},{_fmt(s.median)},{_fmt(s.map_estimate)},"
                     f"{_fmt(s.q02)},{_fmt(s.q25)},{_fmt(s.q75)},{_fmt(s.q98)}\n")

    pca = pca_fit(train.measurements, k=2)
    paths["pca_projection"] = os.path.join(out_dir, "pca_projection.csv")
    flags = np.full(sup.n_rows, "", dtype=object)
    flags[best_rows] = "best2"
    flags[worst_rows] = "worst2"
    with open(paths["pca_projection"], "w") as fh:
        fh.write("split,pc1,pc2,waic,flag\n")
        coords = pca_project(pca, tr_s.measurements)
        for j in range(tr_s.n_rows):
            fh.write(f"tr_s,{_fmt(coords[j, 0])},{_fmt(coords[j, 1])},"
                     f"{_fmt(waics['tr_s'][j])},\n")
        coords = pca_project(pca, sup.measurements)
        for j in range(sup.n_rows):
            fh.write(f"sup,{_fmt(coords[j, 0])},{_fmt(coords[j, 1])},"
                     f"{_fmt(waics['sup'][j])},{flags[j]}\n")

    paths["report"] = os.path.join(out_dir, "report.txt")
    report = ExperimentReport(summaries, score_auroc, worst2_fraction,
                              int(outside.sum()), paths)
    _write_insilico_report(report, waics, config, paths["report"])
    return report


def _write_insilico_report(report: ExperimentReport, waics: dict,
                           config: HarnessConfig, path: str) -> None:
    lines = ["superset validation report",
             f"config_hash: {config.content_hash()}",
             f"rows: tr_s={waics['tr_s'].size} sup={waics['sup'].size} "
             f"sup_r={waics['sup_r'].size} outside_cluster={report.n_outside}"]
    for name, s in report.summaries.items():
        lines.append(f"{name}: median={_fmt(s.median)} map={_fmt(s.map_estimate)} "
                     f"q02={_fmt(s.q02)} q25={_fmt(s.q25)} q75={_fmt(s.q75)} "
                     f"q98={_fmt(s.q98)}")
    gap = abs(report.summaries["sup_r"].median - report.summaries["tr_s"].median)
    lines.append(f"median_gap_sup_r_vs_tr_s: {_fmt(gap)}")
    lines.append(f"auroc_outside_cluster: {_fmt(report.auroc_outside)}")
    lines.append(f"worst2_outside_fraction: {_fmt(report.worst2_outside_fraction)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# experiment 2: illuminant scene change

@dataclass
class SceneChangeSeries:
    roi_mean_waic: np.ndarray
    detected_frame: int | None
    true_switch_frame: int

    def __post_init__(self):
        if self.detected_frame is not None and \
                not 0 <= self.detected_frame < self.roi_mean_waic.size:
            raise UsageError("detected changepoint outside the series")


def run_scene_change_experiment(config: HarnessConfig, out_dir: str) -> SceneChangeSeries:
    """Train on LED-lit 16-band data, then stream frames that switch from a
    xenon to the LED illuminant at the true switch frame; the ROI-mean WAIC
    drops once the illuminant matches the training light."""
    _ensure_dir(out_dir)
    if not 0 < config.switch_frame < config.frames:
        raise UsageError("switch_frame must fall inside the frame range")
    camera_led = make_camera("ximea16", "led")
    camera_xenon = make_camera("ximea16", "xenon")
    train_ds = simulate_dataset(config.scene_rows, camera_led,
                                derive_seed(config.seed, _STAGE_SIMULATE),
                                config.noise_sigma)
    ensemble = train_ensemble(config.train_config(), train_ds.measurements,
                              derive_seed(config.seed, _STAGE_TRAIN),
                              n_members=config.members)

    n_pixels = config.image_size ** 2
    field_rng = make_rng(derive_seed(config.seed, _STAGE_SCENE_FIELD))
    tissue_field = np.stack([sample_tissue_params(field_rng).to_vector()
                             for _ in range(n_pixels)])
    reflectances = reflectance_matrix(tissue_field)
    base = {"xenon": band_matrix(reflectances, camera_xenon),
            "led": band_matrix(reflectances, camera_led)}

    rows = np.arange(config.roi_lo, config.roi_hi)
    if rows.size == 0 or config.roi_hi > config.image_size:
        raise UsageError("ROI bounds must satisfy 0 <= roi_lo < roi_hi <= image_size")
    roi = (rows[:, None] * config.image_size + rows[None, :]).ravel()

    noise_rng = make_rng(derive_seed(config.seed, _STAGE_SCENE_NOISE))
    series = np.empty(config.frames)
    for frame in range(config.frames):
        illum = "xenon" if frame < config.switch_frame else "led"
        bands = noisy_band_matrix(base[illum], config.noise_sigma, noise_rng)
        waic, _, _ = waic_from_logps(member_log_likelihoods(ensemble, bands[roi]))
        series[frame] = waic.mean()

    detected = changepoint_index(series)
    result = SceneChangeSeries(series, detected, config.switch_frame)

    series_path = os.path.join(out_dir, "scene_series.csv")
    with open(series_path, "w") as fh:
        fh.write("frame,illuminant,roi_mean_waic\n")
        for frame in range(config.frames):
            illum = "xenon" if frame < config.switch_frame else "led"
            fh.write(f"{frame},{illum},{_fmt(series[frame])}\n")
    pre = series[:config.switch_frame].mean()
    post = series[min(config.switch_frame + 10, config.frames - 1):].mean()
    with open(os.path.join(out_dir, "scene_report.txt"), "w") as fh:
        fh.write("scene-change report\n"
                 f"true_switch_frame: {config.switch_frame}\n"
                 f"detected_frame: {detected}\n"
                 f"mean_waic_mismatched: {_fmt(pre)}\n"
                 f"mean_waic_matched: {_fmt(post)}\n")
    return result


# ---------------------------------------------------------------------------
# experiment 3: ensemble-size sweep

def run_ensemble_sweep(config: HarnessConfig, out_dir: str) -> list[tuple[int, float, float]]:
    """Train sweep_members flows once, then evaluate nested member prefixes.

    Returns rows (m, mean in-distribution WAIC, mean outside-cluster WAIC)
    for m = 2 .. sweep_members.
    """
    _ensure_dir(out_dir)
    if config.sweep_members < 2:
        raise UsageError("sweep needs at least 2 members")
    camera = make_camera(config.camera, config.illuminant)
    dataset = simulate_dataset(config.sweep_rows, camera,
                               derive_seed(config.seed, _STAGE_SIMULATE),
                               config.noise_sigma)
    train, _ = split_train_test(dataset, config.train_ratio,
                                make_rng(derive_seed(config.seed, _STAGE_SPLIT)))
    tr_s, sup, sup_r = superset_split(train,
                                      make_rng(derive_seed(config.seed, _STAGE_SUPERSET)),
                                      config.support_quantile, config.cluster_quantile,
                                      config.train_fraction)
    ensemble = train_ensemble(config.train_config(), tr_s.measurements,
                              derive_seed(config.seed, _STAGE_TRAIN),
                              n_members=config.sweep_members)
    outside = outside_cluster_mask(sup)
    logps_in = member_log_likelihoods(ensemble, sup_r.measurements)
    logps_out = member_log_likelihoods(ensemble, sup.measurements[outside])
    rows = []
    for m in range(2, config.sweep_members + 1):
        waic_in, _, _ = waic_from_logps(logps_in[:m])
        waic_out, _, _ = waic_from_logps(logps_out[:m])
        rows.append((m, float(waic_in.mean()), float(waic_out.mean())))
    table_path = os.path.join(out_dir, "sweep.csv")
    with open(table_path, "w") as fh:
        fh.write("members,mean_waic_in_distribution,mean_waic_outside\n")
        for m, w_in, w_out in rows:
            fh.write(f"{m},{_fmt(w_in)},{_fmt(w_out)}\n")
    by_m = dict((m, w_in) for m, w_in, _ in rows)
    with open(os.path.join(out_dir, "sweep_report.txt"), "w") as fh:
        fh.write("ensemble-size sweep report\n"
                 f"members: 2..{config.sweep_members}\n"
                 f"rows: in-distribution={logps_in.shape[1]} "
                 f"outside={logps_out.shape[1]}\n")
        if 10 in by_m and 20 in by_m and by_m[20] != 0:
            gap = abs(by_m[10] - by_m[20]) / abs(by_m[20])
            fh.write(f"in_distribution_mean_waic_m10: {_fmt(by_m[10])}\n"
                     f"in_distribution_mean_waic_m20: {_fmt(by_m[20])}\n"
                     f"relative_gap_m10_vs_m20: {_fmt(gap)}\n")
    return rows
