"""Experiment orchestration: dataset generation, training, beta calibration,
scenario evaluation, and report consolidation."""

from __future__ import annotations

import csv
import json
import os
import statistics
import time

import numpy as np

from .. import fusion as fusion_mod
from .. import metrics as metrics_mod
from ..channel import beam_rates, line_of_sight
from ..codebook import generate_codebook
from ..localization import (
    NoDetectionInWindow,
    build_kb,
    load_kb,
    localize_target,
    save_kb,
)
from ..neural import (
    LeNet,
    LeNetConfig,
    TrainConfig,
    Transformer,
    TransformerConfig,
    downscale_mask,
    load_checkpoint,
    restore_params,
    save_checkpoint,
    sequence_features,
    uniform_prediction,
)
from ..scene import corrupt, generate_frame, iter_frames, save_frames
from .config import ExperimentConfig

SPLITS = ("train", "val", "test")
VERSION = "0.1.0"


class PipelineError(RuntimeError):
    pass


def _paths(out_dir: str) -> dict:
    return {
        "dataset": {s: os.path.join(out_dir, "dataset", s) for s in SPLITS},
        "kb": os.path.join(out_dir, "kb.json"),
        "lenet": os.path.join(out_dir, "lenet.ckpt"),
        "baseline1": os.path.join(out_dir, "baseline1.ckpt"),
        "baseline2": os.path.join(out_dir, "baseline2.ckpt"),
        "transformer": os.path.join(out_dir, "transformer.ckpt"),
        "betas": os.path.join(out_dir, "betas.json"),
        "surfaces": os.path.join(out_dir, "surfaces"),
        "reports": os.path.join(out_dir, "reports"),
        "manifest": os.path.join(out_dir, "manifest.json"),
        "report_csv": os.path.join(out_dir, "report.csv"),
    }


def _update_manifest(out_dir: str, cfg: ExperimentConfig, updates: dict) -> None:
    path = _paths(out_dir)["manifest"]
    doc = {"config_hash": cfg.config_hash(), "version": VERSION,
           "artifacts": {}, "wall_clock_s": {}, "latency": {}}
    if os.path.exists(path):
        with open(path, encoding="ascii") as fh:
            doc = json.load(fh)
        if doc["config_hash"] != cfg.config_hash():
            raise PipelineError("output directory belongs to a different config "
                                f"(hash {doc['config_hash'][:12]}...)")
        doc.setdefault("latency", {})
    for section in ("artifacts", "wall_clock_s", "latency"):
        doc[section].update(updates.get(section, {}))
    for rel in doc["artifacts"].values():
        if not os.path.exists(os.path.join(out_dir, rel)):
            raise PipelineError(f"manifest references missing artifact {rel}")
    with open(path, "w", encoding="ascii") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


# ------------------------------------------------------------------------ gen

def run_gen(cfg: ExperimentConfig, out_dir: str) -> dict:
    """Generate seeded train/val/test splits and write them to disk."""
    started = time.perf_counter()
    codebook = generate_codebook(cfg.codebook)
    counts = {s: int(cfg.raw["splits"][f"n_{s}"]) for s in SPLITS}
    paths = _paths(out_dir)

    for split_index, split in enumerate(SPLITS):
        profile = cfg.profiles[cfg.raw["splits"][f"{split}_corruption"]]

        def frames():
            for i in range(counts[split]):
                frame = generate_frame(cfg.world, cfg.frame_seed(split_index, i),
                                       codebook, cfg.radio, frame_id=i,
                                       timestamp=float(i))
                yield corrupt(frame, profile, cfg.corruption_seed(0, split_index, i),
                              cfg.world)

        save_frames(frames(), paths["dataset"][split])

    elapsed = time.perf_counter() - started
    _update_manifest(out_dir, cfg, {
        "artifacts": {f"dataset_{s}": os.path.join("dataset", s, "manifest.csv")
                      for s in SPLITS},
        "wall_clock_s": {"gen": elapsed},
    })
    return {"counts": counts, "seconds": elapsed}


# ---------------------------------------------------------------------- train

def _lenet_config(cfg: ExperimentConfig, extra_features: int = 0) -> LeNetConfig:
    return LeNetConfig(num_classes=cfg.num_beams, extra_features=extra_features)


def _transformer_config(cfg: ExperimentConfig) -> TransformerConfig:
    return TransformerConfig(num_classes=cfg.num_beams,
                             dropout=cfg.raw["train"]["transformer_dropout"])


def _train_config(cfg: ExperimentConfig, seed: int, transformer: bool = False) -> TrainConfig:
    t = cfg.raw["train"]
    lr = t["learning_rate"]
    if transformer and t["transformer_learning_rate"] > 0:
        lr = t["transformer_learning_rate"]
    return TrainConfig(
        batch_size=int(t["batch_size"]), epochs=int(t["epochs"]),
        learning_rate=lr, lr_reduction_factor=t["lr_reduction_factor"],
        plateau_patience=int(t["plateau_patience"]),
        plateau_min_delta=t["plateau_min_delta"], seed=seed,
    )


class GpsLeNet:
    """LeNet variant with standardized GPS appended at the flatten stage.

    Training inputs pack the flattened mask and the two GPS features into one
    row so the generic training loop can batch them.
    """

    def __init__(self, model: LeNet):
        self.model = model
        self.side = model.config.input_size ** 2

    def forward(self, x, train=False):
        masks = x[:, :self.side].reshape(-1, self.model.config.input_size,
                                         self.model.config.input_size)
        return self.model.forward(masks, extra=x[:, self.side:], train=train)

    def parameters(self):
        return self.model.parameters()


def _extract_split(cfg: ExperimentConfig, kb, split_dir: str):
    """Feature arrays for one split: masks for both CNN routes, sequences,
    GPS features, labels, and the localization-miss count."""
    sem_masks, full_masks, seqs, gps_feats, labels = [], [], [], [], []
    sem_ok = []
    misses = 0
    for frame in iter_frames(split_dir):
        full_masks.append(downscale_mask(frame.full_mask))
        seqs.append(sequence_features(frame.gps_history, frame.beam_history,
                                      kb.standardizer, cfg.num_beams))
        gps_feats.append(kb.standardizer.transform(
            np.asarray(frame.target_gps))[0:2])
        labels.append(frame.ground_truth_beam)
        try:
            target = localize_target(frame, kb, frame.target_gps)
            sem_masks.append(downscale_mask(target.mask))
            sem_ok.append(True)
        except NoDetectionInWindow:
            sem_masks.append(np.zeros((32, 32)))
            sem_ok.append(False)
            misses += 1
    return {
        "sem_masks": np.asarray(sem_masks),
        "full_masks": np.asarray(full_masks),
        "seqs": np.asarray(seqs),
        "gps": np.asarray(gps_feats),
        "labels": np.asarray(labels, dtype=np.int64),
        "sem_ok": np.asarray(sem_ok, dtype=bool),
        "misses": misses,
    }


def run_train(cfg: ExperimentConfig, out_dir: str, baseline2: bool = False) -> dict:
    """Build the KB, train the classifiers, persist all artifacts."""
    started = time.perf_counter()
    paths = _paths(out_dir)
    train_dir = paths["dataset"]["train"]
    if not os.path.exists(os.path.join(train_dir, "manifest.csv")):
        raise PipelineError(f"dataset missing; run gen first ({train_dir})")

    pairs = [(f.target_gps, f.ground_truth_beam) for f in iter_frames(train_dir)]
    kb = build_kb(pairs, k=cfg.kb_clusters, num_divisions=cfg.kb_divisions,
                  window_half_width=cfg.kb_window, num_beams=cfg.num_beams,
                  seed=cfg.seed_int(3))
    save_kb(kb, paths["kb"])

    train = _extract_split(cfg, kb, train_dir)
    val = _extract_split(cfg, kb, paths["dataset"]["val"])
    from ..neural import evaluate_loss, train_classifier

    summary = {"semantic_train_misses": train["misses"]}

    lenet = LeNet(_lenet_config(cfg), seed=cfg.seed_int(21))
    ok = train["sem_ok"]
    train_classifier(lenet, train["sem_masks"][ok], train["labels"][ok],
                     _train_config(cfg, cfg.seed_int(11)),
                     val_x=val["sem_masks"], val_labels=val["labels"])
    _, summary["lenet_val_top1"] = evaluate_loss(lenet, val["sem_masks"], val["labels"])
    save_checkpoint(paths["lenet"], "lenet",
                    {"num_classes": cfg.num_beams}, lenet.params)

    baseline1 = LeNet(_lenet_config(cfg), seed=cfg.seed_int(22))
    train_classifier(baseline1, train["full_masks"], train["labels"],
                     _train_config(cfg, cfg.seed_int(12)),
                     val_x=val["full_masks"], val_labels=val["labels"])
    _, summary["baseline1_val_top1"] = evaluate_loss(baseline1, val["full_masks"],
                                                     val["labels"])
    save_checkpoint(paths["baseline1"], "lenet",
                    {"num_classes": cfg.num_beams}, baseline1.params)

    transformer = Transformer(_transformer_config(cfg), seed=cfg.seed_int(23))
    train_classifier(transformer, train["seqs"], train["labels"],
                     _train_config(cfg, cfg.seed_int(13), transformer=True),
                     val_x=val["seqs"], val_labels=val["labels"])
    _, summary["transformer_val_top1"] = evaluate_loss(transformer, val["seqs"],
                                                       val["labels"])
    save_checkpoint(paths["transformer"], "transformer",
                    {"num_classes": cfg.num_beams}, transformer.params)

    artifacts = {"kb": "kb.json", "lenet": "lenet.ckpt",
                 "baseline1": "baseline1.ckpt", "transformer": "transformer.ckpt"}

    if baseline2:
        b2 = GpsLeNet(LeNet(_lenet_config(cfg, extra_features=2), seed=cfg.seed_int(24)))
        side = b2.side
        pack = np.hstack([train["full_masks"].reshape(-1, side), train["gps"]])
        pack_val = np.hstack([val["full_masks"].reshape(-1, side), val["gps"]])
        train_classifier(b2, pack, train["labels"],
                         _train_config(cfg, cfg.seed_int(14)),
                         val_x=pack_val, val_labels=val["labels"])
        _, summary["baseline2_val_top1"] = evaluate_loss(b2, pack_val, val["labels"])
        save_checkpoint(paths["baseline2"], "lenet_gps",
                        {"num_classes": cfg.num_beams}, b2.model.params)
        artifacts["baseline2"] = "baseline2.ckpt"

    elapsed = time.perf_counter() - started
    _update_manifest(out_dir, cfg, {"artifacts": artifacts,
                                    "wall_clock_s": {"train": elapsed}})
    summary["seconds"] = elapsed
    return summary


def _load_models(cfg: ExperimentConfig, out_dir: str, baseline2: bool = False):
    paths = _paths(out_dir)
    for key in ("kb", "lenet", "baseline1", "transformer"):
        if not os.path.exists(paths[key]):
            raise PipelineError(f"missing artifact {paths[key]}; run train first")
    kb = load_kb(paths["kb"])
    lenet = LeNet(_lenet_config(cfg), seed=0)
    restore_params(lenet, load_checkpoint(paths["lenet"])[2])
    baseline1 = LeNet(_lenet_config(cfg), seed=0)
    restore_params(baseline1, load_checkpoint(paths["baseline1"])[2])
    transformer = Transformer(_transformer_config(cfg), seed=0)
    restore_params(transformer, load_checkpoint(paths["transformer"])[2])
    models = {"kb": kb, "lenet": lenet, "baseline1": baseline1,
              "transformer": transformer}
    if baseline2:
        if not os.path.exists(paths["baseline2"]):
            raise PipelineError("baseline2 checkpoint missing; train with baseline2 enabled")
        b2 = GpsLeNet(LeNet(_lenet_config(cfg, extra_features=2), seed=0))
        restore_params(b2.model, load_checkpoint(paths["baseline2"])[2])
        models["baseline2"] = b2
    return models


def _semantic_prediction(frame, kb, lenet):
    try:
        target = localize_target(frame, kb, frame.target_gps)
    except NoDetectionInWindow:
        return None, None
    return lenet.predict(downscale_mask(target.mask)), target


# ----------------------------------------------------------------- betasearch

def run_betasearch(cfg: ExperimentConfig, out_dir: str) -> dict:
    """Per-scenario beta calibration on the corrupted validation split."""
    started = time.perf_counter()
    paths = _paths(out_dir)
    models = _load_models(cfg, out_dir)
    kb, lenet, transformer = models["kb"], models["lenet"], models["transformer"]
    os.makedirs(paths["surfaces"], exist_ok=True)

    chosen = {}
    for scenario_index, scenario in enumerate(cfg.scenarios):
        profile = cfg.profiles[scenario]
        sem_preds, trn_preds, labels = [], [], []
        for i, frame in enumerate(iter_frames(paths["dataset"]["val"])):
            noisy = corrupt(frame, profile, cfg.corruption_seed(1, scenario_index, i),
                            cfg.world)
            sem, _ = _semantic_prediction(noisy, kb, lenet)
            sem_preds.append(sem)
            trn_preds.append(transformer.predict(sequence_features(
                noisy.gps_history, noisy.beam_history, kb.standardizer,
                cfg.num_beams)))
            labels.append(noisy.ground_truth_beam)
        result = fusion_mod.grid_search_betas(
            list(zip(range(len(labels)), labels)),
            lambda i: sem_preds[i], lambda i: trn_preds[i],
            step=cfg.raw["fusion"]["step"], bound=cfg.raw["fusion"]["bound"])
        fusion_mod.write_surface_csv(
            result, os.path.join(paths["surfaces"], f"{scenario}.csv"))
        chosen[scenario] = {"beta1": result.beta1, "beta2": result.beta2,
                            "top1": result.top1}

    with open(paths["betas"], "w", encoding="ascii") as fh:
        json.dump(chosen, fh, sort_keys=True, indent=2)
        fh.write("\n")
    elapsed = time.perf_counter() - started
    _update_manifest(out_dir, cfg, {
        "artifacts": {"betas": "betas.json"},
        "wall_clock_s": {"betasearch": elapsed},
    })
    return {"betas": chosen, "seconds": elapsed}


# ----------------------------------------------------------------------- eval

def run_eval(cfg: ExperimentConfig, out_dir: str, scenario: str,
             baseline2: bool = False) -> dict:
    """Evaluate one corruption scenario on the test split."""
    started = time.perf_counter()
    if scenario not in cfg.scenarios:
        raise PipelineError(f"scenario {scenario!r} not in config eval.scenarios")
    paths = _paths(out_dir)
    if not os.path.exists(paths["betas"]):
        raise PipelineError("betas.json missing; run betasearch first")
    with open(paths["betas"], encoding="ascii") as fh:
        betas_doc = json.load(fh)
    weights = fusion_mod.FusionWeights(
        betas_doc[scenario]["beta1"], betas_doc[scenario]["beta2"],
        bound=cfg.raw["fusion"]["bound"])

    models = _load_models(cfg, out_dir, baseline2=baseline2)
    kb, lenet, transformer = models["kb"], models["lenet"], models["transformer"]
    baseline1 = models["baseline1"]
    codebook = generate_codebook(cfg.codebook)
    profile = cfg.profiles[scenario]
    scenario_index = cfg.scenarios.index(scenario)

    methods = ["hybrid", "semantic", "transformer", "baseline1"]
    if baseline2:
        methods.append("baseline2")
    records = {m: [] for m in methods}
    latencies = []
    violations = 0
    violating_frames = []
    no_detection = 0
    omega_semantic = 0
    n_frames = 0

    from ..scene import azimuth_of

    cb_lo, cb_hi = cfg.codebook.azimuth_range
    for i, frame in enumerate(iter_frames(paths["dataset"]["test"])):
        noisy = corrupt(frame, profile, cfg.corruption_seed(2, scenario_index, i),
                        cfg.world)
        n_frames += 1

        t0 = time.perf_counter()
        sem_pred, _ = _semantic_prediction(noisy, kb, lenet)
        latency_ms = (time.perf_counter() - t0) * 1e3
        latencies.append(latency_ms)
        if latency_ms > cfg.t_max_ms:
            violations += 1
            violating_frames.append(frame.frame_id)
        if sem_pred is None:
            no_detection += 1

        trn_pred = transformer.predict(sequence_features(
            noisy.gps_history, noisy.beam_history, kb.standardizer, cfg.num_beams))
        decision, hybrid_pred = fusion_mod.fused_prediction(sem_pred, trn_pred, weights)
        omega_semantic += decision.omega
        b1_pred = baseline1.predict(downscale_mask(noisy.full_mask))
        preds = {
            "hybrid": hybrid_pred,
            "semantic": sem_pred if sem_pred is not None
            else uniform_prediction(cfg.num_beams),
            "transformer": trn_pred,
            "baseline1": b1_pred,
        }
        if baseline2:
            side = models["baseline2"].side
            packed = np.hstack([downscale_mask(noisy.full_mask).reshape(side),
                                kb.standardizer.transform(np.asarray(noisy.target_gps))])
            preds["baseline2"] = models["baseline2"].model.predict(
                packed[:side].reshape(32, 32), extra=packed[side:])

        # physical beam powers come from the uncorrupted channel
        target_az = azimuth_of(cfg.world, frame.target.position)
        state = line_of_sight(min(max(target_az, cb_lo), cb_hi))
        rates = beam_rates(state, codebook, cfg.radio)
        floor = float(rates.min())
        true_power = float(rates[frame.ground_truth_beam])
        for method, pred in preds.items():
            ranking = pred.ranking()
            records[method].append(metrics_mod.EvalRecord(
                frame_id=frame.frame_id,
                true_beam=frame.ground_truth_beam,
                ranked_beams=ranking,
                true_beam_power=true_power,
                predicted_beam_power=float(rates[pred.argmax]),
                noise_floor=floor,
            ))

    lenet_count = lenet.parameter_count()
    transformer_count = transformer.parameter_count()
    param_counts = {
        "hybrid": lenet_count + transformer_count,
        "semantic": lenet_count,
        "transformer": transformer_count,
        "baseline1": baseline1.parameter_count(),
    }
    if baseline2:
        param_counts["baseline2"] = models["baseline2"].model.parameter_count()

    # the report must be byte-reproducible from (config, seeds); wall-clock
    # latency lives in the run manifest instead
    report = {
        "scenario": scenario,
        "config_hash": cfg.config_hash(),
        "betas": betas_doc[scenario],
        "frames": n_frames,
        "semantic_no_detection": no_detection,
        "fusion_semantic_picks": omega_semantic,
        "methods": {m: metrics_mod.method_report(records[m], param_counts[m])
                    for m in methods},
    }
    os.makedirs(paths["reports"], exist_ok=True)
    report_path = os.path.join(paths["reports"], f"{scenario}.json")
    metrics_mod.write_report_json(report, report_path)
    elapsed = time.perf_counter() - started
    latency = {
        "median_ms": statistics.median(latencies),
        "max_ms": max(latencies),
        "t_max_ms": cfg.t_max_ms,
        "violations": violations,
        "violating_frames": violating_frames,
    }
    _update_manifest(out_dir, cfg, {
        "artifacts": {f"report_{scenario}": os.path.join("reports", f"{scenario}.json")},
        "wall_clock_s": {f"eval_{scenario}": elapsed},
        "latency": {scenario: latency},
    })
    report["latency"] = latency
    report["seconds"] = elapsed
    return report


# --------------------------------------------------------------------- report

def run_report(run_dirs: list[str], out_path: str) -> int:
    """Merge per-scenario reports into one CSV keyed (scenario, method, metric)."""
    reports = []
    hashes = set()
    for run_dir in run_dirs:
        reports_dir = _paths(run_dir)["reports"]
        if not os.path.isdir(reports_dir):
            raise PipelineError(f"no reports in {run_dir}")
        for name in sorted(os.listdir(reports_dir)):
            if not name.endswith(".json"):
                continue
            with open(os.path.join(reports_dir, name), encoding="ascii") as fh:
                doc = json.load(fh)
            hashes.add(doc["config_hash"])
            reports.append(doc)
    if not reports:
        raise PipelineError("no scenario reports found")
    if len(hashes) > 1:
        raise PipelineError(f"conflicting config hashes: {sorted(h[:12] for h in hashes)}")

    rows = []
    for doc in reports:
        rows.extend(metrics_mod.report_csv_rows(doc))
    rows.sort()
    with open(out_path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scenario", "method", "metric", "value"])
        for row in rows:
            writer.writerow([row[0], row[1], row[2], repr(row[3])])
    return len(rows)
