"""Experiment orchestration: configuration, staged runs, and result emission.

A run directory holds one subdirectory per seed with every stage's outputs
(dataset, checkpoints, per-example records, ECDF files, cluster summaries,
bias records) plus the resolved config and an aggregate results table.
Stages are individually invokable and persist everything they produce, so
every aggregate number is recomputable from the per-example files.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis as an
from . import data as dt
from .analysis import XorOracle, bias_from_predictions, mean_probs, predict_dataset
from .baselines import BaselineClassifier, train_baseline
from .dpgmm import DpgmmConfig
from .model import ModelConfig, PrimoModel
from .training import TrainConfig, train

CONFIG_VERSION = 1

# stage-seed derivation tags (documented in the README)
S_DATA, S_MASK, S_SPLIT = 101, 102, 103
S_MODEL, S_TRAIN = 104, 105
S_UNI_INIT, S_UNI_TRAIN, S_MULTI_INIT, S_MULTI_TRAIN = 106, 107, 108, 109
S_EVAL, S_DPGMM = 110, 111
S_BIAS_SPLIT, S_BIAS_MODEL, S_BIAS_TRAIN, S_BIAS_EVAL = 112, 113, 114, 115
S_BIAS_UNI_INIT, S_BIAS_UNI_TRAIN, S_BIAS_MULTI_INIT, S_BIAS_MULTI_TRAIN = 116, 117, 118, 119

STAGES = ("data", "train", "analyze", "bias")


class ConfigError(ValueError):
    """Invalid or unknown experiment configuration."""


class StageError(RuntimeError):
    """A pipeline stage failed; the message names the stage."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def derive_seed(*parts) -> int:
    """Collapse (run seed, stage tag, ...) into one deterministic integer."""
    return int(np.random.SeedSequence(tuple(int(p) for p in parts)).generate_state(1)[0])


def fmt9(x) -> str:
    """Serialize a number with 9 significant digits; NaN/None become NA."""
    if x is None:
        return "NA"
    x = float(x)
    if math.isnan(x):
        return "NA"
    return format(x, ".9g")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class DataSection:
    kind: str = "xor"
    n_samples: int = 40_000
    centers: tuple = ((-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0))
    sigma: float = 0.5
    weights: tuple | None = None
    mask_prob: float = 0.5
    train_frac: float = 0.7
    path: str | None = None
    test_path: str | None = None

    def xor_config(self, seed) -> dt.XorConfig:
        return dt.XorConfig(
            n_samples=self.n_samples,
            centers=tuple(tuple(c) for c in self.centers),
            sigma=self.sigma,
            weights=tuple(self.weights) if self.weights is not None else None,
            mask_prob=self.mask_prob,
            train_frac=self.train_frac,
            seed=derive_seed(seed, S_DATA),
        )


@dataclass
class AnalysisSection:
    mc_samples: int = 200
    n_high_v: int = 5
    n_low_v: int = 5
    dpgmm: DpgmmConfig = field(default_factory=DpgmmConfig)


@dataclass
class BiasSection:
    enabled: bool = True


@dataclass
class ExperimentConfig:
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3])
    output_dir: str | None = None
    data: DataSection = field(default_factory=DataSection)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    bias: BiasSection = field(default_factory=BiasSection)

    def to_dict(self):
        doc = {"config_version": CONFIG_VERSION, "seeds": list(self.seeds),
               "output_dir": self.output_dir}
        for name in ("data", "model", "train", "analysis", "bias"):
            doc[name] = dataclasses.asdict(getattr(self, name))
        return doc


def _build_section(cls, doc, where):
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    return cls(**doc)


def _sanitize(obj):
    """Replace NaN floats with None so emitted JSON stays standard."""
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, float) and math.isnan(obj):
        return None
    return obj


def config_from_dict(doc) -> ExperimentConfig:
    doc = dict(doc)
    version = doc.pop("config_version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config_version {version}")
    top_allowed = {"seeds", "output_dir", "data", "model", "train", "analysis", "bias"}
    unknown = set(doc) - top_allowed
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    cfg = ExperimentConfig()
    if "seeds" in doc:
        seeds = doc["seeds"]
        if not isinstance(seeds, list) or not all(isinstance(s, int) for s in seeds):
            raise ConfigError("seeds must be a list of integers")
        cfg.seeds = list(seeds)
    cfg.output_dir = doc.get("output_dir")
    try:
        if "data" in doc:
            cfg.data = _build_section(DataSection, doc["data"], "data")
        if "model" in doc:
            cfg.model = _build_section(ModelConfig, doc["model"], "model")
        if "train" in doc:
            cfg.train = _build_section(TrainConfig, doc["train"], "train")
        if "analysis" in doc:
            sub = dict(doc["analysis"])
            dp = sub.pop("dpgmm", None)
            section = _build_section(AnalysisSection, sub, "analysis")
            if dp is not None:
                section.dpgmm = _build_section(DpgmmConfig, dp, "analysis.dpgmm")
            cfg.analysis = section
        if "bias" in doc:
            cfg.bias = _build_section(BiasSection, doc["bias"], "bias")
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.data.kind not in ("xor", "external"):
        raise ConfigError(f"data.kind must be 'xor' or 'external', got {cfg.data.kind!r}")
    if cfg.data.kind == "external" and not cfg.data.path:
        raise ConfigError("external data needs data.path")
    if not cfg.seeds:
        raise ConfigError("at least one seed is required")
    return cfg


def load_config(path, overrides=(), extra_seeds=()) -> ExperimentConfig:
    """Parse a JSON config file, then apply dotted-path overrides."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key.path=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = value
    cfg = config_from_dict(doc)
    for s in extra_seeds:
        cfg.seeds.append(int(s))
    return cfg


# ---------------------------------------------------------------------------
# stage bookkeeping


def _stages_path(seed_dir):
    return Path(seed_dir) / "stages.json"


def _read_stages(seed_dir):
    path = _stages_path(seed_dir)
    if path.exists():
        return json.loads(path.read_text())
    return {}

def _mark_stage(seed_dir, stage, status, seconds=None):
    doc = _read_stages(seed_dir)
    doc[stage] = {"status": status}
    if seconds is not None:
        doc[stage]["seconds"] = round(seconds, 3)
    _stages_path(seed_dir).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _run_stage(stage, seed_dir, fn, *args):
    t0 = time.perf_counter()
    try:
        out = fn(*args)
    except Exception as exc:
        _mark_stage(seed_dir, stage, "failed")
        raise StageError(stage, exc) from exc
    _mark_stage(seed_dir, stage, "ok", time.perf_counter() - t0)
    return out


def _require_stage(seed_dir, stage):
    status = _read_stages(seed_dir).get(stage, {}).get("status")
    if status != "ok":
        raise ConfigError(
            f"stage {stage!r} has not completed in {seed_dir}; run it first"
        )


# ---------------------------------------------------------------------------
# per-seed stages


def _seed_dir(run_dir, seed):
    d = Path(run_dir) / f"seed_{seed}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_split(seed_dir, sp):
    doc = {"train": [int(i) for i in sp.train.ids], "test": [int(i) for i in sp.test.ids]}
    (Path(seed_dir) / "split.json").write_text(json.dumps(doc) + "\n")


def _load_split(seed_dir) -> dt.DatasetSplit:
    ds = dt.load(Path(seed_dir) / "dataset.tsv")
    doc = json.loads((Path(seed_dir) / "split.json").read_text())
    pos = {int(i): k for k, i in enumerate(ds.ids)}
    train_idx = [pos[i] for i in doc["train"]]
    test_idx = [pos[i] for i in doc["test"]]
    return dt.DatasetSplit(train=ds.subset(train_idx), test=ds.subset(test_idx))


def stage_data(cfg: ExperimentConfig, seed, seed_dir):
    """Generate (or ingest) the dataset, apply masking, fix the split."""
    if cfg.data.kind == "xor":
        ds = dt.generate_xor(cfg.data.xor_config(seed))
        ds = dt.apply_missingness(ds, cfg.data.mask_prob, derive_seed(seed, S_MASK))
        sp = dt.split(ds, (cfg.data.train_frac, 1.0 - cfg.data.train_frac),
                      derive_seed(seed, S_SPLIT))
    elif cfg.data.test_path:
        train_ds = dt.load(cfg.data.path)
        test_ds = dt.load(cfg.data.test_path)
        if train_ds.n_classes != test_ds.n_classes:
            raise ConfigError("train and test files disagree on n_classes")
        offset = train_ds.ids.max() + 1 if len(train_ds) else 0
        if len(set(train_ds.ids) & set(test_ds.ids)):
            test_ds = dt.Dataset(test_ds.x_o, test_ds.x_m, test_ds.m_present,
                                 test_ds.y, test_ds.ids + offset, test_ds.n_classes)
        sp = dt.DatasetSplit(train=train_ds, test=test_ds)
        ds = dt.Dataset(
            np.vstack([train_ds.x_o, test_ds.x_o]),
            np.vstack([train_ds.x_m, test_ds.x_m]),
            np.concatenate([train_ds.m_present, test_ds.m_present]),
            np.concatenate([train_ds.y, test_ds.y]),
            np.concatenate([train_ds.ids, test_ds.ids]),
            train_ds.n_classes,
        )
    else:
        ds = dt.load(cfg.data.path)
        sp = dt.split(ds, (cfg.data.train_frac, 1.0 - cfg.data.train_frac),
                      derive_seed(seed, S_SPLIT))
    dt.save(ds, Path(seed_dir) / "dataset.tsv")
    _write_split(seed_dir, sp)
    return sp


def _model_config(cfg: ExperimentConfig, ds) -> ModelConfig:
    mc = dataclasses.replace(
        cfg.model, x_o_dim=ds.x_o_dim, x_m_dim=ds.x_m_dim, n_classes=ds.n_classes
    )
    return mc


def _write_train_log(path, result):
    cols = ["epoch", "recon_complete", "kl_complete", "recon_missing", "kl_missing",
            "reg_anchor", "reg_tie", "total", "acc_train_missing", "acc_train_complete",
            "acc_test_missing", "acc_test_complete"]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\t".join(cols) + "\n")
        for rec in result.epochs:
            b = rec.breakdown
            row = [str(rec.epoch)] + [
                fmt9(v)
                for v in (b.recon_complete, b.kl_complete, b.recon_missing, b.kl_missing,
                          b.reg_anchor, b.reg_tie, b.total, rec.acc_train_missing,
                          rec.acc_train_complete, rec.acc_test_missing, rec.acc_test_complete)
            ]
            fh.write("\t".join(row) + "\n")


def stage_train(cfg: ExperimentConfig, seed, seed_dir):
    """Train the latent-variable model and both baselines; write checkpoints."""
    _require_stage(seed_dir, "data")
    sp = _load_split(seed_dir)
    mc = _model_config(cfg, sp.train)
    model = PrimoModel(mc, seed=derive_seed(seed, S_MODEL))
    tc = dataclasses.replace(cfg.train, seed=derive_seed(seed, S_TRAIN))
    result = train(model, sp, tc)
    model.save(Path(seed_dir) / "primo.json")
    _write_train_log(Path(seed_dir) / "train_log.tsv", result)
    uni_tc = dataclasses.replace(cfg.train, seed=derive_seed(seed, S_UNI_TRAIN))
    uni = train_baseline("unimodal", sp, uni_tc, mc, seed=derive_seed(seed, S_UNI_INIT))
    uni.save(Path(seed_dir) / "baseline_unimodal.json")
    multi_tc = dataclasses.replace(cfg.train, seed=derive_seed(seed, S_MULTI_TRAIN))
    multi = train_baseline("multimodal", sp, multi_tc, mc, seed=derive_seed(seed, S_MULTI_INIT))
    multi.save(Path(seed_dir) / "baseline_multimodal.json")
    return model, uni, multi


def _oracle_for(cfg: ExperimentConfig, seed) -> XorOracle | None:
    if cfg.data.kind != "xor":
        return None
    return XorOracle(cfg.data.xor_config(seed))


def stage_analyze(cfg: ExperimentConfig, seed, seed_dir):
    """Evaluate both scenarios, emit records, ECDFs, and cluster summaries."""
    _require_stage(seed_dir, "train")
    sp = _load_split(seed_dir)
    test = sp.test
    model = PrimoModel.load(Path(seed_dir) / "primo.json")
    uni = BaselineClassifier.load(Path(seed_dir) / "baseline_unimodal.json")
    multi = BaselineClassifier.load(Path(seed_dir) / "baseline_multimodal.json")
    k = cfg.analysis.mc_samples
    eval_seed = derive_seed(seed, S_EVAL)
    n_classes = test.n_classes

    logits_miss = predict_dataset(model, test, "missing", k, eval_seed)
    p_miss = mean_probs(logits_miss)
    v_miss = an.impact_from_logits(logits_miss)
    comp_idx = test.complete_indices()
    comp = test.subset(comp_idx)
    logits_comp = predict_dataset(model, comp, "complete", k, eval_seed)
    p_comp = mean_probs(logits_comp)
    v_comp = an.impact_from_logits(logits_comp)
    p_uni = uni.predict_proba(test.x_o)
    p_multi = multi.predict_proba(comp.x_o, comp.x_m)

    oracle = _oracle_for(cfg, seed)
    o_uni = oracle.unimodal_probs(test.x_o) if oracle else None
    o_multi = oracle.multimodal_probs(comp.x_o, comp.x_m) if oracle else None

    # per-example records: everything the aggregate table is derived from
    comp_pos = {int(i): j for j, i in enumerate(comp_idx)}
    cols = ["id", "y", "x_o", "x_m"]
    for tag in ("primo_miss", "primo_comp", "uni", "multi", "oracle_uni", "oracle_multi"):
        cols += [f"{tag}_p{c}" for c in range(n_classes)]
    cols += ["v_missing", "v_complete", "v_gap"]
    with open(Path(seed_dir) / "records.tsv", "w", encoding="ascii") as fh:
        fh.write("\t".join(cols) + "\n")
        for i in range(len(test)):
            j = comp_pos.get(i)
            row = [
                str(int(test.ids[i])),
                str(int(test.y[i])) if test.y[i] != dt.UNLABELED else "NA",
                " ".join(fmt9(v) for v in test.x_o[i]),
                " ".join(fmt9(v) for v in test.x_m[i]) if test.m_present[i] else "NA",
            ]
            for arr, complete_only in (
                (p_miss, False), (p_comp, True), (p_uni, False), (p_multi, True),
                (o_uni, False), (o_multi, True),
            ):
                if arr is None:
                    row += ["NA"] * n_classes
                elif complete_only:
                    row += [fmt9(arr[j][c]) for c in range(n_classes)] if j is not None \
                        else ["NA"] * n_classes
                else:
                    row += [fmt9(arr[i][c]) for c in range(n_classes)]
            row.append(fmt9(v_miss[i]))
            row.append(fmt9(v_comp[j]) if j is not None else "NA")
            row.append(fmt9(v_miss[i] - v_comp[j]) if j is not None else "NA")
            fh.write("\t".join(row) + "\n")

    for name, values in (
        ("ecdf_v_missing.tsv", v_miss),
        ("ecdf_v_complete.tsv", v_comp),
        ("ecdf_v_gap.tsv", v_miss[comp_idx] - v_comp),
    ):
        xs, qs = an.ecdf(values)
        with open(Path(seed_dir) / name, "w", encoding="ascii") as fh:
            fh.write("value\tquantile\n")
            for xv, qv in zip(xs, qs):
                fh.write(f"{fmt9(xv)}\t{fmt9(qv)}\n")

    # cluster the highest- and lowest-impact examples under the missing prior
    dp_cfg = dataclasses.replace(cfg.analysis.dpgmm, seed=derive_seed(seed, S_DPGMM))
    order = np.argsort(-v_miss, kind="stable")
    chosen = [("high", i) for i in order[: cfg.analysis.n_high_v]]
    chosen += [("low", i) for i in order[::-1][: cfg.analysis.n_low_v]]
    with open(Path(seed_dir) / "clusters.tsv", "w", encoding="ascii") as fh:
        fh.write("\t".join(
            ["group", "id", "v_missing", "cluster_id", "weight", "dominant_label"]
            + [f"mean_p{c}" for c in range(n_classes)]
        ) + "\n")
        for group, i in chosen:
            probs = an.softmax_rows(logits_miss[i])
            pred = an.PredictionSet(
                example_id=int(test.ids[i]), scenario="missing",
                logits=logits_miss[i], probs=probs, mean_prob=probs.mean(axis=0),
            )
            for summary in an.cluster_logits(pred, dp_cfg):
                fh.write("\t".join(
                    [group, str(int(test.ids[i])), fmt9(v_miss[i]),
                     str(summary.cluster_id), fmt9(summary.weight),
                     str(summary.dominant_label)]
                    + [fmt9(v) for v in summary.mean_class_distribution]
                ) + "\n")

    labeled = test.y != dt.UNLABELED
    comp_labeled = labeled[comp_idx]

    def _acc(probs, sel, y):
        if probs is None or not np.any(sel):
            return float("nan")
        return float(np.mean(np.argmax(probs[sel], axis=1) == y[sel]))

    accuracy = {
        "primo": {
            "missing": _acc(p_miss, labeled, test.y),
            "complete": _acc(p_comp, comp_labeled, comp.y),
        },
        "baseline_unimodal": {
            "missing": _acc(p_uni, labeled, test.y),
            "complete": _acc(p_uni[comp_idx], comp_labeled, comp.y),
        },
        "baseline_multimodal": {
            "missing": float("nan"),
            "complete": _acc(p_multi, comp_labeled, comp.y),
        },
    }
    if oracle:
        accuracy["bayes_oracle"] = {
            "missing": oracle.bayes_accuracy("missing", seed=derive_seed(seed, S_EVAL)),
            "complete": oracle.bayes_accuracy("complete", seed=derive_seed(seed, S_EVAL)),
        }
    metrics = {
        "seed": seed,
        "n_train": len(sp.train),
        "n_test": len(test),
        "n_test_complete": int(len(comp_idx)),
        "n_test_labeled": int(labeled.sum()),
        "accuracy": accuracy,
        "posterior_prior_kl": an.posterior_prior_divergence(model, test),
        "v_mean": {"missing": float(v_miss.mean()), "complete": float(v_comp.mean())},
    }
    if cfg.data.kind == "xor":
        gap = v_miss[comp_idx] - v_comp
        x = comp.x_o[:, 0]
        metrics["v_gap_regions"] = {
            "left": float(gap[x < -0.25].mean()),
            "right": float(gap[x > 0.25].mean()),
        }
    with open(Path(seed_dir) / "metrics.json", "w", encoding="ascii") as fh:
        json.dump(_sanitize(metrics), fh, indent=1, sort_keys=True)
        fh.write("\n")
    return metrics


def stage_bias(cfg: ExperimentConfig, seed, seed_dir):
    """Disjoint-halves protocol: oracles on one half, a fresh model on the other.

    Half A keeps complete modalities (restored from the generator for
    synthetic data) and trains the reference predictors; half B keeps its
    masking and trains the model under analysis. For synthetic data the
    closed-form oracle is also evaluated and is the primary reference.
    """
    _require_stage(seed_dir, "data")
    sp = _load_split(seed_dir)
    train_ds, test = sp.train, sp.test
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(derive_seed(seed, S_BIAS_SPLIT))))
    order = rng.permutation(len(train_ds))
    half_a = train_ds.subset(order[: len(train_ds) // 2])
    half_b = train_ds.subset(order[len(train_ds) // 2 :])

    if cfg.data.kind == "xor":
        full = dt.generate_xor(cfg.data.xor_config(seed))
        x_m = full.x_m[half_a.ids]
        half_a = dt.Dataset(half_a.x_o, x_m, np.ones(len(half_a), dtype=bool),
                            half_a.y, half_a.ids, half_a.n_classes)
    else:
        half_a = half_a.subset(half_a.complete_indices())

    mc = _model_config(cfg, train_ds)
    bias_dir = Path(seed_dir) / "bias"
    bias_dir.mkdir(exist_ok=True)
    oracle_split = dt.DatasetSplit(train=half_a, test=test)
    uni = train_baseline(
        "unimodal", oracle_split,
        dataclasses.replace(cfg.train, seed=derive_seed(seed, S_BIAS_UNI_TRAIN)),
        mc, seed=derive_seed(seed, S_BIAS_UNI_INIT))
    multi = train_baseline(
        "multimodal", oracle_split,
        dataclasses.replace(cfg.train, seed=derive_seed(seed, S_BIAS_MULTI_TRAIN)),
        mc, seed=derive_seed(seed, S_BIAS_MULTI_INIT))
    uni.save(bias_dir / "oracle_unimodal.json")
    multi.save(bias_dir / "oracle_multimodal.json")

    model = PrimoModel(mc, seed=derive_seed(seed, S_BIAS_MODEL))
    tc = dataclasses.replace(cfg.train, seed=derive_seed(seed, S_BIAS_TRAIN))
    train(model, dt.DatasetSplit(train=half_b, test=test), tc, log_accuracy=False)
    model.save(bias_dir / "primo_half.json")

    k = cfg.analysis.mc_samples
    eval_seed = derive_seed(seed, S_BIAS_EVAL)
    comp_idx = test.complete_indices()
    comp = test.subset(comp_idx)
    p_miss = mean_probs(predict_dataset(model, test, "missing", k, eval_seed))
    p_comp = mean_probs(predict_dataset(model, comp, "complete", k, eval_seed))

    flavors = {}
    columns = {}
    trained_report, trained_cols = bias_from_predictions(
        p_miss, p_comp, comp_idx, uni.predict_proba(test.x_o),
        multi.predict_proba(comp.x_o, comp.x_m))
    flavors["trained"] = dataclasses.asdict(trained_report)
    columns["trained"] = trained_cols
    oracle = _oracle_for(cfg, seed)
    if oracle:
        analytic_report, analytic_cols = bias_from_predictions(
            p_miss, p_comp, comp_idx, oracle.unimodal_probs(test.x_o),
            oracle.multimodal_probs(comp.x_o, comp.x_m))
        flavors["analytic"] = dataclasses.asdict(analytic_report)
        columns["analytic"] = analytic_cols

    with open(bias_dir / "bias.json", "w", encoding="ascii") as fh:
        json.dump(_sanitize(flavors), fh, indent=1, sort_keys=True)
        fh.write("\n")

    n_classes = test.n_classes
    comp_pos = {int(i): j for j, i in enumerate(comp_idx)}
    header = ["id"] + [f"p_miss_p{c}" for c in range(n_classes)]
    header += [f"p_comp_p{c}" for c in range(n_classes)]
    for flavor in columns:
        header += [f"{flavor}_tvd_miss_uni", f"{flavor}_tvd_comp_multi",
                   f"{flavor}_tvd_miss_multi", f"{flavor}_tvd_comp_uni",
                   f"{flavor}_tvd_oracles"]
    with open(bias_dir / "bias_records.tsv", "w", encoding="ascii") as fh:
        fh.write("\t".join(header) + "\n")
        for i in range(len(test)):
            j = comp_pos.get(i)
            row = [str(int(test.ids[i]))]
            row += [fmt9(p_miss[i][c]) for c in range(n_classes)]
            row += [fmt9(p_comp[j][c]) for c in range(n_classes)] if j is not None \
                else ["NA"] * n_classes
            for flavor, c in columns.items():
                row.append(fmt9(c["tvd_miss_uni"][i]))
                row.append(fmt9(c["tvd_comp_multi"][j]) if j is not None else "NA")
                row.append(fmt9(c["tvd_miss_multi"][j]) if j is not None else "NA")
                row.append(fmt9(c["tvd_comp_uni"][j]) if j is not None else "NA")
                row.append(fmt9(c["tvd_oracles"][j]) if j is not None else "NA")
            fh.write("\t".join(row) + "\n")
    return flavors


# ---------------------------------------------------------------------------
# full runs and aggregation


def run_seed(cfg: ExperimentConfig, seed, run_dir):
    seed_dir = _seed_dir(run_dir, seed)
    _run_stage("data", seed_dir, stage_data, cfg, seed, seed_dir)
    _run_stage("train", seed_dir, stage_train, cfg, seed, seed_dir)
    _run_stage("analyze", seed_dir, stage_analyze, cfg, seed, seed_dir)
    if cfg.bias.enabled:
        _run_stage("bias", seed_dir, stage_bias, cfg, seed, seed_dir)


def write_results_table(cfg: ExperimentConfig, run_dir):
    """Aggregate per-seed accuracies into results.tsv (mean and std rows)."""
    rows = []
    methods = ["primo", "baseline_unimodal", "baseline_multimodal"]
    if cfg.data.kind == "xor":
        methods.append("bayes_oracle")
    per_cell = {}
    for seed in cfg.seeds:
        metrics = json.loads((Path(run_dir) / f"seed_{seed}" / "metrics.json").read_text())
        for method in methods:
            for scenario in ("missing", "complete"):
                acc = metrics["accuracy"].get(method, {}).get(scenario)
                rows.append((method, scenario, str(seed), acc))
                if acc is not None and not math.isnan(acc):
                    per_cell.setdefault((method, scenario), []).append(acc)
    with open(Path(run_dir) / "results.tsv", "w", encoding="ascii") as fh:
        fh.write("method\tscenario\tseed\taccuracy\tstd\n")
        for method, scenario, seed, acc in rows:
            fh.write(f"{method}\t{scenario}\t{seed}\t{fmt9(acc)}\tNA\n")
        for method in methods:
            for scenario in ("missing", "complete"):
                vals = per_cell.get((method, scenario))
                if not vals:
                    fh.write(f"{method}\t{scenario}\tmean\tNA\tNA\n")
                    continue
                mean = float(np.mean(vals))
                std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
                fh.write(f"{method}\t{scenario}\tmean\t{fmt9(mean)}\t{fmt9(std)}\n")


def write_summary(cfg: ExperimentConfig, run_dir):
    stages_needed = list(STAGES) if cfg.bias.enabled else ["data", "train", "analyze"]
    seeds_ok = {}
    complete = True
    for seed in cfg.seeds:
        stages = _read_stages(Path(run_dir) / f"seed_{seed}")
        ok = all(stages.get(s, {}).get("status") == "ok" for s in stages_needed)
        seeds_ok[str(seed)] = {"complete": ok, "stages": stages}
        complete = complete and ok
    doc = {"complete": complete, "seeds": seeds_ok}
    (Path(run_dir) / "run_summary.json").write_text(
        json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return doc


def run_experiment(cfg: ExperimentConfig, run_dir) -> Path:
    """Execute every stage for every seed and aggregate the results."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(
        json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
    try:
        for seed in cfg.seeds:
            run_seed(cfg, seed, run_dir)
        write_results_table(cfg, run_dir)
    finally:
        write_summary(cfg, run_dir)
    return run_dir
