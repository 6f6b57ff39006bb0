"""Run-directory reporting: a markdown summary plus rendered figures.

Everything here is derived from the delimited per-example files a run
emits, never from in-memory state, so the report doubles as a check that
the recorded data is sufficient to reconstruct the headline numbers.
"""

from __future__ import annotations

import json
import warnings
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .experiment import fmt9

METHOD_LABELS = {
    "primo": "PRIMO",
    "baseline_unimodal": "unimodal baseline",
    "baseline_multimodal": "multimodal baseline",
    "bayes_oracle": "Bayes oracle",
}


class IncompleteRunWarning(UserWarning):
    pass


def _read_tsv(path):
    """Columns of a TSV with a header row; NA maps to NaN, text stays text."""
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        rows = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
    cols = {}
    for i, name in enumerate(header):
        raw = [r[i] for r in rows]
        try:
            cols[name] = np.array(
                [float("nan") if v == "NA" else float(v) for v in raw]
            )
        except ValueError:
            cols[name] = np.array(raw)
    return cols


def _seed_dirs(run_dir):
    return sorted(Path(run_dir).glob("seed_*"), key=lambda p: int(p.name.split("_")[1]))


def _results_rows(run_dir):
    path = Path(run_dir) / "results.tsv"
    if not path.exists():
        return None
    return _read_tsv(path)


def _fig_accuracy(run_dir, fig_dir, results):
    methods = []
    for m in dict.fromkeys(results["method"]):
        if m not in methods:
            methods.append(m)
    scenarios = ("missing", "complete")
    means = np.full((len(methods), 2), np.nan)
    stds = np.zeros((len(methods), 2))
    is_mean = results["seed"] == "mean"
    for i, m in enumerate(methods):
        for j, s in enumerate(scenarios):
            sel = is_mean & (results["method"] == m) & (results["scenario"] == s)
            if sel.any():
                means[i, j] = results["accuracy"][sel][0]
                stds[i, j] = np.nan_to_num(results["std"][sel][0])
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.35
    xs = np.arange(len(methods))
    for j, s in enumerate(scenarios):
        ax.bar(xs + (j - 0.5) * width, means[:, j], width,
               yerr=stds[:, j], capsize=3, label=f"{s} scenario")
    ax.set_xticks(xs)
    ax.set_xticklabels([METHOD_LABELS.get(m, m) for m in methods], rotation=15)
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    ax.set_title("Accuracy by method and modality availability")
    fig.tight_layout()
    fig.savefig(fig_dir / "accuracy.png", dpi=150)
    plt.close(fig)
    return "accuracy.png"


def _fig_v_gap(run_dir, fig_dir):
    xs, gaps = [], []
    for sd in _seed_dirs(run_dir):
        rec = Path(sd) / "records.tsv"
        if not rec.exists():
            continue
        cols = _read_tsv(rec)
        if "v_gap" not in cols:
            continue
        x_o = np.array([float(str(v).split()[0]) for v in cols["x_o"]])
        keep = ~np.isnan(cols["v_gap"])
        xs.append(x_o[keep])
        gaps.append(cols["v_gap"][keep])
    if not xs:
        return None
    x = np.concatenate(xs)
    g = np.concatenate(gaps)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter(x, g, s=4, alpha=0.25, linewidths=0)
    ax.axvline(0.0, color="gray", lw=0.8, ls="--")
    ax.set_xlabel("first modality value")
    ax.set_ylabel("impact gap (missing - complete)")
    ax.set_title("Predictive-impact gap across the input space")
    fig.tight_layout()
    fig.savefig(fig_dir / "v_gap_scatter.png", dpi=150)
    plt.close(fig)
    return "v_gap_scatter.png"


def _fig_ecdf(run_dir, fig_dir):
    fig, ax = plt.subplots(figsize=(6, 4))
    drawn = False
    for name, label in (("ecdf_v_missing.tsv", "missing"), ("ecdf_v_complete.tsv", "complete")):
        for k, sd in enumerate(_seed_dirs(run_dir)):
            path = Path(sd) / name
            if not path.exists():
                continue
            cols = _read_tsv(path)
            ax.step(cols["value"], cols["quantile"], where="post",
                    color="C0" if "missing" in name else "C1",
                    alpha=0.7, label=label if k == 0 else None)
            drawn = True
    if not drawn:
        plt.close(fig)
        return None
    ax.set_xlabel("per-example predictive impact")
    ax.set_ylabel("empirical CDF")
    ax.legend()
    ax.set_title("Impact distribution by scenario (all seeds)")
    fig.tight_layout()
    fig.savefig(fig_dir / "v_ecdf.png", dpi=150)
    plt.close(fig)
    return "v_ecdf.png"


def _fig_clusters(run_dir, fig_dir):
    first = next(iter(_seed_dirs(run_dir)), None)
    if first is None or not (Path(first) / "clusters.tsv").exists():
        return None
    cols = _read_tsv(Path(first) / "clusters.tsv")
    if len(cols["id"]) == 0:
        return None
    prob_cols = sorted(c for c in cols if c.startswith("mean_p"))
    ids = cols["id"].astype(int)
    uniq = list(dict.fromkeys(zip(cols["group"], ids)))
    n = len(uniq)
    fig, axes = plt.subplots(1, n, figsize=(2.2 * n, 2.8), squeeze=False)
    for ax, (group, ex_id) in zip(axes[0], uniq):
        sel = (ids == ex_id) & (cols["group"] == group)
        weights = cols["weight"][sel]
        label_share = np.zeros(len(prob_cols))
        for c, w in zip(cols["dominant_label"][sel].astype(int), weights):
            label_share[c] += w
        ax.bar(np.arange(len(prob_cols)), label_share, color="C2")
        v = cols["v_missing"][sel][0]
        ax.set_title(f"{group} id={ex_id}\nV={v:.2f}", fontsize=8)
        ax.set_ylim(0, 1)
        ax.set_xticks(np.arange(len(prob_cols)))
    for ax in axes[0]:
        ax.tick_params(labelsize=7)
    fig.suptitle("Cluster weight by dominant label (first seed)", fontsize=10)
    fig.tight_layout()
    fig.savefig(fig_dir / "clusters.png", dpi=150)
    plt.close(fig)
    return "clusters.png"


def _fig_bias(run_dir, fig_dir):
    rows = []
    for sd in _seed_dirs(run_dir):
        path = Path(sd) / "bias" / "bias.json"
        if not path.exists():
            continue
        doc = json.loads(path.read_text())
        flavor = doc.get("analytic") or doc.get("trained")
        if flavor:
            rows.append(flavor)
    if not rows:
        return None
    keys = ["b_missing", "cross_missing_multi", "b_complete", "cross_complete_uni",
            "oracle_gap"]
    labels = ["missing vs\nuni oracle", "missing vs\nmulti oracle",
              "complete vs\nmulti oracle", "complete vs\nuni oracle", "oracle\ngap"]
    vals = np.array([[r[k] for k in keys] for r in rows])
    fig, ax = plt.subplots(figsize=(6.5, 4))
    ax.bar(np.arange(len(keys)), vals.mean(axis=0),
           yerr=vals.std(axis=0, ddof=1) if len(rows) > 1 else None, capsize=3,
           color=["C0", "C3", "C1", "C3", "gray"])
    ax.set_xticks(np.arange(len(keys)))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel("mean TVD")
    ax.set_title("Marginal predictions vs reference predictors")
    fig.tight_layout()
    fig.savefig(fig_dir / "bias.png", dpi=150)
    plt.close(fig)
    return "bias.png"


def emit_report(run_dir, figures=True) -> Path:
    """Write report.md (and figures/) from a run directory's emitted files."""
    run_dir = Path(run_dir)
    summary_path = run_dir / "run_summary.json"
    complete = False
    if summary_path.exists():
        complete = json.loads(summary_path.read_text()).get("complete", False)
    if not complete:
        warnings.warn(
            f"run at {run_dir} is incomplete; emitting a partial report",
            IncompleteRunWarning,
        )
    lines = ["# Run report", ""]
    lines.append(f"Status: {'complete' if complete else 'INCOMPLETE (partial report)'}")
    lines.append("")

    results = _results_rows(run_dir)
    if results is not None:
        lines.append("## Accuracy (mean over seeds, std in parentheses)")
        lines.append("")
        lines.append("| method | missing | complete |")
        lines.append("|---|---|---|")
        is_mean = results["seed"] == "mean"
        for m in dict.fromkeys(results["method"]):
            cells = []
            for s in ("missing", "complete"):
                sel = is_mean & (results["method"] == m) & (results["scenario"] == s)
                if sel.any() and not np.isnan(results["accuracy"][sel][0]):
                    acc = results["accuracy"][sel][0]
                    std = results["std"][sel][0]
                    cells.append(
                        f"{fmt9(acc)} ({fmt9(std)})" if not np.isnan(std) else fmt9(acc)
                    )
                else:
                    cells.append("-")
            lines.append(f"| {METHOD_LABELS.get(m, m)} | {cells[0]} | {cells[1]} |")
        lines.append("")

    bias_rows = {}
    for sd in _seed_dirs(run_dir):
        path = Path(sd) / "bias" / "bias.json"
        if path.exists():
            doc = json.loads(path.read_text())
            for flavor, rep in doc.items():
                bias_rows.setdefault(flavor, []).append(rep)
    if bias_rows:
        lines.append("## Bias against reference predictors (mean TVD over seeds)")
        lines.append("")
        lines.append("| reference | B_missing | B_complete | oracle gap | "
                     "missing vs multi | complete vs uni |")
        lines.append("|---|---|---|---|---|---|")
        for flavor, reps in sorted(bias_rows.items()):
            cells = [
                fmt9(np.mean([r[k] for r in reps]))
                for k in ("b_missing", "b_complete", "oracle_gap",
                          "cross_missing_multi", "cross_complete_uni")
            ]
            lines.append(f"| {flavor} | " + " | ".join(cells) + " |")
        lines.append("")

    v_lines = []
    for sd in _seed_dirs(run_dir):
        metrics_path = Path(sd) / "metrics.json"
        if not metrics_path.exists():
            continue
        metrics = json.loads(metrics_path.read_text())
        vm = metrics.get("v_mean", {})
        row = (f"seed {metrics['seed']}: mean V missing {fmt9(vm.get('missing'))}, "
               f"complete {fmt9(vm.get('complete'))}, "
               f"posterior KL {fmt9(metrics.get('posterior_prior_kl'))}")
        regions = metrics.get("v_gap_regions")
        if regions:
            row += (f", gap left {fmt9(regions['left'])} / right {fmt9(regions['right'])}")
        v_lines.append(row)
    if v_lines:
        lines.append("## Predictive impact")
        lines.append("")
        lines.extend(f"- {r}" for r in v_lines)
        lines.append("")

    if figures:
        fig_dir = run_dir / "figures"
        fig_dir.mkdir(exist_ok=True)
        rendered = []
        if results is not None:
            rendered.append(_fig_accuracy(run_dir, fig_dir, results))
        rendered.append(_fig_v_gap(run_dir, fig_dir))
        rendered.append(_fig_ecdf(run_dir, fig_dir))
        rendered.append(_fig_clusters(run_dir, fig_dir))
        rendered.append(_fig_bias(run_dir, fig_dir))
        rendered = [r for r in rendered if r]
        if rendered:
            lines.append("## Figures")
            lines.append("")
            lines.extend(f"![{name}](figures/{name})" for name in rendered)
            lines.append("")

    lines.append("## Files")
    lines.append("")
    for sd in _seed_dirs(run_dir):
        names = sorted(p.name for p in Path(sd).iterdir() if p.is_file())
        lines.append(f"- `{sd.name}/`: " + ", ".join(f"`{n}`" for n in names))
    lines.append("")
    out = run_dir / "report.md"
    out.write_text("\n".join(lines))
    return out
