"""Figure rendering for report-producing commands.

Every helper writes one PNG next to the delimited report it illustrates and
returns the path it wrote.  Rendering is headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .analysis import RatioTable
from .annoservice import AgreementReport, TimingReport, TransitionCounts
from .evalharness import PassAtKReport


def _finish(fig: "plt.Figure", path: str | Path) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def save_passk_figure(report: PassAtKReport, path: str | Path) -> str:
    """Average pass@k per k as a bar chart."""
    ks = sorted(report.cumulative)
    values = [
        report.cumulative[k] / report.instance_count if report.instance_count else 0.0 for k in ks
    ]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar([f"k={k}" for k in ks], values, color="#3b6ea5")
    ax.set_ylim(0, 1)
    ax.set_ylabel("average pass@k")
    ax.set_title(f"pass@k over {report.instance_count} instances")
    for i, v in enumerate(values):
        ax.text(i, v + 0.02, f"{v:.3f}", ha="center", fontsize=9)
    return _finish(fig, path)


def save_score_histogram_figure(report: PassAtKReport, path: str | Path) -> str:
    """Judge score distribution as a bar chart."""
    scores = list(range(-2, 3))
    counts = [report.score_histogram.get(s, 0) for s in scores]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar([str(s) for s in scores], counts, color="#6a9a58")
    ax.set_xlabel("judge score")
    ax.set_ylabel("verdicts")
    ax.set_title("judge score histogram")
    return _finish(fig, path)


def save_agreement_figure(report: AgreementReport, path: str | Path) -> str:
    """Per-annotator agreement next to the judge's agreement, grouped bars."""
    annotators = list(report.per_annotator)
    own = [report.per_annotator[a] for a in annotators]
    llm = [report.llm_per_annotator[a] for a in annotators]
    x = range(len(annotators))
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.bar([i - 0.2 for i in x], own, width=0.4, label="annotator", color="#3b6ea5")
    ax.bar([i + 0.2 for i in x], llm, width=0.4, label="judge", color="#c07a3e")
    ax.axhline(report.participant_average, linestyle="--", linewidth=1, color="#3b6ea5")
    ax.set_xticks(list(x))
    ax.set_xticklabels(annotators, rotation=30, ha="right")
    ax.set_ylabel("agreement %")
    ax.set_ylim(0, 100)
    ax.legend()
    ax.set_title("leave-one-out agreement")
    return _finish(fig, path)


def save_transitions_figure(counts: TransitionCounts, path: str | Path) -> str:
    """The four transition buckets as a bar chart."""
    labels = ["agree", "accept to reject", "reject to accept", "disapprove"]
    values = [counts.agree, counts.accept_to_reject, counts.reject_to_accept, counts.disapprove]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(labels, values, color="#7a5aa0")
    ax.set_ylabel("pairs")
    ax.set_title(f"round-2 transitions over {counts.total} pairs")
    for i, v in enumerate(values):
        ax.text(i, v + max(values) * 0.01 + 0.2, str(v), ha="center", fontsize=9)
    return _finish(fig, path)


def save_timing_figure(report: TimingReport, path: str | Path) -> str:
    """Total annotation minutes per annotator."""
    annotators = list(report.per_annotator_seconds)
    minutes = [report.per_annotator_seconds[a] / 60.0 for a in annotators]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.bar(annotators, minutes, color="#3b6ea5")
    ax.axhline(report.average_seconds / 60.0, linestyle="--", linewidth=1, color="#c03030")
    ax.set_ylabel("minutes")
    ax.set_title(f"annotation time (mean {report.average_label})")
    ax.tick_params(axis="x", rotation=30)
    return _finish(fig, path)


def save_ratio_figure(table: RatioTable, path: str | Path, top: int = 20) -> str:
    """Largest probability ratios (and newly emphasized tokens) as horizontal bars."""
    rows = list(table.rows[:top])
    labels = [f"token {r.token}" + (" (new)" if r.new_emphasis else "") for r in rows]
    values = [
        (r.specialized_probability / table.floor if r.new_emphasis else r.ratio or 0.0) for r in rows
    ]
    fig, ax = plt.subplots(figsize=(6, max(3.0, 0.3 * len(rows) + 1)))
    colors = ["#c07a3e" if r.new_emphasis else "#3b6ea5" for r in rows]
    ax.barh(labels[::-1], values[::-1], color=colors[::-1])
    ax.set_xlabel("probability ratio (new tokens shown against the floor)")
    ax.set_title("token emphasis shift")
    return _finish(fig, path)
