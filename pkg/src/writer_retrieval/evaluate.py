"""Leave-one-image-out retrieval evaluation: per-query average precision,
mAP, Top-1 accuracy, precision-recall curve, and per-subset breakdowns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .corpus import CorpusManifest, subset_select
from .retrieval import DistanceMatrix, rank_for_query

PR_RECALL_LEVELS = np.linspace(0.0, 1.0, 101)


class UndefinedAPError(ValueError):
    """AP is undefined for a query with no relevant documents (R = 0)."""


def average_precision(rel, R: int | None = None) -> float:
    """Average precision of one ranked relevance list.

    AP = (1/R) * sum over ranks r of precision(r) * rel(r), where
    precision(r) counts relevant documents among the first r.
    """
    rel = np.asarray(rel, dtype=bool)
    if R is None:
        R = int(rel.sum())
    if R < 1:
        raise UndefinedAPError("no relevant documents for this query")
    hits = 0
    total = 0.0
    for rank, is_rel in enumerate(rel, start=1):
        if is_rel:
            hits += 1
            total += hits / rank
    return total / R


@dataclass
class QueryResult:
    query_id: str
    relevant_count: int
    ap: float | None  # None when R = 0 (excluded from mAP)
    p_at_1: int


@dataclass
class EvalReport:
    map: float | None
    top1_accuracy: float | None
    included: int
    excluded: int
    query_results: list = field(default_factory=list)
    pr_recall: np.ndarray | None = None
    pr_precision: np.ndarray | None = None
    pr_auc: float | None = None
    subsets: dict = field(default_factory=dict)

    @property
    def total_queries(self) -> int:
        return self.included + self.excluded

    def to_dict(self) -> dict:
        d = {
            "map": self.map,
            "top1_accuracy": self.top1_accuracy,
            "queries_included": self.included,
            "queries_excluded": self.excluded,
            "pr_auc": self.pr_auc,
            "per_query": [
                {
                    "query_id": r.query_id,
                    "relevant_count": r.relevant_count,
                    "ap": r.ap,
                    "p_at_1": r.p_at_1,
                }
                for r in self.query_results
            ],
        }
        if self.pr_recall is not None:
            d["pr_curve"] = {
                "recall": [float(x) for x in self.pr_recall],
                "precision": [float(x) for x in self.pr_precision],
            }
        if self.subsets:
            d["subsets"] = {name: rep.to_dict() for name, rep in self.subsets.items()}
        return d

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), indent=2, **kwargs)


def precision_recall_curve(rel_lists):
    """Macro-averaged interpolated PR curve over per-query relevance lists.

    At each recall level the interpolated precision is the best precision
    achievable at that recall or beyond, averaged across queries. Returns
    (recall_levels, precision, trapezoidal_area).
    """
    rel_lists = [np.asarray(r, dtype=bool) for r in rel_lists if np.asarray(r).sum() > 0]
    if not rel_lists:
        raise UndefinedAPError("no queries with relevant documents")
    curves = np.zeros((len(rel_lists), PR_RECALL_LEVELS.size))
    for qi, rel in enumerate(rel_lists):
        ranks = np.arange(1, rel.size + 1)
        cum = np.cumsum(rel)
        precision = cum / ranks
        recall = cum / cum[-1]
        for li, level in enumerate(PR_RECALL_LEVELS):
            reachable = precision[recall >= level]
            curves[qi, li] = reachable.max() if reachable.size else 0.0
    macro = curves.mean(axis=0)
    area = float(np.trapezoid(macro, PR_RECALL_LEVELS))
    return PR_RECALL_LEVELS.copy(), macro, area


def evaluate_matrix(mtx: DistanceMatrix, manifest: CorpusManifest) -> EvalReport:
    """Leave-one-image-out evaluation of a distance matrix against ground truth.

    Every image serves once as query; queries whose writer has no other page
    (R = 0) are excluded from mAP and Top-1 but counted in the report.
    """
    if len(manifest) == 0:
        raise ValueError("empty manifest")
    if mtx.image_ids != manifest.image_ids:
        raise ValueError("distance matrix ids do not match the manifest")

    writers = np.asarray(manifest.writer_ids)
    results = []
    rel_lists = []
    aps = []
    p1s = []
    for q in range(mtx.n):
        order = rank_for_query(mtx, q)
        rel = writers[order] == writers[q]
        R = int(rel.sum())
        p_at_1 = int(rel[0]) if rel.size else 0
        if R >= 1:
            ap = average_precision(rel, R)
            aps.append(ap)
            p1s.append(p_at_1)
            rel_lists.append(rel)
        else:
            ap = None
        results.append(QueryResult(mtx.image_ids[q], R, ap, p_at_1))

    report = EvalReport(
        map=float(np.mean(aps)) if aps else None,
        top1_accuracy=float(np.mean(p1s)) if p1s else None,
        included=len(aps),
        excluded=mtx.n - len(aps),
        query_results=results,
    )
    if rel_lists:
        report.pr_recall, report.pr_precision, report.pr_auc = precision_recall_curve(rel_lists)
    return report


def evaluate_subsets(mtx: DistanceMatrix, manifest: CorpusManifest, subset_defs: dict) -> dict:
    """Evaluate named tag-set subsets, restricting both gallery and queries.

    Each subset re-ranks from the corresponding sub-matrix; writers that turn
    into singletons inside a subset simply yield excluded queries.
    """
    reports = {}
    for name, tags in subset_defs.items():
        sub = subset_select(manifest, tags)
        idx = np.asarray([manifest.index_of(e.image_id) for e in sub], dtype=np.intp)
        sub_mtx = DistanceMatrix(mtx.values[np.ix_(idx, idx)], [e.image_id for e in sub])
        reports[name] = evaluate_matrix(sub_mtx, sub)
    return reports


def format_report(report: EvalReport, title: str = "Evaluation") -> str:
    """Human-readable summary table."""

    def fmt(x):
        return "undefined" if x is None else f"{x:.4f}"

    lines = [
        title,
        "-" * len(title),
        f"mAP:              {fmt(report.map)}",
        f"Top-1 accuracy:   {fmt(report.top1_accuracy)}",
        f"PR-curve AUC:     {fmt(report.pr_auc)}",
        f"queries included: {report.included}",
        f"queries excluded: {report.excluded}",
    ]
    if report.subsets:
        lines.append("")
        lines.append(f"{'subset':<16} {'mAP':>10} {'Top-1':>10} {'incl':>6} {'excl':>6}")
        for name, rep in report.subsets.items():
            lines.append(
                f"{name:<16} {fmt(rep.map):>10} {fmt(rep.top1_accuracy):>10} "
                f"{rep.included:>6} {rep.excluded:>6}"
            )
    return "\n".join(lines)
