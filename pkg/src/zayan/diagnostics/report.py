"""Structured diagnostics report and the section runner behind ``diagnose``.

A report maps section names to ``{"operation", "params", "result"}`` records.
``report.json`` holds only reproducible content; wall-clock figures go to
``timing.json`` so that re-running with the same seed gives identical bytes.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import embedding_geometry, gram_diagnostics
from .metrics import (
    confusion_summary,
    coverage_margin_curve,
    expected_calibration_error,
    margin_topk,
    selective_prediction_curve,
    triage_metrics,
)
from .probes import (
    local_sensitivity,
    ood_confidence_report,
    permutation_importance,
    robustness_sweep,
    sanity_modes,
    tta_consistency,
)

REPORT_VERSION = 1

SECTIONS = (
    "accuracy", "ece", "selective", "coverage_margin", "topk", "triage", "confusion",
    "robustness", "sanity", "ood", "sensitivity", "importance", "gram", "geometry", "tta", "latency",
)

DEFAULT_THRESHOLDS = tuple(np.round(np.linspace(0.0, 1.0, 21), 10))


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return None if math.isnan(f) or math.isinf(f) else f
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


@dataclass
class DiagnosticsReport:
    metadata: dict = field(default_factory=dict)
    sections: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def add(self, name: str, operation: str, params: dict, result) -> None:
        self.sections[name] = {"operation": operation, "params": to_jsonable(params), "result": to_jsonable(result)}

    def add_curve(self, name: str, header: list[str], rows) -> None:
        self.curves[name] = (list(header), [list(r) for r in rows])

    def to_dict(self) -> dict:
        return {"version": REPORT_VERSION, "metadata": to_jsonable(self.metadata), "sections": self.sections}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, directory) -> list[Path]:
        """``report.json``, one CSV per curve, and ``timing.json``; returns the deterministic files."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "report.json"]
        paths[0].write_text(self.to_json())
        for name, (header, rows) in sorted(self.curves.items()):
            p = out / f"curve_{name}.csv"
            with p.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                w.writerows([["" if v is None else repr(float(v)) if isinstance(v, (float, np.floating)) else v
                              for v in r] for r in rows])
            paths.append(p)
        (out / "timing.json").write_text(json.dumps(to_jsonable(self.timing), indent=2, sort_keys=True) + "\n")
        return paths

    @classmethod
    def from_json(cls, text: str) -> "DiagnosticsReport":
        raw = json.loads(text)
        if raw.get("version") != REPORT_VERSION:
            raise ValueError(f"unsupported report version {raw.get('version')!r}")
        return cls(raw.get("metadata", {}), raw.get("sections", {}))


def _topk_values(n_classes: int, ks):
    return tuple(k for k in ks if k <= n_classes)


def run_diagnostics(
    model, X, labels, selected=SECTIONS, seed: int = 0, *, probs=None, train_means=None,
    ks=(1, 2, 3, 5), n_bins: int = 10, thresholds=DEFAULT_THRESHOLDS, positive_class: int = 0,
    fractions=(0.0, 0.1, 0.25, 0.5, 0.75, 1.0), eps: float = 0.1, n_directions: int = 8,
    votes: int = 5, augment=None, feature_names=None, report: DiagnosticsReport | None = None,
) -> DiagnosticsReport:
    """Run the selected sections against ``model`` on standardized rows ``X``.

    One prediction pass is shared by every probability-based section; pass
    ``probs`` to reuse predictions that were already computed.
    """
    unknown = set(selected) - set(SECTIONS)
    if unknown:
        raise ValueError(f"unknown diagnostics sections: {sorted(unknown)}")
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    rep = report or DiagnosticsReport()
    p = model.predict_proba(X) if probs is None else np.asarray(probs)
    c = p.shape[1]
    pred = p.argmax(axis=1)
    want = set(selected)
    # drop-mode robustness and the mean sanity mode share one fill vector
    means = np.zeros(X.shape[1]) if train_means is None else np.asarray(train_means, dtype=np.float64)

    if "accuracy" in want:
        rep.add("accuracy", "accuracy", {"n": len(labels)}, {"accuracy": float((pred == labels).mean())})
    if "ece" in want:
        bins = expected_calibration_error(p, labels, n_bins)
        rep.add("ece", "expected_calibration_error", {"n_bins": n_bins}, bins.to_dict())
        rep.add_curve("reliability", ["bin_low", "bin_high", "count", "mean_confidence", "accuracy"],
                      [(bins.edges[b], bins.edges[b + 1], int(bins.counts[b]),
                        None if bins.counts[b] == 0 else bins.mean_confidence[b],
                        None if bins.counts[b] == 0 else bins.accuracy[b]) for b in range(n_bins)])
    if "selective" in want:
        curve = selective_prediction_curve(p, labels, thresholds)
        rep.add("selective", "selective_prediction_curve", {"thresholds": list(thresholds)},
                [{"threshold": t, "coverage": cov, "accuracy": a} for t, cov, a in curve])
        rep.add_curve("selective", ["threshold", "coverage", "accuracy"], curve)
    if "coverage_margin" in want:
        curve = coverage_margin_curve(p, labels, thresholds)
        rep.add("coverage_margin", "coverage_margin_curve", {"thresholds": list(thresholds)},
                [{"threshold": t, "coverage": cov, "error": e} for t, cov, e in curve])
        rep.add_curve("coverage_margin", ["threshold", "coverage", "error"], curve)
    if "topk" in want:
        kk = _topk_values(c, ks)
        rep.add("topk", "margin_topk", {"ks": list(kk)}, margin_topk(p, labels, kk).to_dict())
    if "triage" in want:
        params = {"positive_class": positive_class}
        try:
            tri = triage_metrics(p, labels, positive_class)
            rep.add("triage", "triage_metrics", params, tri.to_dict())
            rep.add_curve("roc", ["threshold", "fpr", "tpr"], zip(tri.thresholds, tri.fpr, tri.tpr))
        except ValueError as exc:
            rep.add("triage", "triage_metrics", params, {"error": str(exc)})
    if "confusion" in want:
        rep.add("confusion", "confusion_summary", {"n_classes": c}, confusion_summary(labels, pred, c).to_dict())
    if "robustness" in want:
        res = {}
        for mode in ("shuffle", "drop"):
            pts = robustness_sweep(model, X, labels, fractions, mode, seed, means)
            res[mode] = [pt.__dict__ for pt in pts]
            rep.add_curve(f"robustness_{mode}", ["fraction", "n_perturbed", "accuracy", "knn_agree"],
                          [(pt.fraction, pt.n_perturbed, pt.accuracy, pt.knn_agree) for pt in pts])
        rep.add("robustness", "robustness_sweep", {"fractions": list(fractions), "seed": seed, "knn_k": 5}, res)
    if "sanity" in want:
        rep.add("sanity", "sanity_modes", {"seed": seed}, sanity_modes(model, X, labels, seed, means))
    if "ood" in want:
        rep.add("ood", "ood_confidence_report", {"seed": seed}, ood_confidence_report(model, X, seed))
    if "sensitivity" in want:
        rep.add("sensitivity", "local_sensitivity", {"eps": eps, "n_directions": n_directions, "seed": seed},
                local_sensitivity(model, X, eps, n_directions, seed).to_dict())
    if "importance" in want:
        names = list(feature_names) if feature_names is not None else list(getattr(model, "feature_names", []) or [])
        rep.add("importance", "permutation_importance", {"seed": seed},
                permutation_importance(model, X, labels, seed).to_dict(names or None))
    if "gram" in want:
        Z = getattr(model, "Z", None)
        rep.add("gram", "gram_diagnostics", {}, gram_diagnostics(Z).to_dict() if Z is not None else {"error": "no Z"})
    if "geometry" in want:
        geo = embedding_geometry(model.embed(X), labels)
        rep.add("geometry", "embedding_geometry", {"ks": list(geo.loo_knn)}, geo.to_dict())
    if "tta" in want:
        params = {"votes": votes, "seed": seed}
        if augment is not None:
            params["augment"] = dict(augment.__dict__)
        rep.add("tta", "tta_consistency", params, tta_consistency(model, X, labels, augment, votes, seed).to_dict())
    if "latency" in want:
        stats = model.latency_stats() if hasattr(model, "latency_stats") else {}
        rep.add("latency", "latency_stats", {}, {"recorded_in": "timing.json"})
        rep.timing["latency"] = stats
    return rep


def reference_behaviour(report: DiagnosticsReport, emb_dim: int | None = None) -> list[dict]:
    """Informational comparisons against published reference values; never gating."""
    s = report.sections
    out = []
    if "ece" in s:
        out.append({"name": "ece", "observed": s["ece"]["result"]["ece"], "reference": 0.151, "status": "info"})
    if "geometry" in s and emb_dim:
        pr = s["geometry"]["result"]["participation_ratio"]
        out.append({"name": "participation_ratio_vs_dim", "observed": pr, "dim": emb_dim,
                    "status": "pass" if pr < 0.5 * emb_dim else "info"})
    if "robustness" in s and "sanity" in s:
        drop = s["robustness"]["result"]["drop"]
        full = [pt for pt in drop if pt["fraction"] == 1.0]
        if full:
            const = s["sanity"]["result"]["mean"]
            out.append({"name": "drop_all_matches_constant_predictor", "observed": full[0]["accuracy"],
                        "constant_predictor": const,
                        "status": "pass" if abs(full[0]["accuracy"] - const) < 1e-12 else "info"})
    report.add("reference_behaviour", "reference_behaviour", {"emb_dim": emb_dim}, out)
    return out
