"""Two-denoiser reconstruction-error classification and evaluation metrics.

Each class-conditioned denoiser approximates the posterior mean of its own
class, so an input reconstructs with the smaller error under the denoiser of
the class it belongs to; under the additive-Gaussian noise model picking the
smaller reconstruction error is also the maximum-likelihood choice. Class 1
(patient) is the positive class for precision/recall purposes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .denoiser import DenoiserModel, denoise


@dataclass(frozen=True)
class ClassifierPair:
    psi0: DenoiserModel
    psi1: DenoiserModel
    tie_rule: int = 0

    def __post_init__(self):
        if self.tie_rule not in (0, 1):
            raise ValueError("tie_rule must be a class index")
        if self.psi0.chunking != self.psi1.chunking:
            raise ValueError("models must share chunking metadata")
        if self.psi0.topology.n_nodes != self.psi1.topology.n_nodes:
            raise ValueError("models must share the topology shape")


def classify(pair: ClassifierPair, y: np.ndarray) -> tuple[int, float, float]:
    """Class with the smaller reconstruction error, plus both errors for audit.

    An exact tie goes to ``tie_rule``.
    """
    y = np.asarray(y, dtype=float)
    r0 = denoise(pair.psi0, y) - y
    r1 = denoise(pair.psi1, y) - y
    err0 = float(np.sum(r0 * r0))
    err1 = float(np.sum(r1 * r1))
    if err0 == err1:
        return pair.tie_rule, err0, err1
    return (0 if err0 < err1 else 1), err0, err1


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    precision: float
    recall: float
    specificity: float
    f1: float
    g_mean: float
    undefined: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "specificity": self.specificity,
            "f1": self.f1,
            "g_mean": self.g_mean,
            "undefined": list(self.undefined),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_text(self) -> str:
        """Aligned table; positive class is class 1."""
        rows = [
            ("accuracy", self.accuracy),
            ("precision", self.precision),
            ("recall", self.recall),
            ("specificity", self.specificity),
            ("f1", self.f1),
            ("g_mean", self.g_mean),
        ]
        lines = [
            "confusion (positive = class 1)",
            f"  TP {self.tp:5d}  FP {self.fp:5d}",
            f"  FN {self.fn:5d}  TN {self.tn:5d}",
        ]
        for name, value in rows:
            flag = " (undefined, reported 0)" if name in self.undefined else ""
            lines.append(f"  {name:<12s} {value:8.4f}{flag}")
        return "\n".join(lines)


def report_from_counts(tp: int, fp: int, tn: int, fn: int) -> MetricsReport:
    """Standard confusion-matrix arithmetic; zero denominators flag as 0."""
    undefined = []

    def ratio(num, den, name):
        if den == 0:
            undefined.append(name)
            return 0.0
        return num / den

    total = tp + fp + tn + fn
    accuracy = ratio(tp + tn, total, "accuracy")
    precision = ratio(tp, tp + fp, "precision")
    recall = ratio(tp, tp + fn, "recall")
    specificity = ratio(tn, tn + fp, "specificity")
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        undefined.append("f1")
        f1 = 0.0
    g_mean = float(np.sqrt(recall * specificity))
    return MetricsReport(
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        specificity=specificity,
        f1=f1,
        g_mean=g_mean,
        undefined=tuple(undefined),
    )


def evaluate(pair: ClassifierPair, samples, labels) -> tuple[MetricsReport, list[dict]]:
    """Classify every sample and tabulate the confusion counts.

    ``samples`` are node-major signals, ``labels`` their binary classes.
    Returns the report plus a per-sample audit list with both errors.
    """
    labels = list(labels)
    if not labels:
        raise ValueError("test set must be nonempty")
    tp = fp = tn = fn = 0
    audit = []
    for k, (y, label) in enumerate(zip(samples, labels)):
        pred, err0, err1 = classify(pair, y)
        audit.append({"index": k, "label": int(label), "pred": pred, "err0": err0, "err1": err1})
        if label == 1 and pred == 1:
            tp += 1
        elif label == 1 and pred == 0:
            fn += 1
        elif label == 0 and pred == 1:
            fp += 1
        else:
            tn += 1
    return report_from_counts(tp, fp, tn, fn), audit
