"""Metrics: accuracy, output entropy, loss-based membership inference, Wilcoxon, timing."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy.stats import rankdata
from sklearn.linear_model import LogisticRegression

from jitlab.data import LabeledDataset
from jitlab.errors import ConfigError
from jitlab.models import Model, predict_class_probs, predict_labels

SIGNIFICANCE = 0.10
EXACT_MAX_N = 25


def accuracy(model: Model, data: LabeledDataset) -> float:
    """Fraction of argmax-correct predictions (ties resolve to the lowest class)."""
    if len(data) == 0:
        raise ConfigError("accuracy of an empty dataset is undefined")
    return float(np.mean(predict_labels(model, data.inputs) == data.labels))


def entropy_of(probs: np.ndarray) -> np.ndarray:
    """Natural-log Shannon entropy per row, 0 ln 0 := 0."""
    p = np.atleast_2d(probs)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    h = -terms.sum(axis=1)
    return np.clip(h, 0.0, math.log(p.shape[1]))


def output_entropy(model: Model, data: LabeledDataset, batch_size: int = 512) -> np.ndarray:
    if model.spec.n_classes < 2:
        raise ConfigError("entropy needs at least two classes")
    chunks = [entropy_of(predict_class_probs(model, data.inputs[i:i + batch_size]))
              for i in range(0, len(data), batch_size)]
    return np.concatenate(chunks) if chunks else np.zeros(0)


def per_sample_loss(model: Model, data: LabeledDataset, batch_size: int = 512) -> np.ndarray:
    """Cross-entropy of each sample under ``model`` (probabilities clamped at 1e-12)."""
    out = []
    for i in range(0, len(data), batch_size):
        p = predict_class_probs(model, data.inputs[i:i + batch_size])
        picked = p[np.arange(len(p)), data.labels[i:i + batch_size]]
        out.append(-np.log(np.maximum(picked, 1e-12)))
    return np.concatenate(out) if out else np.zeros(0)


# -- membership inference -----------------------------------------------------
@dataclass
class AttackModel:
    """Logistic regression from per-sample loss to P(member)."""

    clf: LogisticRegression | None
    degenerate: bool = False
    fallback: int = 0

    def predict(self, losses) -> np.ndarray:
        losses = np.asarray(losses, dtype=np.float64).reshape(-1, 1)
        if self.clf is None:
            return np.full(len(losses), self.fallback, dtype=np.int64)
        return (self.clf.predict_proba(losses)[:, 1] >= 0.5).astype(np.int64)


def _balanced_draw(values: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    # sorting first makes the draw independent of pool order
    ordered = np.sort(values, kind="stable")
    if len(ordered) == n:
        return ordered
    return ordered[np.sort(rng.choice(len(ordered), size=n, replace=False))]


def fit_attack(member_losses, nonmember_losses, seed: int = 0) -> AttackModel:
    """Train the attack on equally many member and non-member losses."""
    members = np.asarray(member_losses, dtype=np.float64)
    nonmembers = np.asarray(nonmember_losses, dtype=np.float64)
    if len(members) == 0 or len(nonmembers) == 0:
        raise ConfigError("attack pools must be nonempty")
    rng = np.random.default_rng(seed)
    n = min(len(members), len(nonmembers))
    m = _balanced_draw(members, n, rng)
    nm = _balanced_draw(nonmembers, n, rng)
    x = np.concatenate([m, nm]).reshape(-1, 1)
    y = np.concatenate([np.ones(n, dtype=np.int64), np.zeros(n, dtype=np.int64)])
    if np.ptp(x) == 0:
        return AttackModel(None, True, int(len(members) > len(nonmembers)))
    clf = LogisticRegression(class_weight="balanced", solver="lbfgs")
    clf.fit(x, y)
    return AttackModel(clf)


@dataclass
class MiaResult:
    score: float
    degenerate: bool = False

    def __float__(self) -> float:
        return self.score


def mia_score(model: Model, forget: LabeledDataset, member_pool: LabeledDataset,
              nonmember_pool: LabeledDataset, attack_seed: int = 0) -> MiaResult:
    """Percentage of forget samples the loss attack labels as training members."""
    if len(member_pool) == 0 or len(nonmember_pool) == 0:
        raise ConfigError("attack pools must be nonempty")
    attack = fit_attack(per_sample_loss(model, member_pool), per_sample_loss(model, nonmember_pool), attack_seed)
    if len(forget) == 0:
        return MiaResult(0.0, attack.degenerate)
    flagged = attack.predict(per_sample_loss(model, forget))
    return MiaResult(100.0 * float(flagged.mean()), attack.degenerate)


# -- Wilcoxon signed-rank -----------------------------------------------------
@dataclass
class WilcoxonResult:
    statistic: float
    p_two_sided: float
    n: int
    degenerate: bool = False
    method: str = "exact"

    def significant(self, alpha: float = SIGNIFICANCE) -> bool:
        return self.p_two_sided < alpha


def _exact_counts(doubled_ranks: np.ndarray) -> np.ndarray:
    """Number of sign assignments giving each doubled positive-rank sum."""
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:total + 1 - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(a, b) -> WilcoxonResult:
    """Two-sided paired signed-rank test of a - b.

    Zero differences are dropped and tied magnitudes share their average
    rank. Up to 25 nonzero pairs the p-value is exact over all 2^n sign
    assignments (the fraction whose positive-rank sum is at least as far from
    its null centre as the observed one); beyond that a tie-corrected normal
    approximation with continuity correction is used.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ConfigError("wilcoxon needs two equal-length 1-D samples")
    if len(a) < 5:
        raise ConfigError("wilcoxon needs at least 5 pairs")
    d = a - b
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0, degenerate=True)
    ranks = rankdata(np.abs(d), method="average")
    w_plus = float(ranks[d > 0].sum())
    total = n * (n + 1) / 2.0
    stat = min(w_plus, total - w_plus)
    if n <= EXACT_MAX_N:
        doubled = np.rint(2 * ranks).astype(np.int64)
        counts = _exact_counts(doubled)
        t2 = int(doubled.sum())
        obs = abs(2 * int(doubled[d > 0].sum()) - t2)
        k = np.arange(len(counts))
        extreme = int(counts[np.abs(2 * k - t2) >= obs].sum())
        return WilcoxonResult(stat, extreme / float(2 ** n), n, method="exact")
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float((tie_counts ** 3 - tie_counts).sum()) / 48.0
    z = max(abs(w_plus - total / 2.0) - 0.5, 0.0) / math.sqrt(var)
    p = math.erfc(z / math.sqrt(2.0))
    return WilcoxonResult(stat, min(1.0, p), n, method="normal")


# -- runtime and reports ------------------------------------------------------
def time_method(fn: Callable[[], Any]) -> tuple[float, Any]:
    """Wall-clock seconds spent inside ``fn()`` and its return value."""
    start = time.perf_counter()
    result = fn()
    return time.perf_counter() - start, result


@dataclass
class EvalReport:
    method: str
    seed: int
    retain_test_accuracy: float
    forget_accuracy: float
    mia_score: float
    runtime_seconds: float
    entropy_mean: float = 0.0
    entropy_median: float = 0.0
    entropies: list[float] = field(default_factory=list)
    mia_degenerate: bool = False

    def check(self, n_classes: int) -> None:
        for name in ("retain_test_accuracy", "forget_accuracy"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} outside [0, 1]")
        if not 0.0 <= self.mia_score <= 100.0:
            raise ConfigError("mia_score outside [0, 100]")
        if self.entropies and (min(self.entropies) < 0 or max(self.entropies) > math.log(n_classes) + 1e-12):
            raise ConfigError("entropy outside [0, ln c]")


def evaluate(model: Model, method: str, seed: int, retain_test: LabeledDataset, forget: LabeledDataset,
             member_pool: LabeledDataset, nonmember_pool: LabeledDataset, runtime: float,
             attack_seed: int = 0) -> EvalReport:
    mia = mia_score(model, forget, member_pool, nonmember_pool, attack_seed)
    ent = output_entropy(model, forget)
    report = EvalReport(
        method=method,
        seed=seed,
        retain_test_accuracy=accuracy(model, retain_test),
        forget_accuracy=accuracy(model, forget),
        mia_score=mia.score,
        runtime_seconds=runtime,
        entropy_mean=float(ent.mean()),
        entropy_median=float(np.median(ent)),
        entropies=ent.tolist(),
        mia_degenerate=mia.degenerate,
    )
    report.check(model.spec.n_classes)
    return report
