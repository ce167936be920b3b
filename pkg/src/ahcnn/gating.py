"""Decision layer: confidence/entropy gates, priority-class boost, and
trigger-point calibration.

An image continues to the deeper stage when the gate judges the shallow
output uncertain: confidence gate continues when beta <= Gamma (inclusive),
entropy gate continues when H >= Gamma. A priority class in the top-n
predictions boosts the trigger point by Theta so that more uncertainty is
tolerated before stopping.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

HIST_BINS = 64

GATE_CONFIDENCE = "confidence"
GATE_ENTROPY = "entropy"


@dataclass(frozen=True)
class GateConfig:
    kind: str = GATE_CONFIDENCE
    gamma: float = 0.8
    theta: float = 0.0
    top_n: int = 5
    priority_classes: frozenset[int] = frozenset()
    desired_accuracy: float | None = None
    num_branches: int = 3

    def __post_init__(self):
        if self.kind not in (GATE_CONFIDENCE, GATE_ENTROPY):
            raise ValueError(f"unknown gate kind {self.kind!r}")
        if self.kind == GATE_CONFIDENCE and not (0.0 <= self.gamma <= 1.0):
            raise ValueError("confidence trigger point must lie in [0, 1]")
        if self.theta < 0:
            raise ValueError("boost theta must be non-negative")
        if self.top_n < 1:
            raise ValueError("top_n must be positive")
        if self.num_branches < 1:
            raise ValueError("num_branches must be positive")
        if self.desired_accuracy is not None and not (0.0 < self.desired_accuracy <= 1.0):
            raise ValueError("desired accuracy must lie in (0, 1]")
        object.__setattr__(self, "priority_classes", frozenset(self.priority_classes))

    def with_gamma(self, gamma: float) -> "GateConfig":
        return replace(self, gamma=float(gamma))


@dataclass(frozen=True)
class Decision:
    action: str  # "stop" | "continue"
    beta: float  # confidence or entropy value, per gate kind
    effective_gamma: float
    boosted: bool

    @property
    def stop(self) -> bool:
        return self.action == "stop"


@dataclass(frozen=True)
class StageCalibration:
    gamma: float
    histogram: tuple[int, ...]


@dataclass(frozen=True)
class Calibration:
    c_mean: float
    c_std: float
    per_stage: tuple[StageCalibration, ...]

    def __post_init__(self):
        if not (0.0 <= self.c_mean <= 1.0):
            raise ValueError("c_mean must lie in [0, 1]")
        if self.c_std < 0:
            raise ValueError("c_std must be non-negative")


def _check_probs(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64).ravel()
    if p.size == 0:
        raise ValueError("empty probability vector")
    if abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"probabilities sum to {p.sum()}, expected 1")
    return p


def confidence(probs) -> float:
    """beta = max softmax probability."""
    return float(_check_probs(probs).max())


def entropy(probs) -> float:
    """Shannon entropy in nats, with 0*ln 0 = 0."""
    p = _check_probs(probs)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def top_n_classes(probs, n: int) -> list[int]:
    """Indices of the n largest probabilities, ties broken toward lower index."""
    p = np.asarray(probs, dtype=np.float64).ravel()
    if n > p.size:
        raise ValueError(f"top_n={n} exceeds {p.size} classes")
    return np.argsort(-p, kind="stable")[:n].tolist()


def decide(probs, cfg: GateConfig) -> Decision:
    """Gate one image's stage output: Stop here or Continue to the deeper part.

    The Theta boost widens the Continue region in both gate kinds: it raises
    the confidence trigger point and lowers the entropy threshold.
    """
    p = _check_probs(probs)
    topn = top_n_classes(p, cfg.top_n)
    boosted = bool(cfg.priority_classes.intersection(topn))
    bump = cfg.theta if boosted else 0.0
    if cfg.kind == GATE_CONFIDENCE:
        eff = min(max(cfg.gamma + bump, 0.0), 1.0)
        beta = float(p.max())
        cont = beta <= eff
    else:
        eff = max(cfg.gamma - bump, 0.0)
        beta = entropy(p)
        cont = beta >= eff
    return Decision("continue" if cont else "stop", beta, eff, boosted)


def calibrate(confidences) -> Calibration:
    """Mean/population-std and 64-bin histograms of collected confidences.

    Accepts one flat sequence (single stage) or a sequence per stage; c_mean
    and c_std pool all stages, per-stage default gammas are the stage means.
    """
    if len(confidences) == 0:
        raise ValueError("calibration needs at least one confidence value")
    if np.isscalar(confidences[0]):
        stages = [np.asarray(confidences, dtype=np.float64)]
    else:
        stages = [np.asarray(s, dtype=np.float64) for s in confidences]
    if any(s.size == 0 for s in stages):
        raise ValueError("calibration needs at least one confidence value per stage")
    allv = np.concatenate(stages)
    if allv.min() < 0 or allv.max() > 1:
        raise ValueError("confidence values must lie in [0, 1]")
    per_stage = []
    for vals in stages:
        hist, _ = np.histogram(vals, bins=HIST_BINS, range=(0.0, 1.0))
        per_stage.append(StageCalibration(float(vals.mean()), tuple(int(x) for x in hist)))
    return Calibration(float(allv.mean()), float(allv.std()), tuple(per_stage))


def default_gamma_grid(cal: Calibration) -> list[float]:
    """Sweep grid C_Mean + k*C_Std for k in {-2, -1.5, ..., +2}, clamped to [0,1]."""
    ks = np.arange(-2.0, 2.01, 0.5)
    return [float(min(max(cal.c_mean + k * cal.c_std, 0.0), 1.0)) for k in ks]


def trigger_from_accuracy(target: float, sweep) -> float:
    """Pick the cheapest trigger point meeting the desired accuracy.

    sweep: (gamma, measured accuracy, forwarded fraction) rows sorted by
    gamma ascending. Returns the smallest gamma whose accuracy reaches the
    target; if none does, the gamma with maximum accuracy (ties -> smaller).
    """
    rows = list(sweep)
    if not rows:
        raise ValueError("empty sweep")
    gammas = [r[0] for r in rows]
    if gammas != sorted(gammas):
        raise ValueError("sweep must be sorted by gamma ascending")
    for gamma, acc, _ in rows:
        if acc >= target:
            return float(gamma)
    best = max(rows, key=lambda r: (r[1], -r[0]))
    return float(best[0])


# ---------------------------------------------------------------------------
# persistence

def calibration_to_json(cal: Calibration) -> str:
    doc = {
        "c_mean": cal.c_mean,
        "c_std": cal.c_std,
        "per_stage": [
            {"gamma": s.gamma, "histogram": list(s.histogram)} for s in cal.per_stage
        ],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def calibration_from_json(text: str) -> Calibration:
    doc = json.loads(text)
    per_stage = tuple(
        StageCalibration(float(s["gamma"]), tuple(int(x) for x in s["histogram"]))
        for s in doc["per_stage"]
    )
    return Calibration(float(doc["c_mean"]), float(doc["c_std"]), per_stage)
