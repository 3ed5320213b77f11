"""Boosted seam compatibility detector.

A small AdaBoost ensemble over weak learners that consume seam descriptors.
Each round trains a fresh learner on the weighted sample set, measures its
weighted misclassification rate E, receives vote weight
alpha = 0.5 * ln((1 - E) / E), and re-weights samples by exp(-y * alpha * g)
before renormalizing. The ensemble score gamma squashes the signed vote
margin through a logistic, so gamma >= 0.5 agrees exactly with the sign of
the weighted vote.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .stitch import FEATURE_NAMES, FEATURE_SCHEMA, NoSeamError, extract_roi_features, features_for_candidates

MODEL_FORMAT = 1
ERROR_CLAMP = 1e-6
DECISION_P = 0.5


class ImbalanceError(ValueError):
    """Training set has no positive samples; rebalancing is impossible."""


class ModelFormatError(ValueError):
    pass


def rebalance_indices(labels, seed: int, positive_factor: int = 20) -> np.ndarray:
    """Oversample positives x`positive_factor`, then downsample all to half.

    Returns indices into the original array (may repeat); deterministic for a
    given seed. Raises ImbalanceError when there is no positive sample.
    """
    y = np.asarray(labels).astype(int)
    pos = np.nonzero(y == 1)[0]
    if len(pos) == 0:
        raise ImbalanceError("no positive samples to oversample")
    expanded = np.concatenate([np.arange(len(y))] + [pos] * (positive_factor - 1))
    rng = np.random.default_rng(seed)
    take = len(expanded) // 2
    chosen = rng.choice(len(expanded), size=take, replace=False)
    return expanded[np.sort(chosen)]


def rebalance(samples: list, seed: int) -> list:
    """Rebalanced list of labeled StitchSamples (between-class balance)."""
    labels = [s.label for s in samples]
    idx = rebalance_indices(labels, seed)
    return [samples[i] for i in idx]


class DepthTwoTree:
    """Weighted binary decision tree of depth <= 2 over feature vectors.

    Splits minimize the weighted cross-entropy of leaf predictions (weighted
    entropy impurity); leaves predict the weighted positive rate in [0, 1].
    """

    def __init__(self, max_depth: int = 2, min_leaf_weight: float = 1e-4):
        self.max_depth = max_depth
        self.min_leaf_weight = min_leaf_weight
        self.root: dict | None = None

    @staticmethod
    def _entropy(p: np.ndarray) -> np.ndarray:
        p = np.clip(p, 1e-12, 1 - 1e-12)
        return -(p * np.log(p) + (1 - p) * np.log(1 - p))

    def _best_split(self, x: np.ndarray, y: np.ndarray, w: np.ndarray):
        total_w = w.sum()
        total_pos = (w * y).sum()
        parent = total_w * self._entropy(np.array(total_pos / total_w))
        best = None
        for f in range(x.shape[1]):
            order = np.argsort(x[:, f], kind="stable")
            xv = x[order, f]
            cw = np.cumsum(w[order])[:-1]
            cp = np.cumsum(w[order] * y[order])[:-1]
            valid = xv[1:] != xv[:-1]
            if not valid.any():
                continue
            wl, wr = cw, total_w - cw
            ok = valid & (wl >= self.min_leaf_weight) & (wr >= self.min_leaf_weight)
            if not ok.any():
                continue
            pl = cp / np.maximum(wl, 1e-300)
            pr = (total_pos - cp) / np.maximum(wr, 1e-300)
            loss = wl * self._entropy(pl) + wr * self._entropy(pr)
            loss = np.where(ok, loss, np.inf)
            k = int(np.argmin(loss))
            if loss[k] < parent - 1e-12 and (best is None or loss[k] < best[0] - 1e-12):
                thr = 0.5 * (xv[k] + xv[k + 1])
                best = (float(loss[k]), f, thr)
        return best

    def _build(self, x: np.ndarray, y: np.ndarray, w: np.ndarray,
               depth: int) -> dict:
        total_w = w.sum()
        value = float(np.clip((w * y).sum() / total_w, 1e-6, 1 - 1e-6))
        if depth >= self.max_depth or len(np.unique(y)) < 2:
            return {"value": value}
        split = self._best_split(x, y, w)
        if split is None:
            return {"value": value}
        _, f, thr = split
        left = x[:, f] <= thr
        return {
            "feature": int(f),
            "threshold": float(thr),
            "left": self._build(x[left], y[left], w[left], depth + 1),
            "right": self._build(x[~left], y[~left], w[~left], depth + 1),
        }

    def fit(self, x: np.ndarray, y: np.ndarray, w: np.ndarray) -> "DepthTwoTree":
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        w = np.asarray(w, dtype=float)
        self.root = self._build(x, y, w, 0)
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty(len(x))
        for idx, row in enumerate(x):
            node = self.root
            while "value" not in node:
                node = node["left"] if row[node["feature"]] <= node["threshold"] else node["right"]
            out[idx] = node["value"]
        return out

    def to_json_dict(self) -> dict:
        return self.root

    @classmethod
    def from_json_dict(cls, d: dict) -> "DepthTwoTree":
        tree = cls()
        tree.root = d
        return tree


def default_learner_factory() -> DepthTwoTree:
    return DepthTwoTree(max_depth=2)


@dataclass
class BoostEnsemble:
    alphas: list
    learners: list
    p: float = DECISION_P
    feature_names: list = field(default_factory=lambda: list(FEATURE_NAMES))
    rounds: list = field(default_factory=list)  # per-round {"error", "alpha"}

    def margins(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        m = np.zeros(len(x))
        for alpha, learner in zip(self.alphas, self.learners):
            g = np.where(learner.predict(x) >= self.p, 1.0, -1.0)
            m += alpha * g
        return m

    def gamma(self, x: np.ndarray) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.margins(x)))

    def classify(self, x: np.ndarray) -> np.ndarray:
        return self.gamma(x) >= 0.5

    def gamma_levels(self) -> np.ndarray:
        """All achievable gamma values (for threshold sweeps)."""
        margins = np.array([0.0])
        for a in self.alphas:
            margins = np.concatenate([margins - a, margins + a])
        return np.unique(1.0 / (1.0 + np.exp(-margins)))


def update_weights(w: np.ndarray, ysign: np.ndarray, alpha: float,
                   g: np.ndarray) -> np.ndarray:
    """One boosting re-weight: misclassified samples gain e^alpha, correct
    ones lose e^-alpha, and the result is renormalized to a distribution."""
    w = w * np.exp(-ysign * alpha * g)
    return w / w.sum()


def boost_train_features(x: np.ndarray, labels: np.ndarray,
                         n_learners: int = 5,
                         learner_factory=default_learner_factory) -> BoostEnsemble:
    """AdaBoost over feature rows; labels in {0, 1}."""
    x = np.asarray(x, dtype=float)
    y01 = np.asarray(labels).astype(int)
    if x.ndim != 2 or len(x) != len(y01) or len(x) == 0:
        raise ValueError("need a non-empty (n, d) feature matrix with labels")
    ysign = 2.0 * y01 - 1.0
    n = len(x)
    w = np.full(n, 1.0 / n)
    ensemble = BoostEnsemble([], [], feature_names=list(FEATURE_NAMES))
    for _ in range(n_learners):
        learner = learner_factory()
        learner.fit(x, y01, w)
        g = np.where(learner.predict(x) >= DECISION_P, 1.0, -1.0)
        err = float(w[g != ysign].sum() / w.sum())
        if err >= 0.5:
            warnings.warn(
                f"weak learner error {err:.3f} >= 0.5; its vote weight will "
                f"not be positive", RuntimeWarning)
        clamped = min(max(err, ERROR_CLAMP), 1 - ERROR_CLAMP)
        alpha = 0.5 * math.log((1 - clamped) / clamped)
        ensemble.alphas.append(alpha)
        ensemble.learners.append(learner)
        ensemble.rounds.append({"error": err, "alpha": alpha})
        w = update_weights(w, ysign, alpha, g)
    return ensemble


def boost_train(samples: list, n_learners: int = 5,
                learner_factory=default_learner_factory) -> BoostEnsemble:
    """AdaBoost over labeled StitchSamples (features extracted once)."""
    x = np.array([extract_roi_features(s) for s in samples])
    y = np.array([s.label for s in samples])
    return boost_train_features(x, y, n_learners, learner_factory)


def ensemble_predict(ensemble: BoostEnsemble, sample) -> float:
    """Compatibility gamma in [0, 1] for one StitchSample."""
    x = extract_roi_features(sample)[None, :]
    return float(ensemble.gamma(x)[0])


def save_model(ensemble: BoostEnsemble, path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "format": MODEL_FORMAT,
        "feature_schema": FEATURE_SCHEMA,
        "p": ensemble.p,
        "alphas": [float(a) for a in ensemble.alphas],
        "rounds": ensemble.rounds,
        "feature_names": ensemble.feature_names,
        "learners": [lr.to_json_dict() for lr in ensemble.learners],
    }
    p.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n",
                 encoding="utf-8")
    return p


def load_model(path) -> BoostEnsemble:
    p = Path(path)
    if not p.is_file():
        raise ModelFormatError(f"missing model file: {p}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"unparseable model {p}: {e}") from e
    if doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"{p}: unsupported model format "
                               f"{doc.get('format')!r}")
    if doc.get("feature_schema") != FEATURE_SCHEMA:
        raise ModelFormatError(f"{p}: feature schema {doc.get('feature_schema')!r} "
                               f"does not match {FEATURE_SCHEMA}")
    learners = [DepthTwoTree.from_json_dict(d) for d in doc["learners"]]
    return BoostEnsemble(list(doc["alphas"]), learners, doc.get("p", DECISION_P),
                         list(doc.get("feature_names", FEATURE_NAMES)),
                         list(doc.get("rounds", [])))


def score_candidates_with_model(bundle, cands, ensemble: BoostEnsemble) -> list:
    """Copy of `cands` with gamma filled from the ensemble."""
    out = []
    for c in cands:
        try:
            x = features_for_candidates(bundle, [c])
            gamma = float(ensemble.gamma(x)[0])
        except NoSeamError:
            gamma = 0.0
        out.append(type(c)(c.i, c.j, c.k, c.transform, c.raw_score, gamma, c.roi))
    return out


def filter_candidates(bundle, cands, ensemble: BoostEnsemble,
                      threshold: float = 0.5) -> list:
    """Score with the ensemble, then keep candidates with gamma >= threshold."""
    scored = score_candidates_with_model(bundle, cands, ensemble)
    return [c for c in scored if c.gamma >= threshold]
