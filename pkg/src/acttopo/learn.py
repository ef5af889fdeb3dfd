"""Kernel classifiers over precomputed kernel/distance matrices.

A binary SVM trained by sequential minimal optimization, a one-versus-one
multiclass wrapper with majority voting, stratified cross-validation, and
k-nearest-neighbor prediction. No hyperparameter tuning anywhere; C defaults
to 1.0.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .vectors import LifetimeVector, auto_gamma, pairwise_distance

logger = logging.getLogger(__name__)

KKT_TOL = 1e-3
MAX_PASSES = 10_000
_STALL_PASSES = 5


@dataclass
class BinarySvmModel:
    alpha: np.ndarray  # dual coefficients in [0, C]
    bias: float
    y: np.ndarray  # labels in {-1, +1}
    indices: np.ndarray  # rows of the training kernel this model was fit on
    C: float
    converged: bool
    kkt_residual: float

    @property
    def support(self) -> np.ndarray:
        return self.indices[self.alpha > 1e-8]

    def decision(self, kernel_rows: np.ndarray) -> np.ndarray:
        """Decision values for rows of kernel values against the full training set."""
        k = np.atleast_2d(kernel_rows)[:, self.indices]
        return k @ (self.alpha * self.y) + self.bias


def _kkt_residual(f: np.ndarray, y: np.ndarray, alpha: np.ndarray, C: float) -> float:
    mu = y * f - 1.0
    lo = np.where(alpha < C - 1e-9, np.maximum(0.0, -mu), 0.0)
    hi = np.where(alpha > 1e-9, np.maximum(0.0, mu), 0.0)
    return float(max(lo.max(initial=0.0), hi.max(initial=0.0)))


def _optimal_bias(f0: np.ndarray, y: np.ndarray, alpha: np.ndarray, C: float) -> float:
    """KKT-optimal bias for fixed dual coefficients (f0 is the bias-free decision)."""
    pin = y - f0  # each constraint is of the form b (= / >= / <=) y_i - f0_i
    interior = (alpha > 1e-8) & (alpha < C - 1e-8)
    if interior.any():
        return float(pin[interior].mean())
    lower = ((alpha <= 1e-8) & (y > 0)) | ((alpha >= C - 1e-8) & (y < 0))
    upper = ((alpha <= 1e-8) & (y < 0)) | ((alpha >= C - 1e-8) & (y > 0))
    lo = pin[lower].max() if lower.any() else -np.inf
    hi = pin[upper].min() if upper.any() else np.inf
    if not np.isfinite(lo):
        return float(hi) if np.isfinite(hi) else 0.0
    if not np.isfinite(hi):
        return float(lo)
    return float((lo + hi) / 2.0)


def svm_train_binary(K: np.ndarray, labels, C: float = 1.0, *, tol: float = KKT_TOL,
                     max_passes: int = MAX_PASSES, seed: int = 0,
                     indices: np.ndarray | None = None) -> BinarySvmModel:
    """SMO on a precomputed kernel matrix with labels in {-1, +1}.

    Iterates until the largest KKT violation drops below ``tol`` or
    ``max_passes`` full passes elapse; the working partner of each violating
    index is drawn from a seeded generator, making training deterministic.
    On non-convergence the best iterate seen is returned with
    ``converged=False`` and a warning.
    """
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise UsageError(f"kernel matrix must be square, got {K.shape}")
    if not np.allclose(K, K.T, atol=1e-10):
        raise UsageError("kernel matrix must be symmetric")
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != (K.shape[0],):
        raise UsageError("labels must match the kernel matrix size")
    if not set(np.unique(y)) <= {-1.0, 1.0}:
        raise UsageError("labels must be -1 or +1")
    if C <= 0:
        raise UsageError("C must be positive")
    n = len(y)
    if indices is None:
        indices = np.arange(n)

    if np.unique(y).size == 1:
        # degenerate single-class problem: constant decision at that label
        return BinarySvmModel(alpha=np.zeros(n), bias=float(y[0]), y=y.copy(),
                              indices=np.asarray(indices), C=C, converged=True, kkt_residual=0.0)

    rng = np.random.default_rng(seed)
    alpha = np.zeros(n)
    b = 0.0
    errors = -y.copy()  # decision(x_i) - y_i with alpha = 0, b = 0
    best = (np.inf, alpha.copy(), b)
    converged = False
    residual = np.inf

    def try_pair(i: int, j: int) -> bool:
        nonlocal b, errors
        eta = 2.0 * K[i, j] - K[i, i] - K[j, j]
        if eta >= 0:  # identical points, or an indefinite direction: skip the pair
            return False
        if y[i] == y[j]:
            lo, hi = max(0.0, alpha[i] + alpha[j] - C), min(C, alpha[i] + alpha[j])
        else:
            lo, hi = max(0.0, alpha[j] - alpha[i]), min(C, C + alpha[j] - alpha[i])
        if lo >= hi:
            return False
        aj = float(np.clip(alpha[j] - y[j] * (errors[i] - errors[j]) / eta, lo, hi))
        dj = aj - alpha[j]
        if abs(dj) < 1e-12:
            return False
        ai = alpha[i] - y[i] * y[j] * dj
        di = ai - alpha[i]
        b1 = b - errors[i] - y[i] * di * K[i, i] - y[j] * dj * K[i, j]
        b2 = b - errors[j] - y[i] * di * K[i, j] - y[j] * dj * K[j, j]
        if 0 < ai < C:
            b_new = b1
        elif 0 < aj < C:
            b_new = b2
        else:
            b_new = (b1 + b2) / 2.0
        errors += y[i] * di * K[:, i] + y[j] * dj * K[:, j] + (b_new - b)
        alpha[i], alpha[j], b = ai, aj, b_new
        return True

    for _ in range(max_passes):
        changed = 0
        for i in range(n):
            ri = errors[i] * y[i]
            if not ((ri < -tol and alpha[i] < C) or (ri > tol and alpha[i] > 0)):
                continue
            for j in rng.permutation(n):  # first productive partner wins
                if j != i and try_pair(i, int(j)):
                    changed += 1
                    break
        # judge the iterate with the KKT-optimal bias for its alphas
        f0 = K @ (alpha * y)
        b_opt = _optimal_bias(f0, y, alpha, C)
        residual = _kkt_residual(f0 + b_opt, y, alpha, C)
        if residual < best[0]:
            best = (residual, alpha.copy(), b_opt)
        if residual < tol:
            converged = True
            break
        if changed == 0:
            break  # no pair makes progress; the best iterate is as good as it gets
    residual, alpha, b = best
    if not converged:
        warnings.warn(f"SMO did not reach KKT tolerance {tol}; best residual {residual:.3e}")
    return BinarySvmModel(alpha=alpha, bias=float(b), y=y.copy(),
                          indices=np.asarray(indices), C=C,
                          converged=converged, kkt_residual=float(residual))


@dataclass
class OvoModel:
    classes: list[int]
    models: dict[tuple[int, int], BinarySvmModel] = field(default_factory=dict)


def save_ovo(path, model: OvoModel, metadata: dict | None = None) -> None:
    """Persist dual coefficients, support indices, and metadata for every pairwise model."""
    import json

    arrays = {
        "classes": np.asarray(model.classes, dtype=np.int64),
        "metadata": np.array(json.dumps(metadata or {})),
    }
    for (a, b), m in model.models.items():
        tag = f"{a}_{b}"
        arrays[f"alpha_{tag}"] = m.alpha
        arrays[f"y_{tag}"] = m.y
        arrays[f"indices_{tag}"] = m.indices
        arrays[f"meta_{tag}"] = np.array([m.bias, m.C, float(m.converged), m.kkt_residual])
    np.savez_compressed(path, **arrays)


def load_ovo(path) -> tuple[OvoModel, dict]:
    import json

    with np.load(path) as z:
        classes = [int(c) for c in z["classes"]]
        model = OvoModel(classes=classes)
        for ai, a in enumerate(classes):
            for b in classes[ai + 1:]:
                tag = f"{a}_{b}"
                bias, c_param, conv, resid = z[f"meta_{tag}"]
                model.models[(a, b)] = BinarySvmModel(
                    alpha=z[f"alpha_{tag}"], bias=float(bias), y=z[f"y_{tag}"],
                    indices=z[f"indices_{tag}"], C=float(c_param),
                    converged=bool(conv), kkt_residual=float(resid))
        metadata = json.loads(str(z["metadata"]))
    return model, metadata


def ovo_train(K: np.ndarray, labels, C: float = 1.0, seed: int = 0) -> OvoModel:
    """One binary SVM per unordered class pair (+1 for the lower class id)."""
    y = np.asarray(labels)
    classes = sorted(int(c) for c in np.unique(y))
    if len(classes) < 2:
        raise UsageError("one-vs-one training needs at least two classes")
    ovo = OvoModel(classes=classes)
    pair_id = 0
    for ai, a in enumerate(classes):
        for b in classes[ai + 1:]:
            mask = (y == a) | (y == b)
            idx = np.nonzero(mask)[0]
            sub_y = np.where(y[idx] == a, 1.0, -1.0)
            model = svm_train_binary(K[np.ix_(idx, idx)], sub_y, C,
                                     seed=seed + pair_id, indices=idx)
            ovo.models[(a, b)] = model
            pair_id += 1
    return ovo


def ovo_predict(ovo: OvoModel, kernel_rows: np.ndarray) -> np.ndarray:
    """Majority vote across pairwise models.

    Vote ties break by the summed signed decision values in each class's
    favor, then by the lowest class id.
    """
    rows = np.atleast_2d(kernel_rows)
    n = rows.shape[0]
    cindex = {c: i for i, c in enumerate(ovo.classes)}
    votes = np.zeros((n, len(ovo.classes)), dtype=np.int64)
    scores = np.zeros((n, len(ovo.classes)))
    for (a, b), model in ovo.models.items():
        f = model.decision(rows)
        ia, ib = cindex[a], cindex[b]
        wins_a = f >= 0
        votes[wins_a, ia] += 1
        votes[~wins_a, ib] += 1
        scores[:, ia] += f
        scores[:, ib] -= f
    out = np.empty(n, dtype=np.int64)
    for r in range(n):
        top = votes[r].max()
        cands = np.nonzero(votes[r] == top)[0]
        best = cands[np.argmax(scores[r, cands])]  # argmax takes the lowest index on ties
        out[r] = ovo.classes[best]
    return out


def stratified_folds(labels, folds: int, seed: int = 0) -> np.ndarray:
    """Fold assignment per item: seeded shuffle within each class, round-robin."""
    y = np.asarray(labels)
    if folds < 2:
        raise UsageError("need at least 2 folds")
    if folds > len(y):
        raise UsageError(f"{folds} folds exceed dataset size {len(y)}")
    rng = np.random.default_rng(seed)
    assign = np.empty(len(y), dtype=np.int64)
    offset = 0
    for c in np.unique(y):
        idx = np.nonzero(y == c)[0]
        rng.shuffle(idx)
        assign[idx] = (np.arange(len(idx)) + offset) % folds
        offset += len(idx)
    return assign


@dataclass
class CvReport:
    mean_accuracy: float
    fold_accuracies: list[float]
    skipped_folds: list[int]


def cross_validate(vectors: list[LifetimeVector], labels, folds: int = 10, C: float = 1.0,
                   *, seed: int = 0, gamma="auto", distances: np.ndarray | None = None) -> CvReport:
    """Stratified k-fold accuracy of the one-vs-one SVM with the exp(-gamma d) kernel.

    Pairwise distances are computed once; each fold resolves gamma on its own
    training block when ``gamma="auto"``. Folds whose training side is missing
    a class are skipped with a warning.
    """
    y = np.asarray(labels)
    d = pairwise_distance(vectors) if distances is None else np.asarray(distances)
    assign = stratified_folds(y, folds, seed)
    classes = np.unique(y)
    accs: list[float] = []
    skipped: list[int] = []
    for f in range(folds):
        te = assign == f
        tr = ~te
        if not te.any():
            skipped.append(f)
            continue
        if np.unique(y[tr]).size < classes.size:
            warnings.warn(f"fold {f} is missing a class on the training side; skipped")
            skipped.append(f)
            continue
        d_tr = d[np.ix_(tr, tr)]
        g = auto_gamma(d_tr) if gamma == "auto" else float(gamma)
        model = ovo_train(np.exp(-g * d_tr), y[tr], C, seed=seed)
        preds = ovo_predict(model, np.exp(-g * d[np.ix_(te, tr)]))
        accs.append(float(np.mean(preds == y[te])))
    mean = float(np.mean(accs)) if accs else 0.0
    logger.info("cross_validate: mean %.4f over %d folds (%d skipped)", mean, len(accs), len(skipped))
    return CvReport(mean_accuracy=mean, fold_accuracies=accs, skipped_folds=skipped)


def knn_predict(distance_rows: np.ndarray, train_labels, k: int) -> np.ndarray:
    """Majority label among the k nearest training items; ties go to the lowest class id."""
    rows = np.atleast_2d(np.asarray(distance_rows, dtype=np.float64))
    y = np.asarray(train_labels, dtype=np.int64)
    if k < 1:
        raise UsageError("k must be >= 1")
    if k > len(y):
        raise UsageError(f"k={k} exceeds the training set size {len(y)}")
    nearest = np.argsort(rows, axis=1, kind="stable")[:, :k]
    out = np.empty(rows.shape[0], dtype=np.int64)
    for i in range(rows.shape[0]):
        out[i] = np.argmax(np.bincount(y[nearest[i]]))  # first max = lowest class id
    return out
