"""Kernel regression from embeddings to (convincingness, severity).

Two independent single-target RBF regressors realize the multi-target
model. The default solver is epsilon-insensitive SVR (fit via
scikit-learn, applied via our own kernel arithmetic so persistence does
not depend on pickle); kernel ridge is a config-selected alternative
with a closed-form solve. Predictions are clamped to [1, 4] because the
downstream bucket math assumes that range.
"""

from __future__ import annotations

import json
import logging
import zipfile
from dataclasses import dataclass, field
from datetime import date

import numpy as np
from sklearn.svm import SVR

from .errors import ContractError, IncompatibleModelError, ModelIOError, ValidationError

logger = logging.getLogger(__name__)

KERNEL_KINDS = ("svr", "kernel_ridge")
MODEL_FORMAT_VERSION = 1

TARGET_MIN = 1.0
TARGET_MAX = 4.0

# Cap on rows used by the median-distance heuristic. The subsample is
# taken after a lexicographic row sort, so it is permutation invariant.
_BANDWIDTH_SAMPLE_CAP = 2000


@dataclass(frozen=True)
class KernelConfig:
    """RBF kernel settings; bandwidth None means the median heuristic."""

    kind: str = "svr"
    bandwidth: float | None = None
    c: float = 1.0
    epsilon: float = 0.1

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValidationError(f"kernel kind must be one of {KERNEL_KINDS}, got {self.kind!r}")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValidationError("bandwidth must be positive")
        if not self.c > 0:
            raise ValidationError("regularization C must be positive")
        if self.epsilon < 0:
            raise ValidationError("epsilon must be nonnegative")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "bandwidth": self.bandwidth,
                "c": self.c, "epsilon": self.epsilon}


@dataclass(frozen=True)
class TargetModel:
    """One fitted target: f(x) = sum_i dual_i * K(sv_i, x) + intercept."""

    support_vectors: np.ndarray
    dual_coef: np.ndarray
    intercept: float


@dataclass(frozen=True)
class RegressionModel:
    config: KernelConfig
    gamma: float
    provider_id: str
    dimension: int
    targets: tuple[TargetModel, TargetModel]
    manifest: dict = field(default_factory=dict)


@dataclass(frozen=True)
class CVReport:
    fold_mses: tuple[float, ...]
    mean_mse: float
    std_mse: float
    folds: int
    seed: int

    def to_dict(self) -> dict:
        return {"fold_mses": list(self.fold_mses), "mean_mse": self.mean_mse,
                "std_mse": self.std_mse, "folds": self.folds, "seed": self.seed}


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError(f"embedding matrix must be 2-D, got shape {X.shape}")
    return X


def _as_targets(Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[1] != 2:
        raise ValidationError(f"targets must have shape (n, 2), got {Y.shape}")
    if not np.all(np.isfinite(Y)):
        raise ValidationError("targets must be finite")
    if Y.min() < TARGET_MIN or Y.max() > TARGET_MAX:
        raise ValidationError("targets must lie in [1, 4]")
    return Y


def _sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    # ||a-b||^2 via the Gram expansion; clip tiny negatives from rounding
    aa = np.sum(A * A, axis=1)[:, None]
    bb = np.sum(B * B, axis=1)[None, :]
    return np.maximum(aa + bb - 2.0 * (A @ B.T), 0.0)


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * _sq_dists(A, B))


def median_pairwise_distance(X: np.ndarray) -> float:
    """Median Euclidean distance over all row pairs.

    Rows are sorted lexicographically before any capping so the result
    does not depend on input row order.
    """
    X = _as_matrix(X)
    if X.shape[0] < 2:
        raise ValidationError("need at least two rows for the median distance heuristic")
    order = np.lexsort(X.T[::-1])
    X = X[order]
    if X.shape[0] > _BANDWIDTH_SAMPLE_CAP:
        idx = np.linspace(0, X.shape[0] - 1, _BANDWIDTH_SAMPLE_CAP).astype(int)
        X = X[idx]
    sq = _sq_dists(X, X)
    upper = sq[np.triu_indices(X.shape[0], k=1)]
    return float(np.sqrt(np.median(upper)))


def _resolve_gamma(X: np.ndarray, config: KernelConfig) -> float:
    bandwidth = config.bandwidth
    if bandwidth is None:
        bandwidth = median_pairwise_distance(X)
        if bandwidth == 0.0:
            # all rows identical; any positive gamma gives K = all-ones
            bandwidth = 1.0
    return 1.0 / (2.0 * bandwidth * bandwidth)


def _fit_target(X: np.ndarray, y: np.ndarray, config: KernelConfig, gamma: float) -> TargetModel:
    if config.kind == "svr":
        # tight tol keeps the solution stable under row permutation
        svr = SVR(kernel="rbf", gamma=gamma, C=config.c, epsilon=config.epsilon, tol=1e-8)
        svr.fit(X, y)
        return TargetModel(
            support_vectors=np.array(svr.support_vectors_, dtype=np.float64),
            dual_coef=np.array(svr.dual_coef_[0], dtype=np.float64),
            intercept=float(svr.intercept_[0]),
        )
    # kernel ridge, closed form on mean-centered targets; lambda = 1/C so
    # larger C means less regularization, matching the SVR convention
    lam = 1.0 / config.c
    intercept = float(y.mean())
    K = rbf_kernel(X, X, gamma)
    dual = np.linalg.solve(K + lam * np.eye(X.shape[0]), y - intercept)
    return TargetModel(support_vectors=X.copy(), dual_coef=dual, intercept=intercept)


def _fit(X: np.ndarray, Y: np.ndarray, config: KernelConfig,
         provider_id: str, seed: int) -> RegressionModel:
    gamma = _resolve_gamma(X, config)
    targets = tuple(_fit_target(X, Y[:, t], config, gamma) for t in range(2))
    manifest = {"rows": int(X.shape[0]), "seed": int(seed), "date": date.today().isoformat()}
    return RegressionModel(config=config, gamma=gamma, provider_id=provider_id,
                           dimension=int(X.shape[1]), targets=targets, manifest=manifest)


def train(X, Y, config: KernelConfig | None = None, *,
          provider_id: str = "unknown", seed: int = 0) -> RegressionModel:
    """Fit both targets. Deterministic for fixed inputs, config, seed."""
    config = config or KernelConfig()
    X = _as_matrix(X)
    Y = _as_targets(Y)
    if X.shape[0] != Y.shape[0]:
        raise ValidationError(
            f"row mismatch: {X.shape[0]} embeddings vs {Y.shape[0]} target pairs")
    if X.shape[0] < 10:
        raise ValidationError("training needs at least 10 rows")
    for t, name in enumerate(("convincingness", "severity")):
        if float(np.var(Y[:, t])) == 0.0:
            logger.warning("%s targets have zero variance; model will predict a constant", name)
    return _fit(X, Y, config, provider_id, seed)


def predict(model: RegressionModel, X, *, provider_id: str | None = None,
            allow_provider_mismatch: bool = False) -> np.ndarray:
    """(n, 2) predictions clamped to [1, 4]."""
    X = _as_matrix(X)
    if X.shape[1] != model.dimension:
        raise ValidationError(
            f"model expects dimension {model.dimension}, got {X.shape[1]}")
    if (provider_id is not None and provider_id != model.provider_id
            and not allow_provider_mismatch):
        raise ContractError(
            f"model was trained on provider {model.provider_id!r} but embeddings "
            f"come from {provider_id!r}; pass allow_provider_mismatch to override")
    columns = []
    for target in model.targets:
        if target.support_vectors.shape[0] == 0:
            # epsilon tube swallowed every training residual
            y = np.full(X.shape[0], target.intercept)
        else:
            K = rbf_kernel(X, target.support_vectors, model.gamma)
            y = K @ target.dual_coef + target.intercept
        columns.append(y)
    return np.clip(np.column_stack(columns), TARGET_MIN, TARGET_MAX)


def mse(predicted: np.ndarray, actual: np.ndarray) -> float:
    """Mean squared error over every (row, target) cell."""
    predicted = np.asarray(predicted, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if predicted.shape != actual.shape:
        raise ValidationError("prediction/target shape mismatch")
    return float(np.mean((predicted - actual) ** 2))


def cross_validate(X, Y, k: int, config: KernelConfig | None = None,
                   seed: int = 0, *, provider_id: str = "cv") -> CVReport:
    """Seeded shuffled k-fold CV; fold MSE pools both target columns."""
    config = config or KernelConfig()
    X = _as_matrix(X)
    Y = _as_targets(Y)
    if X.shape[0] != Y.shape[0]:
        raise ValidationError("row mismatch between embeddings and targets")
    if k < 2:
        raise ValidationError("need at least 2 folds")
    n = X.shape[0]
    if k > n:
        raise ValidationError(f"cannot split {n} rows into {k} folds")
    rng = np.random.default_rng(seed)
    folds = np.array_split(rng.permutation(n), k)
    fold_mses = []
    for held_out in folds:
        train_idx = np.setdiff1d(np.arange(n), held_out)
        model = _fit(X[train_idx], Y[train_idx], config, provider_id, seed)
        fold_mses.append(mse(predict(model, X[held_out]), Y[held_out]))
    fold_arr = np.array(fold_mses)
    return CVReport(fold_mses=tuple(fold_mses), mean_mse=float(fold_arr.mean()),
                    std_mse=float(fold_arr.std()), folds=k, seed=seed)


def save_model(model: RegressionModel, path) -> None:
    meta = {
        "format_version": MODEL_FORMAT_VERSION,
        "config": model.config.to_dict(),
        "gamma": model.gamma,
        "provider_id": model.provider_id,
        "dimension": model.dimension,
        "manifest": model.manifest,
    }
    arrays = {"meta_json": np.array(json.dumps(meta, sort_keys=True))}
    for t, target in enumerate(model.targets):
        arrays[f"sv{t}"] = target.support_vectors
        arrays[f"dual{t}"] = target.dual_coef
        arrays[f"intercept{t}"] = np.array([target.intercept])
    try:
        # write through a handle so numpy does not append an extension
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)
    except OSError as exc:
        raise ModelIOError(f"cannot write model file {path}: {exc}") from exc


def load_model(path) -> RegressionModel:
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError, zipfile.BadZipFile) as exc:
        raise ModelIOError(f"cannot read model file {path}: {exc}") from exc
    with data:
        if "meta_json" not in data.files:
            raise IncompatibleModelError(f"{path} is not a recognized model file")
        meta = json.loads(str(data["meta_json"]))
        version = meta.get("format_version")
        if version != MODEL_FORMAT_VERSION:
            raise IncompatibleModelError(
                f"model format version {version!r} unsupported "
                f"(expected {MODEL_FORMAT_VERSION})")
        try:
            cfg = meta["config"]
            config = KernelConfig(kind=cfg["kind"], bandwidth=cfg["bandwidth"],
                                  c=cfg["c"], epsilon=cfg["epsilon"])
            targets = tuple(
                TargetModel(
                    support_vectors=np.array(data[f"sv{t}"], dtype=np.float64),
                    dual_coef=np.array(data[f"dual{t}"], dtype=np.float64),
                    intercept=float(data[f"intercept{t}"][0]),
                )
                for t in range(2)
            )
            return RegressionModel(
                config=config, gamma=float(meta["gamma"]),
                provider_id=str(meta["provider_id"]), dimension=int(meta["dimension"]),
                targets=targets, manifest=dict(meta.get("manifest", {})),
            )
        except KeyError as exc:
            raise ModelIOError(f"model file {path} is missing field {exc}") from exc
