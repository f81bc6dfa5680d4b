"""Bivariate Gaussian mixtures fit by (optionally sample-weighted) EM.

Points are ``(n, 2)`` arrays of plate locations in inches. Sample weights
scale each point's contribution to the sufficient statistics, which is what
the count-shrinkage fits need; with all weights equal the fit is plain EM.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .data import BinKey
from .seeding import derive_seed

FORMAT_VERSION = 1


class FitError(RuntimeError):
    """A mixture could not be fit."""


class DegenerateFitError(FitError):
    """EM collapsed: too few distinct points or a component lost all mass."""


class InsufficientDataError(FitError):
    """Fewer points than the fitting threshold."""


@dataclass(frozen=True)
class EMConfig:
    tol: float = 1e-6  # nats, on the weighted mean per-point log-likelihood
    max_iter: int = 500
    cov_floor: float = 1e-3  # in^2, lower bound on covariance eigenvalues
    n_restarts: int = 5
    k_max: int = 6
    split_fraction: float = 0.8
    min_points: int = 250
    tie_tol: float = 1e-6  # per-point validation nats; smaller k wins ties
    accelerate: bool = True  # squared extrapolation between EM steps


@dataclass(frozen=True)
class GaussianComponent:
    weight: float
    mean: tuple[float, float]
    cov: tuple[float, float, float]  # (sxx, sxz, szz)

    @property
    def cov_matrix(self) -> np.ndarray:
        sxx, sxz, szz = self.cov
        return np.array([[sxx, sxz], [sxz, szz]])


@dataclass(frozen=True)
class FitInfo:
    """Diagnostics of the EM run behind a model (not serialized)."""

    loglik_trace: tuple[float, ...]
    n_iter: int
    converged: bool


@dataclass(frozen=True)
class MixtureModel:
    components: tuple[GaussianComponent, ...]
    bin: BinKey | None = None
    n_fit: int = 0
    train_loglik: float = math.nan  # weighted mean per-point, nats
    valid_loglik: float = math.nan
    seed: int | None = None
    k_scores: tuple[tuple[int, float], ...] = ()  # (k, validation loglik) from selection
    fit_info: FitInfo | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not self.components:
            raise ValueError("a mixture needs at least one component")

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    @property
    def means(self) -> np.ndarray:
        return np.array([c.mean for c in self.components], dtype=float)

    @property
    def covs(self) -> np.ndarray:
        """(K, 3) array of (sxx, sxz, szz)."""
        return np.array([c.cov for c in self.components], dtype=float)

    @property
    def cov_matrices(self) -> np.ndarray:
        c = self.covs
        return np.stack([np.stack([c[:, 0], c[:, 1]], -1), np.stack([c[:, 1], c[:, 2]], -1)], 1)

    @classmethod
    def from_arrays(cls, weights, means, covs, **meta) -> "MixtureModel":
        """Build a model, sorting components by descending weight.

        ``covs`` may be (K, 3) or (K, 2, 2).
        """
        weights = np.asarray(weights, dtype=float)
        means = np.asarray(means, dtype=float).reshape(-1, 2)
        covs = np.asarray(covs, dtype=float)
        if covs.ndim == 3:
            covs = np.stack([covs[:, 0, 0], covs[:, 0, 1], covs[:, 1, 1]], axis=-1)
        order = sorted(range(len(weights)), key=lambda k: (-weights[k], means[k, 0], means[k, 1]))
        comps = tuple(
            GaussianComponent(
                float(weights[k]),
                (float(means[k, 0]), float(means[k, 1])),
                (float(covs[k, 0]), float(covs[k, 1]), float(covs[k, 2])),
            )
            for k in order
        )
        return cls(comps, **meta)

    def validate(self, floor: float = 0.0) -> None:
        """Raise ``ValueError`` unless the mixture invariants hold."""
        w = self.weights
        if np.any(w <= 0) or np.any(w > 1):
            raise ValueError("component weights must lie in (0, 1]")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        for c in self.components:
            ev = np.linalg.eigvalsh(c.cov_matrix)
            if ev[0] <= 0 or ev[0] < floor * (1 - 1e-9):
                raise ValueError(f"covariance eigenvalue {ev[0]!r} below floor {floor}")


def gaussian_pdf(point, component: GaussianComponent) -> float:
    """Bivariate normal density of ``component`` at ``point`` (in^-2)."""
    sxx, sxz, szz = component.cov
    det = sxx * szz - sxz * sxz
    if not det > 0:
        raise ValueError("covariance is not positive definite")
    dx = point[0] - component.mean[0]
    dz = point[1] - component.mean[1]
    q = (szz * dx * dx - 2.0 * sxz * dx * dz + sxx * dz * dz) / det
    return math.exp(-0.5 * q) / (2.0 * math.pi * math.sqrt(det))


def _as_points(points) -> np.ndarray:
    X = np.ascontiguousarray(points, dtype=float)
    if X.ndim != 2 or X.shape[1] != 2:
        raise ValueError(f"points must have shape (n, 2), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("points must be finite")
    return X


def _as_weights(weights, n: int) -> np.ndarray:
    if weights is None:
        return np.ones(n)
    w = np.ascontiguousarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError("weights must have one entry per point")
    if not np.all(w > 0) or not np.all(np.isfinite(w)):
        raise ValueError("sample weights must be positive and finite")
    # rescaling is exact for uniform weights, so equal weights reproduce plain EM
    return w / w.max()


def _collapse(X: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Merge duplicate locations, summing their weights.

    Weighted EM on the merged set is the same fit; bootstrap resamples carry
    many duplicates, so this saves a third of the work there.
    """
    uniq, inverse = np.unique(X, axis=0, return_inverse=True)
    if len(uniq) == len(X):
        return X, w
    return np.ascontiguousarray(uniq), np.bincount(inverse.ravel(), weights=w, minlength=len(uniq))


def log_density(points, model: MixtureModel) -> np.ndarray:
    """Mixture log-density at each point."""
    X = _as_points(points)
    lp = _kernels.log_joint(X, model.weights, model.means, model.covs)
    m = lp.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(lp - m).sum(axis=1, keepdims=True)))[:, 0]


def mean_loglik(points, model: MixtureModel, weights=None) -> float:
    """Weighted mean per-point log-likelihood (nats)."""
    X = _as_points(points)
    w = np.ones(len(X)) if weights is None else np.asarray(weights, dtype=float)
    return float(_kernels.mean_loglik(X, w, model.weights, model.means, model.covs))


def _kmeanspp(X: np.ndarray, w: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    idx = _kernels.kmeanspp(X, w, rng.random(k))
    if idx[-1] < 0:
        raise DegenerateFitError(f"cannot seed {k} distinct means")
    return X[idx].copy()


def _fit_prepared(X, w, k, seed, config: EMConfig, n_points: int, pooled=None) -> MixtureModel:
    if len(X) < k:
        raise DegenerateFitError(f"{len(X)} distinct point(s) cannot support {k} components")
    rng = np.random.default_rng(seed)
    means = _kmeanspp(X, w, k, rng)
    if pooled is None:
        pooled = _kernels.pooled_cov(X, w, config.cov_floor)
    covs = np.tile(pooled, (k, 1))
    pis = np.full(k, 1.0 / k)
    run = _kernels.run_squarem if config.accelerate and k > 1 else _kernels.run_em
    pis, means, covs, trace, n_iter, status = run(
        X, w, pis, means, covs, config.tol, config.max_iter, config.cov_floor
    )
    if status == _kernels.STATUS_EMPTY_COMPONENT:
        raise DegenerateFitError(f"a component lost all mass (k={k})")
    info = FitInfo(tuple(trace.tolist()), int(n_iter), status == _kernels.STATUS_OK)
    return MixtureModel.from_arrays(
        pis, means, covs, n_fit=n_points, train_loglik=float(trace[-1]), seed=seed, fit_info=info
    )


def em_fit(points, k: int, weights=None, seed: int = 0, config: EMConfig = EMConfig()) -> MixtureModel:
    """One EM run with k-means++ seeded means, pooled covariance and uniform weights.

    Deterministic given ``seed``. Raises :class:`DegenerateFitError` when the
    data cannot support ``k`` components.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    X = _as_points(points)
    if len(X) < k:
        raise ValueError(f"k={k} exceeds the number of points ({len(X)})")
    w = _as_weights(weights, len(X))
    Xc, wc = _collapse(X, w)
    return _fit_prepared(Xc, wc, k, seed, config, len(X))


def _best_of_restarts(X, w, k, seed, config: EMConfig, n_points: int, n_restarts: int | None = None):
    best = None
    failures = []
    pooled = _kernels.pooled_cov(X, w, config.cov_floor)
    for r in range(config.n_restarts if n_restarts is None else n_restarts):
        try:
            m = _fit_prepared(X, w, k, derive_seed(seed, "restart", k, r), config, n_points, pooled)
        except DegenerateFitError as exc:
            failures.append(str(exc))
            continue
        if best is None or m.train_loglik > best.train_loglik:
            best = m
    if best is None:
        raise DegenerateFitError(f"all restarts failed for k={k}: {failures[0]}")
    return best


def fit_restarts(points, k: int, weights=None, seed: int = 0, config: EMConfig = EMConfig(),
                 n_restarts: int | None = None) -> MixtureModel:
    """Best training log-likelihood over ``config.n_restarts`` EM runs."""
    X = _as_points(points)
    if len(X) < k:
        raise ValueError(f"k={k} exceeds the number of points ({len(X)})")
    w = _as_weights(weights, len(X))
    Xc, wc = _collapse(X, w)
    return _best_of_restarts(Xc, wc, k, seed, config, len(X), n_restarts)


def select_k(points, weights=None, seed: int = 0, config: EMConfig = EMConfig(),
             k_range: Sequence[int] | None = None, min_points: int | None = None,
             bin: BinKey | None = None, n_restarts: int | None = None) -> MixtureModel:
    """Choose K by validation log-likelihood, then refit on all points.

    The points are split at random into train/validation by
    ``config.split_fraction``. Each candidate k is fit on the training part
    (best of the restarts) and scored on the validation part; the smallest k
    within ``config.tie_tol`` of the best score wins. The returned model is
    refit on every point with that k and records the validation score.
    """
    X = _as_points(points)
    n = len(X)
    threshold = config.min_points if min_points is None else min_points
    if n < threshold:
        raise InsufficientDataError(f"{n} points, below the {threshold}-pitch threshold")
    if n < 2:
        raise InsufficientDataError("need at least two points to split train/validation")
    w = _as_weights(weights, n)
    ks = list(range(1, config.k_max + 1)) if k_range is None else sorted(set(int(k) for k in k_range))

    perm = np.random.default_rng(derive_seed(seed, "split")).permutation(n)
    n_train = min(max(int(round(config.split_fraction * n)), 1), n - 1)
    tr, va = perm[:n_train], perm[n_train:]
    Xt, wt = _collapse(X[tr], w[tr])
    Xv, wv = X[va], w[va]

    scores: list[tuple[int, float]] = []
    for k in ks:
        if k > len(Xt):
            continue
        try:
            m = _best_of_restarts(Xt, wt, k, derive_seed(seed, "k", k), config, n_train, n_restarts)
        except DegenerateFitError:
            continue
        scores.append((k, mean_loglik(Xv, m, wv)))
    if not scores:
        raise DegenerateFitError("no candidate k could be fit")
    best = max(s for _, s in scores)
    chosen, chosen_score = next((k, s) for k, s in scores if s >= best - config.tie_tol)

    Xa, wa = _collapse(X, w)
    final = _best_of_restarts(Xa, wa, chosen, derive_seed(seed, "refit"), config, n, n_restarts)
    return replace(final, bin=bin, seed=seed, valid_loglik=chosen_score, k_scores=tuple(scores))


# -- serialization -------------------------------------------------------------


def to_dict(model: MixtureModel) -> dict:
    return {
        "format": "xctrl-mixture",
        "version": FORMAT_VERSION,
        "bin": model.bin.as_dict() if model.bin is not None else None,
        "k": model.k,
        "components": [
            {
                "weight": c.weight,
                "mean_x": c.mean[0],
                "mean_z": c.mean[1],
                "cov": list(c.cov),
            }
            for c in model.components
        ],
        "n_fit": model.n_fit,
        "train_loglik": model.train_loglik,
        "valid_loglik": model.valid_loglik,
        "seed": model.seed,
        "k_scores": [[k, s] for k, s in model.k_scores],
    }


def from_dict(d: dict) -> MixtureModel:
    if d.get("format") != "xctrl-mixture":
        raise ValueError("not a serialized mixture model")
    comps = tuple(
        GaussianComponent(float(c["weight"]), (float(c["mean_x"]), float(c["mean_z"])), tuple(map(float, c["cov"])))
        for c in d["components"]
    )
    if len(comps) != d["k"]:
        raise ValueError("component count does not match k")
    return MixtureModel(
        comps,
        bin=BinKey(**d["bin"]) if d.get("bin") else None,
        n_fit=int(d.get("n_fit", 0)),
        train_loglik=_float(d.get("train_loglik")),
        valid_loglik=_float(d.get("valid_loglik")),
        seed=d.get("seed"),
        k_scores=tuple((int(k), float(s)) for k, s in d.get("k_scores", [])),
    )


def _float(v) -> float:
    return math.nan if v is None else float(v)


def json_safe(obj):
    # JSON has no NaN; write null instead
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [json_safe(v) for v in obj]
    return obj


def dumps(model: MixtureModel, **extra) -> str:
    """JSON text; floats are written with ``repr`` so round trips are exact."""
    d = to_dict(model)
    d.update(extra)
    return json.dumps(json_safe(d), indent=2, allow_nan=False) + "\n"


def loads(text: str) -> MixtureModel:
    return from_dict(json.loads(text))


def load(path: str | Path) -> MixtureModel:
    return loads(Path(path).read_text(encoding="utf-8"))
