"""Count-specific intent densities shrunk toward the count-agnostic fit.

Sparse count bins are fit on their own pitches plus synthetic draws from the
count-agnostic mixture (the prior). The synthetic draws carry sample weight
``omega``; larger ``omega`` pulls the fit toward the prior.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .bootstrap import BootstrapConfig, BootstrapSummary, run_replicates, summarize
from .data import BinKey
from .gmm import (DegenerateFitError, EMConfig, FitError, MixtureModel, json_safe, mean_loglik,
                  select_k, to_dict)
from .intent import score_points
from .seeding import derive_seed

DEFAULT_MESH = tuple(round(0.1 * i, 1) for i in range(1, 10))


@dataclass(frozen=True)
class ShrinkageConfig:
    n_synthetic: int = 250
    omega_mesh: tuple[float, ...] = DEFAULT_MESH
    B: int = 100
    R: int = 5
    split_fraction: float = 0.8
    min_real: int = 20  # below this the prior is passed through unchanged
    freeze_synthetic: bool = False  # reuse one synthetic draw across omegas and replicates
    k_range: tuple[int, ...] | None = None
    max_retries: int = 3
    min_success_fraction: float = 0.9

    def __post_init__(self):
        mesh = tuple(float(v) for v in self.omega_mesh)
        object.__setattr__(self, "omega_mesh", mesh)
        if not mesh:
            raise ValueError("omega_mesh is empty")
        if any(not 0 < v < 1 for v in mesh):
            raise ValueError("omega values must lie strictly inside (0, 1)")
        if any(b <= a for a, b in zip(mesh, mesh[1:])):
            raise ValueError("omega_mesh must be strictly increasing")
        if self.n_synthetic <= 0:
            raise ValueError("n_synthetic must be positive")
        if self.B < 1 or self.R < 1:
            raise ValueError("B and R must be positive")
        if not 0 < self.split_fraction < 1:
            raise ValueError("split_fraction must lie in (0, 1)")


def synthesize_prior_samples(prior: MixtureModel, n: int, seed: int) -> np.ndarray:
    """``n`` i.i.d. draws from the prior mixture, shape ``(n, 2)``."""
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = np.random.default_rng(seed)
    comp = rng.choice(prior.k, size=n, p=prior.weights / prior.weights.sum())
    chol = np.linalg.cholesky(prior.cov_matrices)
    z = rng.standard_normal((n, 2))
    return prior.means[comp] + np.einsum("nij,nj->ni", chol[comp], z)


@dataclass(frozen=True)
class ShrunkFit:
    model: MixtureModel
    heldout_loglik: float  # mean per real test pitch


def _split(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    n_train = min(max(int(round(fraction * n)), 1), n - 1)
    return perm[:n_train], perm[n_train:]


def fit_shrunken(train: np.ndarray, test: np.ndarray, prior: MixtureModel, omega: float,
                 config: ShrinkageConfig, seed: int, em_config: EMConfig = EMConfig(),
                 synthetic: np.ndarray | None = None) -> ShrunkFit:
    """One shrunken density: best of ``config.R`` weighted fits by held-out real log-likelihood."""
    if synthetic is None:
        synthetic = synthesize_prior_samples(prior, config.n_synthetic, derive_seed(seed, "synthetic"))
    X = np.vstack([train, synthetic])
    w = np.concatenate([np.ones(len(train)), np.full(len(synthetic), float(omega))])
    best = None
    for r in range(config.R):
        try:
            m = select_k(X, weights=w, seed=derive_seed(seed, "restart", r), config=em_config,
                         k_range=config.k_range, min_points=0, n_restarts=1)
        except DegenerateFitError:
            continue
        ll = mean_loglik(test, m)
        if best is None or ll > best.heldout_loglik:
            best = ShrunkFit(m, ll)
    if best is None:
        raise DegenerateFitError(f"every restart failed at omega={omega}")
    return best


def _frozen(prior: MixtureModel, config: ShrinkageConfig, seed: int) -> np.ndarray | None:
    if not config.freeze_synthetic:
        return None
    return synthesize_prior_samples(prior, config.n_synthetic, derive_seed(seed, "frozen"))


def select_omega(count_pitches, prior: MixtureModel, config: ShrinkageConfig = ShrinkageConfig(),
                 seed: int = 0, em_config: EMConfig = EMConfig()) -> tuple[float, dict[float, float]]:
    """Mesh value with the best held-out log-likelihood on real pitches.

    Returns ``(omega, scores)`` where ``scores`` maps each fitted omega to its
    held-out mean log-likelihood. Ties go to the smaller omega.
    """
    pts = np.asarray(count_pitches, dtype=float).reshape(-1, 2)
    if len(pts) < 2:
        raise ValueError("need at least two count pitches for a train/test split")
    if len(config.omega_mesh) == 1:
        return config.omega_mesh[0], {}
    tr, te = _split(len(pts), config.split_fraction, derive_seed(seed, "omega-split"))
    frozen = _frozen(prior, config, seed)
    scores: dict[float, float] = {}
    for i, omega in enumerate(config.omega_mesh):
        try:
            fit = fit_shrunken(pts[tr], pts[te], prior, omega, config, derive_seed(seed, "omega", i),
                               em_config, frozen)
        except FitError:
            continue
        scores[omega] = fit.heldout_loglik
    if not scores:
        raise FitError("no omega in the mesh could be fit")
    best = max(scores.values())
    return next(o for o in config.omega_mesh if o in scores and scores[o] == best), scores


@dataclass(frozen=True)
class ShrinkageResult:
    omega: float | None
    n_synthetic: int
    n_real: int
    passthrough: bool  # too few real pitches: the prior is reported unchanged
    summary: BootstrapSummary | None
    model: MixtureModel
    omega_scores: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "omega": self.omega,
            "n_synthetic": self.n_synthetic,
            "n_real": self.n_real,
            "passthrough": self.passthrough,
            "omega_scores": [[o, s] for o, s in sorted(self.omega_scores.items())],
            "model": to_dict(self.model),
        }
        if self.summary is not None:
            doc.update(
                median_xctrl=self.summary.median_xctrl,
                ci_low=self.summary.ci90[0],
                ci_high=self.summary.ci90[1],
                n_replicates_ok=self.summary.n_ok,
            )
        return json.dumps(json_safe(doc), indent=2, allow_nan=False) + "\n"


def shrunken_density(count_pitches, prior: MixtureModel, omega: float,
                     config: ShrinkageConfig = ShrinkageConfig(), seed: int = 0,
                     em_config: EMConfig = EMConfig(), bin: BinKey | None = None) -> BootstrapSummary:
    """``config.B`` shrunken fits, each on a fresh split and fresh synthetic draws.

    Every replicate scores all real count pitches; the result follows the
    bootstrap conventions (median, 90% interval, lower-middle model).
    """
    pts = np.asarray(count_pitches, dtype=float).reshape(-1, 2)
    if len(pts) < 2:
        raise ValueError("need at least two count pitches")
    frozen = _frozen(prior, config, seed)
    label = bin.label() if bin is not None else "count-bin"

    def fit_one(b: int, attempt: int):
        sub = derive_seed(seed, "replicate", b, attempt)
        tr, te = _split(len(pts), config.split_fraction, derive_seed(sub, "split"))
        fit = fit_shrunken(pts[tr], pts[te], prior, omega, config, sub, em_config, frozen)
        return float(score_points(pts, fit.model).mean()), fit.model

    boot = BootstrapConfig(n_replicates=config.B, max_retries=config.max_retries,
                           min_success_fraction=config.min_success_fraction)
    values, models, failed = run_replicates(fit_one, boot, label)
    return summarize(values, models, bin, failed)


def shrink_bin(count_pitches, prior: MixtureModel, config: ShrinkageConfig = ShrinkageConfig(),
               seed: int = 0, em_config: EMConfig = EMConfig(), bin: BinKey | None = None) -> ShrinkageResult:
    """Select omega, then build the shrunken density; pass the prior through for tiny bins."""
    pts = np.asarray(count_pitches, dtype=float).reshape(-1, 2)
    if len(pts) < config.min_real:
        return ShrinkageResult(None, 0, len(pts), True, None, prior)
    omega, scores = select_omega(pts, prior, config, derive_seed(seed, "select"), em_config)
    summary = shrunken_density(pts, prior, omega, config, derive_seed(seed, "density"), em_config, bin)
    return ShrinkageResult(omega, config.n_synthetic, len(pts), False, summary, summary.median_model, scores)
