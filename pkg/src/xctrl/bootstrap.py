"""Percentile-bootstrap uncertainty for per-bin xCTRL."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .data import BinKey, BinnedData, iqr_mask
from .gmm import EMConfig, FitError, InsufficientDataError, MixtureModel, select_k
from .intent import score_points
from .seeding import derive_seed

log = logging.getLogger(__name__)


class BootstrapError(FitError):
    """Too many replicates failed for the bin to be summarised."""


def percentile(values: Sequence[float], q: float) -> float:
    """Linear-interpolation percentile (the same convention as the IQR quartiles)."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ValueError("percentile of an empty sequence")
    if not 0 <= q <= 100:
        raise ValueError("q must lie in [0, 100]")
    return float(np.percentile(arr, q, method="linear"))


@dataclass(frozen=True)
class BootstrapConfig:
    n_replicates: int = 100
    max_retries: int = 3
    min_success_fraction: float = 0.9
    score_resample: bool = False  # score the resampled pitches instead of the originals
    k_range: tuple[int, ...] | None = None
    check_threshold: bool = True  # require the bin itself to meet the fitting threshold
    ci_level: float = 90.0

    def __post_init__(self):
        if self.n_replicates < 1:
            raise ValueError("n_replicates must be positive")
        if not 0 < self.ci_level < 100:
            raise ValueError("ci_level must be a percentage in (0, 100)")


@dataclass(frozen=True)
class BootstrapSummary:
    bin: BinKey | None
    replicates: tuple[float, ...]
    median_xctrl: float
    ci90: tuple[float, float]
    median_model: MixtureModel
    n_failed: int = 0

    @property
    def n_ok(self) -> int:
        return len(self.replicates)


def summarize(values: Sequence[float], models: Sequence[MixtureModel], bin: BinKey | None,
              n_failed: int = 0, ci_level: float = 90.0) -> BootstrapSummary:
    """Median, percentile interval and the model behind the (lower) middle replicate."""
    vals = np.asarray(values, dtype=float)
    tail = (100.0 - ci_level) / 2.0
    order = np.argsort(vals, kind="stable")
    mid = order[(len(vals) - 1) // 2]
    return BootstrapSummary(
        bin,
        tuple(float(v) for v in vals),
        percentile(vals, 50),
        (percentile(vals, tail), percentile(vals, 100 - tail)),
        models[mid],
        n_failed,
    )


def run_replicates(fit_one: Callable[[int, int], tuple[float, MixtureModel]], config: BootstrapConfig,
                   label: str) -> tuple[list[float], list[MixtureModel], int]:
    """Drive ``fit_one(replicate, attempt)`` with retries; gather in replicate order."""
    values, models, failed = [], [], 0
    for r in range(config.n_replicates):
        for attempt in range(config.max_retries + 1):
            try:
                v, m = fit_one(r, attempt)
            except FitError as exc:
                log.debug("%s replicate %d attempt %d failed: %s", label, r, attempt, exc)
                continue
            values.append(v)
            models.append(m)
            break
        else:
            failed += 1
            log.warning("%s replicate %d failed after %d attempts", label, r, config.max_retries + 1)
    needed = int(np.ceil(config.min_success_fraction * config.n_replicates))
    if len(values) < needed:
        raise BootstrapError(
            f"{label}: only {len(values)} of {config.n_replicates} replicates succeeded (need {needed})"
        )
    return values, models, failed


def bootstrap_bin(bin: BinnedData, config: BootstrapConfig = BootstrapConfig(), seed: int = 0,
                  em_config: EMConfig = EMConfig()) -> BootstrapSummary:
    """Resample the bin's pitches, refit, and summarise the replicate xCTRL values.

    Each replicate draws ``len(bin)`` pitches with replacement, re-applies the
    IQR mask to the draw, selects K and refits, then scores the original
    pitches (or the draw, with ``score_resample``).
    """
    if config.check_threshold and bin.n_fit < em_config.min_points:
        raise InsufficientDataError(
            f"{bin.key.label()}: {bin.n_fit} fit-eligible pitches, below the "
            f"{em_config.min_points}-pitch threshold"
        )
    pts = bin.points
    n = len(pts)
    if n == 0:
        raise InsufficientDataError(f"{bin.key.label()}: empty bin")
    label = bin.key.label()

    def fit_one(r: int, attempt: int):
        sub = derive_seed(seed, label, r, attempt)
        draw = pts[np.random.default_rng(sub).integers(0, n, n)]
        fit_pts = draw[iqr_mask(draw)]
        model = select_k(fit_pts, seed=sub, config=em_config, k_range=config.k_range, min_points=0,
                         bin=bin.key)
        target = draw if config.score_resample else pts
        return float(score_points(target, model).mean()), model

    values, models, failed = run_replicates(fit_one, config, label)
    return summarize(values, models, bin.key, failed, config.ci_level)


SUMMARY_COLUMNS = ("pitcher_id", "season", "pitch_type", "batter_hand", "count_group",
                   "median_xctrl", "ci_low", "ci_high", "n_replicates_ok")


def summary_csv(summaries: Sequence[BootstrapSummary]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for s in summaries:
        k = s.bin
        w.writerow([k.pitcher_id, k.season, k.pitch_type, k.batter_hand, k.count_group,
                    f"{s.median_xctrl:.4f}", f"{s.ci90[0]:.4f}", f"{s.ci90[1]:.4f}", s.n_ok])
    return buf.getvalue()
