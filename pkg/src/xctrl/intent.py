"""Posterior intent, xCTRL scores, bin aggregates, rankings and density grids."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .data import BinKey, BinnedData
from .gmm import MixtureModel


class ScoringError(ValueError):
    pass


def euclidean_delta(a, b) -> float:
    """Distance in inches between two (x, z) locations."""
    return math.hypot(a[0] - b[0], a[1] - b[1])


@dataclass(frozen=True)
class IntentPosterior:
    probabilities: np.ndarray  # p_k, sums to 1
    distances: np.ndarray  # inches from the pitch to each component mean
    pitch: tuple[float, float]


@dataclass(frozen=True)
class PitchScore:
    xctrl: float
    posterior: IntentPosterior
    was_fit_outlier: bool = False


@dataclass(frozen=True)
class BinScore:
    bin: BinKey
    mean_xctrl: float
    n_scored: int
    per_pitch: tuple[PitchScore, ...] | None = None


def posterior_matrix(points, model: MixtureModel) -> tuple[np.ndarray, np.ndarray]:
    """Posterior target probabilities and target distances for many pitches.

    Returns ``(P, D)``, both ``(n, K)``. The posterior is normalised in log
    space after subtracting each row's maximum, so far-out pitches do not
    underflow.
    """
    X = np.ascontiguousarray(points, dtype=float).reshape(-1, 2)
    lp = _kernels.log_joint(X, model.weights, model.means, model.covs)
    lp -= lp.max(axis=1, keepdims=True)
    P = np.exp(lp)
    P /= P.sum(axis=1, keepdims=True)
    D = np.hypot(X[:, None, 0] - model.means[None, :, 0], X[:, None, 1] - model.means[None, :, 1])
    return P, D


def aggregate_xctrl(probabilities, distances) -> float:
    """Probability-weighted execution distance for one pitch."""
    return math.fsum(p * d for p, d in zip(probabilities, distances))


def posterior(pitch, model: MixtureModel) -> IntentPosterior:
    P, D = posterior_matrix([pitch], model)
    total = P[0].sum()
    assert np.isfinite(total) and abs(total - 1.0) < 1e-9
    return IntentPosterior(P[0], D[0], (float(pitch[0]), float(pitch[1])))


def score_pitch(pitch, model: MixtureModel, was_fit_outlier: bool = False) -> PitchScore:
    post = posterior(pitch, model)
    return PitchScore(aggregate_xctrl(post.probabilities, post.distances), post, was_fit_outlier)


def score_points(points, model: MixtureModel) -> np.ndarray:
    """xCTRL (inches) of every pitch, vectorised."""
    P, D = posterior_matrix(points, model)
    return (P * D).sum(axis=1)


def score_bin(bin: BinnedData, model: MixtureModel, keep_per_pitch: bool = False) -> BinScore:
    """Average xCTRL over every pitch in the bin, IQR outliers included."""
    if len(bin) == 0:
        raise ScoringError(f"bin {bin.key.label()} is empty")
    pts = bin.points
    if keep_per_pitch:
        P, D = posterior_matrix(pts, model)
        per = tuple(
            PitchScore(
                aggregate_xctrl(P[i], D[i]),
                IntentPosterior(P[i], D[i], (float(pts[i, 0]), float(pts[i, 1]))),
                not bool(bin.fit_mask[i]),
            )
            for i in range(len(pts))
        )
        values = np.array([s.xctrl for s in per])
    else:
        per = None
        values = score_points(pts, model)
    return BinScore(bin.key, float(values.mean()), len(values), per)


@dataclass(frozen=True)
class OverallScore:
    pitcher_id: str
    season: int
    pitch_type: str
    count_group: str
    xctrl: float
    n: int
    partial: bool
    hands: str  # "LR", "L" or "R"


def pitcher_overall(left: BinScore | None, right: BinScore | None, weighted: bool = False) -> OverallScore:
    """Handedness-averaged control for one pitcher/season/pitch type.

    The default is the unweighted mean of the two bin averages; ``weighted``
    weights each side by its pitch count. With one side missing, that side's
    value is returned and flagged ``partial``.
    """
    sides = [s for s in (left, right) if s is not None]
    if not sides:
        raise ScoringError("need at least one of the left/right bin scores")
    keys = {(s.bin.pitcher_id, s.bin.season, s.bin.pitch_type, s.bin.count_group) for s in sides}
    if len(keys) != 1:
        raise ScoringError(f"left/right scores belong to different bins: {sorted(keys)}")
    pid, season, ptype, group = keys.pop()
    n = sum(s.n_scored for s in sides)
    if len(sides) == 1:
        value = sides[0].mean_xctrl
    elif weighted:
        value = (left.mean_xctrl * left.n_scored + right.mean_xctrl * right.n_scored) / n
    else:
        value = 0.5 * (left.mean_xctrl + right.mean_xctrl)
    hands = "".join(h for h, s in (("L", left), ("R", right)) if s is not None)
    return OverallScore(pid, season, ptype, group, value, n, len(sides) == 1, hands)


@dataclass(frozen=True)
class RankingRow:
    pitcher_id: str
    season: int
    pitch_type: str
    xctrl_in: float
    n: int
    ci_low: float | None = None
    ci_high: float | None = None
    partial: bool = False


def _as_row(entry) -> RankingRow:
    if isinstance(entry, RankingRow):
        return entry
    if isinstance(entry, BinScore):
        k = entry.bin
        return RankingRow(k.pitcher_id, k.season, k.pitch_type, entry.mean_xctrl, entry.n_scored)
    if isinstance(entry, OverallScore):
        return RankingRow(entry.pitcher_id, entry.season, entry.pitch_type, entry.xctrl, entry.n,
                          partial=entry.partial)
    raise TypeError(f"cannot rank {type(entry).__name__}")


def rank_bins(entries: Iterable) -> list[RankingRow]:
    """Best control first: ascending xCTRL, then larger samples, then pitcher id."""
    rows = [_as_row(e) for e in entries]
    if not rows:
        raise ScoringError("nothing to rank")
    return sorted(rows, key=lambda r: (r.xctrl_in, -r.n, r.pitcher_id, r.season, r.pitch_type))


RANKING_COLUMNS = ("pitcher_id", "season", "pitch_type", "xctrl_in", "ci_low", "ci_high", "n")


def _fmt(v: float | None) -> str:
    return "" if v is None else f"{v:.2f}"


def ranking_csv(rows: Sequence[RankingRow]) -> str:
    """Ranking table as CSV text; inches to two decimals, empty CI when absent."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RANKING_COLUMNS)
    for r in rows:
        w.writerow([r.pitcher_id, r.season, r.pitch_type, _fmt(r.xctrl_in), _fmt(r.ci_low),
                    _fmt(r.ci_high), r.n])
    return buf.getvalue()


# -- density grids -------------------------------------------------------------


@dataclass(frozen=True)
class StrikeZone:
    """Average strike-zone rectangle in inches (configurable)."""

    left: float = -8.5
    right: float = 8.5
    bottom: float = 18.0
    top: float = 42.0

    def as_dict(self) -> dict:
        return {"left_in": self.left, "right_in": self.right, "bottom_in": self.bottom, "top_in": self.top}


@dataclass(frozen=True)
class DensityGrid:
    xs: np.ndarray  # cell-centre x coordinates
    zs: np.ndarray  # cell-centre z coordinates
    density: np.ndarray  # (len(zs), len(xs)), in^-2
    cell_area: float

    @property
    def mass(self) -> float:
        """Midpoint-rule estimate of the probability inside the window."""
        return float(self.density.sum() * self.cell_area)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("x_in", "z_in", "density"))
        for j, z in enumerate(self.zs):
            for i, x in enumerate(self.xs):
                w.writerow((repr(float(x)), repr(float(z)), repr(float(self.density[j, i]))))
        return buf.getvalue()


def density_grid(model: MixtureModel, x_range=(-24.0, 24.0), z_range=(0.0, 60.0), resolution=100) -> DensityGrid:
    """Mixture density at the centres of a regular grid.

    ``resolution`` is cells per axis, or an ``(nx, nz)`` pair.
    """
    nx, nz = (resolution, resolution) if np.isscalar(resolution) else resolution
    nx, nz = int(nx), int(nz)
    if nx < 2 or nz < 2:
        raise ValueError("resolution must be at least 2 per axis")
    (x0, x1), (z0, z1) = x_range, z_range
    if not (x1 > x0 and z1 > z0):
        raise ValueError("degenerate grid range")
    dx, dz = (x1 - x0) / nx, (z1 - z0) / nz
    xs = x0 + dx * (np.arange(nx) + 0.5)
    zs = z0 + dz * (np.arange(nz) + 0.5)
    gx, gz = np.meshgrid(xs, zs)
    pts = np.column_stack([gx.ravel(), gz.ravel()])
    lp = _kernels.log_joint(pts, model.weights, model.means, model.covs)
    dens = np.exp(lp).sum(axis=1).reshape(nz, nx)
    return DensityGrid(xs, zs, dens, dx * dz)


def total_variation(a: MixtureModel, b: MixtureModel, x_range, z_range, resolution=200) -> float:
    """Grid estimate of the total-variation distance between two mixtures."""
    ga = density_grid(a, x_range, z_range, resolution)
    gb = density_grid(b, x_range, z_range, resolution)
    return 0.5 * float(np.abs(ga.density - gb.density).sum() * ga.cell_area)


def zone_sidecar(zone: StrikeZone, grid: DensityGrid, bin: BinKey | None = None) -> str:
    doc = {
        "strike_zone": zone.as_dict(),
        "nx": len(grid.xs),
        "nz": len(grid.zs),
        "cell_area_in2": grid.cell_area,
        "mass_in_window": grid.mass,
    }
    if bin is not None:
        doc["bin"] = bin.as_dict()
    return json.dumps(doc, indent=2) + "\n"
