"""Inning simulation on a discretised extended strike zone.

A pitcher picks a target cell for each game state, the pitch lands at the
target plus Gaussian noise, and the cell it lands in draws an outcome. The
location policy minimising expected runs is solved exactly by policy
iteration over the 288 (outs, bases, balls, strikes) states; innings are
then simulated to get run distributions.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .intent import StrikeZone

OUTCOMES = ("ball", "strike", "foul", "out_in_play", "single", "double", "triple", "home_run")
BALL, STRIKE, FOUL, OUT, SINGLE, DOUBLE, TRIPLE, HOME_RUN = range(8)
GRID = 5
N_CELLS = GRID * GRID
PA_CAP = 500

N_STATES = 3 * 8 * 4 * 3


class SimulationError(RuntimeError):
    pass


class ZoneModelError(ValueError):
    pass


@dataclass(frozen=True)
class State:
    outs: int = 0
    bases: int = 0  # bit 0 first base, bit 1 second, bit 2 third
    balls: int = 0
    strikes: int = 0

    @property
    def index(self) -> int:
        return ((self.outs * 8 + self.bases) * 4 + self.balls) * 3 + self.strikes

    @classmethod
    def from_index(cls, i: int) -> "State":
        i, strikes = divmod(i, 3)
        i, balls = divmod(i, 4)
        outs, bases = divmod(i, 8)
        return cls(outs, bases, balls, strikes)


def _advance(bases: int, n: int) -> tuple[int, int]:
    """Move every runner ``n`` bases; returns (new bases, runs scored)."""
    shifted = bases << n
    return shifted & 0b111, bin(shifted >> 3).count("1")


def _walk(bases: int) -> tuple[int, int]:
    # forced advancement only: runners move when every base behind them is occupied
    if bases == 0b111:
        return 0b111, 1
    if bases & 1 == 0:
        return bases | 1, 0
    if bases & 2 == 0:
        return bases | 0b11, 0
    return 0b111, 0


def apply_outcome(state: State, outcome: int) -> tuple[State | None, int, bool]:
    """Next state (None once the third out is made), runs scored, and whether the PA ended."""
    o, b, ba, s = state.outs, state.bases, state.balls, state.strikes
    if outcome == BALL:
        if ba < 3:
            return State(o, b, ba + 1, s), 0, False
        nb, runs = _walk(b)
        return State(o, nb), runs, True
    if outcome == FOUL:
        return State(o, b, ba, min(s + 1, 2)), 0, False
    if outcome == STRIKE and s < 2:
        return State(o, b, ba, s + 1), 0, False
    if outcome in (STRIKE, OUT):
        return (State(o + 1, b) if o < 2 else None), 0, True
    if outcome == HOME_RUN:
        return State(o, 0), bin(b).count("1") + 1, True
    if outcome == TRIPLE:
        return State(o, 0b100), bin(b).count("1"), True
    n = 1 if outcome == SINGLE else 2
    nb, runs = _advance(b, n)
    return State(o, nb | 1 << (n - 1)), runs, True


# -- geometry and outcome model ------------------------------------------------


@dataclass(frozen=True)
class ZoneGeometry:
    """Strike zone split 3x3 plus one ring of border cells (5x5 in all).

    Row 0 is the lowest band, column 0 the leftmost (catcher's view).
    """

    zone: StrikeZone = StrikeZone()
    n = GRID

    @property
    def x_edges(self) -> np.ndarray:
        w = (self.zone.right - self.zone.left) / 3
        return self.zone.left + w * np.arange(-1, 5)

    @property
    def z_edges(self) -> np.ndarray:
        h = (self.zone.top - self.zone.bottom) / 3
        return self.zone.bottom + h * np.arange(-1, 5)

    def centers(self) -> np.ndarray:
        """(25, 2) target locations, cell ``row * 5 + col``."""
        xe, ze = self.x_edges, self.z_edges
        xc, zc = 0.5 * (xe[1:] + xe[:-1]), 0.5 * (ze[1:] + ze[:-1])
        return np.array([(xc[c], zc[r]) for r in range(self.n) for c in range(self.n)])

    def locate(self, point) -> int | None:
        """Cell index of a landing point, or None outside the extended grid."""
        xe, ze = self.x_edges, self.z_edges
        x, z = point
        if not (xe[0] <= x < xe[-1] and ze[0] <= z < ze[-1]):
            return None
        col = min(int(np.searchsorted(xe, x, side="right")) - 1, self.n - 1)
        row = min(int(np.searchsorted(ze, z, side="right")) - 1, self.n - 1)
        return row * self.n + col


DEFAULT_GEOMETRY = ZoneGeometry()


@dataclass(frozen=True)
class ZoneOutcomeModel:
    probs: np.ndarray  # (25, 8); row i is cell i's outcome distribution

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.shape != (N_CELLS, len(OUTCOMES)):
            raise ZoneModelError(f"expected a {N_CELLS}x{len(OUTCOMES)} table, got {p.shape}")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ZoneModelError("outcome probabilities must be finite and non-negative")
        if np.any(np.abs(p.sum(1) - 1) > 1e-9):
            raise ZoneModelError("every cell's outcome probabilities must sum to 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, outcome: int) -> "ZoneOutcomeModel":
        p = np.zeros((N_CELLS, len(OUTCOMES)))
        p[:, outcome] = 1.0
        return cls(p)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("row", "col") + OUTCOMES)
        for i in range(N_CELLS):
            w.writerow([i // GRID, i % GRID] + [repr(float(v)) for v in self.probs[i]])
        return buf.getvalue()


def parse_zone_csv(text: str, tol: float = 1e-6) -> ZoneOutcomeModel:
    """Parse a 25-row zone table (``row, col`` then the 8 outcome probabilities).

    A header line is optional. Rows whose probabilities miss 1 by more than
    ``tol`` are rejected by line number; accepted rows are renormalised.
    """
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if rows and not _is_number(rows[0][0]):
        header = [c.strip().lower() for c in rows[0]]
        if header[2:] != list(OUTCOMES) or header[:2] != ["row", "col"]:
            raise ZoneModelError(f"unexpected header {rows[0]}; want row,col,{','.join(OUTCOMES)}")
        rows = rows[1:]
        first_line = 2
    else:
        first_line = 1
    if len(rows) != N_CELLS:
        raise ZoneModelError(f"zone table has {len(rows)} data rows, expected {N_CELLS}")
    probs = np.full((N_CELLS, len(OUTCOMES)), np.nan)
    for offset, r in enumerate(rows):
        line = first_line + offset
        if len(r) != 2 + len(OUTCOMES):
            raise ZoneModelError(f"line {line}: expected {2 + len(OUTCOMES)} fields, got {len(r)}")
        try:
            row, col = int(r[0]), int(r[1])
            p = np.array([float(v) for v in r[2:]])
        except ValueError as exc:
            raise ZoneModelError(f"line {line}: {exc}") from None
        if not (0 <= row < GRID and 0 <= col < GRID):
            raise ZoneModelError(f"line {line}: cell ({row}, {col}) is outside the 5x5 grid")
        if not np.isnan(probs[row * GRID + col, 0]):
            raise ZoneModelError(f"line {line}: duplicate cell ({row}, {col})")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ZoneModelError(f"line {line} (cell {row},{col}): probabilities must be non-negative")
        total = p.sum()
        if abs(total - 1.0) > tol:
            raise ZoneModelError(f"line {line} (cell {row},{col}): probabilities sum to {total:.6g}, not 1")
        probs[row * GRID + col] = p / total
    return ZoneOutcomeModel(probs)


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_zone_csv(path: str | Path) -> ZoneOutcomeModel:
    return parse_zone_csv(Path(path).read_text(encoding="utf-8"))


def default_zone_model() -> ZoneOutcomeModel:
    """Shipped synthetic table: contact in the middle, balls on the edges."""
    text = resources.files("xctrl").joinpath("data/synthetic_zone.csv").read_text(encoding="utf-8")
    return parse_zone_csv(text)


# -- pitch landing ---------------------------------------------------------------


def perturb_target(intended, sigma: float, rng: np.random.Generator) -> tuple[float, float]:
    """Intended location plus independent N(0, sigma^2) noise on each axis."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    e = rng.standard_normal(2)
    return float(intended[0] + sigma * e[0]), float(intended[1] + sigma * e[1])


def landing_matrix(sigma: float, geometry: ZoneGeometry = DEFAULT_GEOMETRY) -> np.ndarray:
    """(25, 26) matrix: P(landing cell | target cell); the last column is off-grid."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    xe, ze = geometry.x_edges, geometry.z_edges
    centers = geometry.centers()
    out = np.zeros((N_CELLS, N_CELLS + 1))
    for a, (cx, cz) in enumerate(centers):
        if sigma == 0:
            px = ((xe[:-1] <= cx) & (cx < xe[1:])).astype(float)
            pz = ((ze[:-1] <= cz) & (cz < ze[1:])).astype(float)
        else:
            px = np.diff(ndtr((xe - cx) / sigma))
            pz = np.diff(ndtr((ze - cz) / sigma))
        cells = np.outer(pz, px).ravel()
        out[a, :N_CELLS] = cells
        out[a, N_CELLS] = max(0.0, 1.0 - cells.sum())
    return out


def action_outcomes(zones: ZoneOutcomeModel, sigma: float,
                    geometry: ZoneGeometry = DEFAULT_GEOMETRY) -> np.ndarray:
    """(25, 8): outcome distribution when aiming at each cell centre."""
    L = landing_matrix(sigma, geometry)
    out = L[:, :N_CELLS] @ zones.probs
    out[:, BALL] += L[:, N_CELLS]
    return out


# -- exact policy evaluation -----------------------------------------------------


def _transitions():
    """For every (state, outcome): next state index (-1 when the inning ends) and runs."""
    nxt = np.full((N_STATES, len(OUTCOMES)), -1, dtype=np.int64)
    runs = np.zeros((N_STATES, len(OUTCOMES)))
    for i in range(N_STATES):
        s = State.from_index(i)
        for o in range(len(OUTCOMES)):
            ns, r, _ = apply_outcome(s, o)
            nxt[i, o] = -1 if ns is None else ns.index
            runs[i, o] = r
    return nxt, runs


_NEXT, _RUNS = _transitions()


@dataclass(frozen=True)
class Policy:
    actions: np.ndarray  # (288,) target cell per state index
    values: np.ndarray  # (288,) expected runs to the end of the inning
    sigma: float

    def target(self, state: State) -> int:
        return int(self.actions[state.index])


def evaluate_policy(actions, outcome_probs: np.ndarray) -> np.ndarray:
    """Expected runs from each state when following ``actions``.

    ``outcome_probs`` is the (25, 8) per-target outcome table at the true
    noise level. Raises :class:`SimulationError` when innings never end.
    """
    actions = np.asarray(actions, dtype=np.int64)
    P = np.zeros((N_STATES, N_STATES))
    r = np.zeros(N_STATES)
    for i in range(N_STATES):
        po = outcome_probs[actions[i]]
        r[i] = po @ _RUNS[i]
        for o in range(len(OUTCOMES)):
            j = _NEXT[i, o]
            if j >= 0:
                P[i, j] += po[o]
    try:
        v = np.linalg.solve(np.eye(N_STATES) - P, r)
    except np.linalg.LinAlgError:
        raise SimulationError("the outcome model never ends an inning under this policy") from None
    if not np.all(np.isfinite(v)) or np.any(v < -1e-9):
        raise SimulationError("the outcome model never ends an inning under this policy")
    resid = (np.eye(N_STATES) - P) @ v - r
    if np.max(np.abs(resid)) > 1e-6 * max(1.0, np.max(np.abs(v))) or np.max(v) > 1e6:
        raise SimulationError("the outcome model never ends an inning under this policy")
    return np.maximum(v, 0.0)


def _q_values(values: np.ndarray, outcome_probs: np.ndarray) -> np.ndarray:
    cont = np.where(_NEXT >= 0, values[np.maximum(_NEXT, 0)], 0.0)  # (288, 8)
    return (_RUNS + cont) @ outcome_probs.T  # (288, 25)


def _argmin_low(q: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    # lowest cell index among (near-)ties
    best = q.min(axis=1, keepdims=True)
    return np.argmax(q <= best + tol * np.maximum(1.0, np.abs(best)), axis=1)


def optimal_policy(zones: ZoneOutcomeModel, sigma: float, geometry: ZoneGeometry = DEFAULT_GEOMETRY,
                   max_iter: int = 100) -> Policy:
    """Target cell per state minimising expected runs, by policy iteration."""
    po = action_outcomes(zones, sigma, geometry)
    # start from the myopic choice: fewest immediate runs, most outs
    actions = _argmin_low(_q_values(np.zeros(N_STATES), po) - 1e-3 * po[:, OUT][None, :])
    for _ in range(max_iter):
        values = evaluate_policy(actions, po)
        q = _q_values(values, po)
        current = q[np.arange(N_STATES), actions]
        improved = _argmin_low(q)
        better = q[np.arange(N_STATES), improved] < current - 1e-12 * np.maximum(1.0, np.abs(current))
        if not better.any():
            return Policy(_argmin_low(q), values, float(sigma))
        actions = np.where(better, improved, actions)
    raise SimulationError("policy iteration did not converge")


def expected_runs(policy: Policy, zones: ZoneOutcomeModel, sigma_T: float,
                  geometry: ZoneGeometry = DEFAULT_GEOMETRY) -> float:
    """Exact expected runs per inning from the empty 0-out state."""
    return float(evaluate_policy(policy.actions, action_outcomes(zones, sigma_T, geometry))[0])


# -- Monte Carlo innings ---------------------------------------------------------


def draw_outcome(cum_row: np.ndarray, u: float) -> int:
    """Inverse-CDF draw from one cell's cumulative outcome probabilities."""
    return min(int(np.searchsorted(cum_row, u, side="right")), len(OUTCOMES) - 1)


@dataclass(frozen=True)
class InningResult:
    runs: int
    outs: int
    batters: int
    pitches: int


def play_inning(policy: Policy, zones: ZoneOutcomeModel, sigma_T: float, rng: np.random.Generator,
                geometry: ZoneGeometry = DEFAULT_GEOMETRY) -> InningResult:
    """Simulate pitch by pitch until three outs.

    Every pitch consumes exactly two normals and one uniform, so two
    policies run on the same generator seed see the same noise.
    """
    centers = geometry.centers()
    cum = np.cumsum(zones.probs, axis=1)
    state, runs, batters, pitches, outs = State(), 0, 1, 0, 0
    while True:
        e = rng.standard_normal(2)
        u = rng.random()
        pitches += 1
        cx, cz = centers[policy.actions[state.index]]
        cell = geometry.locate((cx + sigma_T * e[0], cz + sigma_T * e[1]))
        outcome = BALL if cell is None else draw_outcome(cum[cell], u)
        nxt, r, pa_over = apply_outcome(state, outcome)
        runs += r
        if outcome in (STRIKE, OUT) and pa_over:
            outs += 1
        if nxt is None:
            return InningResult(runs, outs, batters, pitches)
        if pa_over:
            batters += 1
            if batters > PA_CAP:
                raise SimulationError(f"inning exceeded {PA_CAP} plate appearances")
        state = nxt


def simulate_inning(policy: Policy, zones: ZoneOutcomeModel, sigma_T: float, rng: np.random.Generator,
                    geometry: ZoneGeometry = DEFAULT_GEOMETRY) -> int:
    """Runs scored in one simulated inning."""
    return play_inning(policy, zones, sigma_T, rng, geometry).runs


def simulate_runs(policy: Policy, zones: ZoneOutcomeModel, sigma_T: float, innings: int, seed: int,
                  geometry: ZoneGeometry = DEFAULT_GEOMETRY) -> np.ndarray:
    """Runs for innings ``0..innings-1``; inning ``i`` uses generator ``[seed, i]``."""
    if innings < 1:
        raise ValueError("innings must be at least 1")
    return np.array([
        simulate_inning(policy, zones, sigma_T, np.random.default_rng([seed, i]), geometry)
        for i in range(innings)
    ])


@dataclass(frozen=True)
class CurvePoint:
    sigma: float
    value: float  # mean runs per inning, or loss in runs per inning
    stderr: float


def _stderr(x: np.ndarray) -> float:
    return float(x.std(ddof=1) / np.sqrt(len(x))) if len(x) > 1 else float("nan")


def run_curve(zones: ZoneOutcomeModel, sigmas: Sequence[float], innings: int = 10_000, seed: int = 0,
              geometry: ZoneGeometry = DEFAULT_GEOMETRY) -> list[CurvePoint]:
    """Mean runs per inning when the pitcher knows their own noise level."""
    if not len(sigmas):
        raise ValueError("sigmas is empty")
    out = []
    for s in sigmas:
        runs = simulate_runs(optimal_policy(zones, s, geometry), zones, s, innings, seed, geometry)
        out.append(CurvePoint(float(s), float(runs.mean()), _stderr(runs)))
    return out


def belief_loss_curve(zones: ZoneOutcomeModel, sigma_T: float, sigma_F_list: Sequence[float],
                      innings: int = 10_000, seed: int = 0,
                      geometry: ZoneGeometry = DEFAULT_GEOMETRY) -> list[CurvePoint]:
    """Extra runs per inning from planning with believed noise sigma_F while the true noise is sigma_T.

    Both policies replay the same innings (same per-inning generators), so
    the loss is a paired difference and is exactly zero at sigma_F = sigma_T.
    """
    base_policy = optimal_policy(zones, sigma_T, geometry)
    base = simulate_runs(base_policy, zones, sigma_T, innings, seed, geometry)
    out = []
    for sf in sigma_F_list:
        pol = optimal_policy(zones, sf, geometry)
        if np.array_equal(pol.actions, base_policy.actions):
            diff = np.zeros(innings)
        else:
            diff = simulate_runs(pol, zones, sigma_T, innings, seed, geometry) - base
        out.append(CurvePoint(float(sf), float(diff.mean()), _stderr(diff)))
    return out


def curve_csv(points: Sequence[CurvePoint], value_name: str = "mean_runs") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("sigma", value_name, "stderr"))
    for p in points:
        w.writerow((repr(p.sigma), repr(p.value), repr(p.stderr)))
    return buf.getvalue()
