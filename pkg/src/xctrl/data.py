"""Pitch CSV ingest, covariate binning and the IQR outlier rule."""

from __future__ import annotations

import configparser
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

FEET_TO_INCHES = 12.0
IQR_MULTIPLIER = 1.5
MIN_IQR_PITCHES = 4


class DataError(ValueError):
    """Raised for unusable input data (missing columns, no valid rows, ...)."""


@dataclass(frozen=True)
class PitchRecord:
    pitcher_id: str
    season: int
    pitch_type: str
    batter_hand: str
    balls: int | None
    strikes: int | None
    plate_x: float  # inches, 0 at plate centre, negative = catcher's left
    plate_z: float  # inches above the ground
    run_value_delta: float | None = None

    @property
    def count(self) -> tuple[int, int] | None:
        if self.balls is None or self.strikes is None:
            return None
        return (self.balls, self.strikes)


ALL_COUNTS = frozenset((b, s) for b in range(4) for s in range(3))


@dataclass(frozen=True)
class CountGroup:
    """A named set of ball-strike counts. ``counts=None`` matches every pitch."""

    name: str
    counts: frozenset[tuple[int, int]] | None

    def contains(self, count: tuple[int, int] | None) -> bool:
        if self.counts is None:
            return True
        return count is not None and count in self.counts

    @classmethod
    def exact(cls, balls: int, strikes: int) -> "CountGroup":
        if (balls, strikes) not in ALL_COUNTS:
            raise ValueError(f"invalid count {balls}-{strikes}")
        return cls(f"{balls}-{strikes}", frozenset({(balls, strikes)}))

    @classmethod
    def parse(cls, text: str) -> "CountGroup":
        """Parse a group name (``Early``) or a list of counts (``0-0,0-1,1-0``)."""
        key = text.strip()
        for group in NAMED_GROUPS:
            if key.lower() == group.name.lower():
                return group
        counts = []
        for tok in key.replace("+", ",").split(","):
            tok = tok.strip()
            try:
                b, s = (int(v) for v in tok.split("-"))
            except ValueError:
                raise ValueError(f"cannot parse count group {text!r}") from None
            if (b, s) not in ALL_COUNTS:
                raise ValueError(f"invalid count {tok!r}")
            counts.append((b, s))
        if len(counts) == 1:
            return cls.exact(*counts[0])
        ordered = sorted(set(counts))
        return cls("+".join(f"{b}-{s}" for b, s in ordered), frozenset(ordered))


ALL = CountGroup("All", None)
EARLY = CountGroup("Early", frozenset({(0, 0), (0, 1), (1, 0), (1, 1)}))
HITTER_FRIENDLY = CountGroup("HitterFriendly", frozenset({(2, 0), (2, 1), (3, 1)}))
PITCHER_FRIENDLY = CountGroup("PitcherFriendly", frozenset({(0, 2), (1, 2), (2, 2)}))
NAMED_GROUPS = (ALL, EARLY, HITTER_FRIENDLY, PITCHER_FRIENDLY)


@dataclass(frozen=True, order=True)
class BinKey:
    pitcher_id: str
    season: int
    pitch_type: str
    batter_hand: str
    count_group: str = "All"

    def label(self) -> str:
        return "|".join(
            [self.pitcher_id, str(self.season), self.pitch_type, self.batter_hand, self.count_group]
        )

    def slug(self) -> str:
        """Filesystem-safe name."""
        return "_".join(
            [self.pitcher_id, str(self.season), self.pitch_type, self.batter_hand, self.count_group]
        ).replace("+", "p").replace("/", "-")

    @classmethod
    def parse(cls, text: str) -> "BinKey":
        """Inverse of :meth:`label`; ``:`` is accepted as a separator too."""
        parts = text.replace(":", "|").split("|")
        if len(parts) not in (4, 5):
            raise ValueError(f"bin key needs pitcher|season|pitch_type|hand[|count_group]: {text!r}")
        group = CountGroup.parse(parts[4]).name if len(parts) == 5 else "All"
        return cls(parts[0], int(parts[1]), parts[2], parts[3].upper(), group)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class BinnedData:
    key: BinKey
    pitches: tuple[PitchRecord, ...]
    fit_mask: np.ndarray = field(compare=False)

    def __post_init__(self):
        if len(self.fit_mask) != len(self.pitches):
            raise ValueError("fit_mask length must match pitches")

    def __len__(self) -> int:
        return len(self.pitches)

    @property
    def points(self) -> np.ndarray:
        """(n, 2) array of (plate_x, plate_z) in inches."""
        if not self.pitches:
            return np.empty((0, 2))
        return np.array([(p.plate_x, p.plate_z) for p in self.pitches], dtype=float)

    @property
    def fit_points(self) -> np.ndarray:
        return self.points[self.fit_mask]

    @property
    def n_fit(self) -> int:
        return int(np.count_nonzero(self.fit_mask))


@dataclass(frozen=True)
class ColumnMap:
    """CSV column names; defaults follow the Statcast export."""

    pitcher_id: str = "pitcher"
    season: str = "game_year"
    pitch_type: str = "pitch_type"
    batter_hand: str = "stand"
    balls: str = "balls"
    strikes: str = "strikes"
    plate_x: str = "plate_x"
    plate_z: str = "plate_z"
    run_value_delta: str = "delta_run_exp"

    REQUIRED = ("pitcher_id", "season", "pitch_type", "batter_hand", "plate_x", "plate_z")


@dataclass(frozen=True)
class IngestConfig:
    columns: ColumnMap = ColumnMap()
    feet_to_inches: bool = True


@dataclass
class IngestResult:
    records: list[PitchRecord]
    n_rows: int
    n_dropped_missing_location: int
    n_dropped_invalid: int

    @property
    def n_dropped(self) -> int:
        return self.n_dropped_missing_location + self.n_dropped_invalid


def load_config(path: str | Path) -> tuple[IngestConfig, dict[str, str]]:
    """Read an INI-style config file.

    ``[columns]`` overrides :class:`ColumnMap` names, ``[ingest]`` takes
    ``feet_to_inches = true|false``; every key in ``[run]`` is returned
    verbatim for the CLI to interpret.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path, encoding="utf-8")
    columns = ColumnMap()
    if parser.has_section("columns"):
        known = {f.name for f in fields(ColumnMap)}
        overrides = dict(parser.items("columns"))
        unknown = set(overrides) - known
        if unknown:
            raise DataError(f"unknown column keys in config: {sorted(unknown)}")
        columns = replace(columns, **overrides)
    feet = True
    if parser.has_section("ingest"):
        feet = parser.getboolean("ingest", "feet_to_inches", fallback=True)
    run = dict(parser.items("run")) if parser.has_section("run") else {}
    return IngestConfig(columns=columns, feet_to_inches=feet), run


def _int_or_none(v) -> int | None:
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return None
    return int(v)


def ingest_csv(path: str | Path, config: IngestConfig = IngestConfig()) -> IngestResult:
    """Read one pitch CSV into :class:`PitchRecord` objects (inches).

    Rows with a missing location are dropped and counted; so are rows whose
    hand or count is out of range. A non-numeric location value is an error.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"input file not found: {path}")
    cols = config.columns
    df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    missing = [getattr(cols, name) for name in ColumnMap.REQUIRED if getattr(cols, name) not in df.columns]
    if missing:
        raise DataError(f"{path}: required column(s) not found: {missing}")
    n_rows = len(df)

    def numeric(name: str, required: bool) -> pd.Series:
        col = getattr(cols, name)
        if col not in df.columns:
            if required:
                raise DataError(f"{path}: required column {col!r} not found")
            return pd.Series(np.nan, index=df.index)
        raw = df[col].str.strip()
        raw = raw.mask(raw.isin(["", "NA", "NaN", "nan", "null", "None"]))
        try:
            return pd.to_numeric(raw, errors="raise")
        except (ValueError, TypeError) as exc:
            raise DataError(f"{path}: column {col!r} is not numeric: {exc}") from None

    px = numeric("plate_x", True)
    pz = numeric("plate_z", True)
    balls = numeric("balls", False)
    strikes = numeric("strikes", False)
    rv = numeric("run_value_delta", False)
    season = numeric("season", True)

    has_loc = px.notna() & pz.notna() & np.isfinite(px) & np.isfinite(pz)
    n_missing = int((~has_loc).sum())
    scale = FEET_TO_INCHES if config.feet_to_inches else 1.0

    hand = df[cols.batter_hand].str.strip().str.upper()
    pitcher = df[cols.pitcher_id].str.strip()
    ptype = df[cols.pitch_type].str.strip()
    valid = (
        has_loc
        & season.notna()
        & hand.isin(["L", "R"])
        & (pitcher != "")
        & (ptype != "")
        & (balls.isna() | balls.isin([0, 1, 2, 3]))
        & (strikes.isna() | strikes.isin([0, 1, 2]))
    )
    n_invalid = int((has_loc & ~valid).sum())

    records = []
    for i in np.flatnonzero(valid.to_numpy()):
        records.append(
            PitchRecord(
                pitcher_id=pitcher.iat[i],
                season=int(season.iat[i]),
                pitch_type=ptype.iat[i],
                batter_hand=hand.iat[i],
                balls=_int_or_none(balls.iat[i]),
                strikes=_int_or_none(strikes.iat[i]),
                plate_x=float(px.iat[i]) * scale,
                plate_z=float(pz.iat[i]) * scale,
                run_value_delta=None if pd.isna(rv.iat[i]) else float(rv.iat[i]),
            )
        )
    if n_missing or n_invalid:
        log.info(
            "%s: dropped %d row(s) with missing location, %d invalid row(s)", path, n_missing, n_invalid
        )
    if not records:
        raise DataError(f"{path}: zero valid rows")
    return IngestResult(records, n_rows, n_missing, n_invalid)


def _groups_for(mode) -> tuple[CountGroup, ...] | None:
    if mode is None or mode == "all":
        return (ALL,)
    if mode == "groups":
        return (EARLY, HITTER_FRIENDLY, PITCHER_FRIENDLY)
    if mode == "exact":
        return None
    if isinstance(mode, CountGroup):
        return (mode,)
    if isinstance(mode, str):
        return (CountGroup.parse(mode),)
    raise ValueError(f"unknown count grouping mode {mode!r}")


def bin_pitches(records: Iterable[PitchRecord], group_by_count=None) -> dict[BinKey, BinnedData]:
    """Partition pitches by (pitcher, season, pitch type, batter hand[, counts]).

    ``group_by_count`` is ``None``/``"all"`` (no count split), ``"groups"``
    (Early / HitterFriendly / PitcherFriendly; 3-0 and 3-2 pitches fall in
    none of them), ``"exact"`` (one bin per ball-strike count) or a single
    :class:`CountGroup` / group string. Bins are returned in key order; the
    pitches inside keep their ingest order.
    """
    groups = _groups_for(group_by_count)
    buckets: dict[BinKey, list[PitchRecord]] = {}
    for rec in records:
        if groups is None:
            if rec.count is None:
                continue
            label = f"{rec.count[0]}-{rec.count[1]}"
        else:
            label = next((g.name for g in groups if g.contains(rec.count)), None)
            if label is None:
                continue
        key = BinKey(rec.pitcher_id, rec.season, rec.pitch_type, rec.batter_hand, label)
        buckets.setdefault(key, []).append(rec)
    return {
        key: BinnedData(key, tuple(pitches), np.ones(len(pitches), dtype=bool))
        for key, pitches in sorted(buckets.items())
    }


def iqr_mask(points: np.ndarray, multiplier: float = IQR_MULTIPLIER) -> np.ndarray:
    """True for points within ``multiplier * IQR`` of the mean in both axes.

    Quartiles use linear interpolation between order statistics. With fewer
    than four points every point is kept.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    if n < MIN_IQR_PITCHES:
        return np.ones(n, dtype=bool)
    q1, q3 = np.percentile(points, [25, 75], axis=0)
    spread = multiplier * (q3 - q1)
    return np.all(np.abs(points - points.mean(axis=0)) <= spread, axis=1)


def apply_iqr_mask(bin: BinnedData) -> BinnedData:
    """Mark IQR outliers as not fit-eligible; they stay in the bin for scoring."""
    return replace(bin, fit_mask=iqr_mask(bin.points))


def records_from_points(points: np.ndarray, key: BinKey) -> tuple[PitchRecord, ...]:
    """Wrap raw locations as records of one bin (synthetic data, tests)."""
    return tuple(
        PitchRecord(key.pitcher_id, key.season, key.pitch_type, key.batter_hand, None, None, float(x), float(z))
        for x, z in np.asarray(points, dtype=float)
    )


def make_bin(points: np.ndarray, key: BinKey | None = None) -> BinnedData:
    key = key or BinKey("synthetic", 2023, "FF", "R")
    pitches = records_from_points(points, key)
    return BinnedData(key, pitches, np.ones(len(pitches), dtype=bool))


def count_bin_from(records: Iterable[PitchRecord], parent: BinKey, group: CountGroup) -> BinnedData:
    """Pitches of ``parent``'s pitcher/season/type/hand whose count is in ``group``."""
    chosen = tuple(
        r
        for r in records
        if (r.pitcher_id, r.season, r.pitch_type, r.batter_hand)
        == (parent.pitcher_id, parent.season, parent.pitch_type, parent.batter_hand)
        and group.contains(r.count)
    )
    key = replace(parent, count_group=group.name)
    return BinnedData(key, chosen, np.ones(len(chosen), dtype=bool))

