"""Command-line front end: ``xctrl fit | score | heatmap | shrink | simulate``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bootstrap import BootstrapConfig, BootstrapSummary, percentile, bootstrap_bin, summary_csv
from .data import (BinKey, BinnedData, CountGroup, DataError, IngestConfig, apply_iqr_mask, bin_pitches,
                   count_bin_from, ingest_csv, load_config)
from .gmm import EMConfig, FitError, MixtureModel, dumps, load, select_k
from .intent import (RankingRow, StrikeZone, density_grid, rank_bins, ranking_csv, score_bin,
                     zone_sidecar)
from .seeding import derive_seed
from .shrinkage import DEFAULT_MESH, ShrinkageConfig, shrink_bin
from .simulate import ZoneModelError, belief_loss_curve, curve_csv, default_zone_model, load_zone_csv, run_curve

log = logging.getLogger("xctrl")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_FIT = 4


class ConfigError(ValueError):
    pass


# -- output helpers --------------------------------------------------------------


def write_atomic(path: Path, text: str) -> None:
    """Write UTF-8 text with LF endings via a temporary file and rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    import numba
    import pandas
    import scipy

    return {
        "xctrl": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pandas.__version__,
        "numba": numba.__version__,
    }


_NOT_CONFIG = {"command", "func", "out", "config", "verbose"}


def update_manifest(out: Path, args: argparse.Namespace, inputs: list[Path], outputs: list[Path]) -> None:
    """Record inputs, settings and versions for this subcommand. No timestamps."""
    settings = {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_CONFIG}
    settings = json.loads(json.dumps(settings, default=str))
    blob = json.dumps(settings, sort_keys=True).encode("utf-8")
    path = out / "manifest.json"
    doc = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}
    doc.setdefault("commands", {})[args.command] = {
        "inputs": [{"path": p.name, "sha256": _sha256(p)} for p in inputs],
        "settings": settings,
        "config_hash": hashlib.sha256(blob).hexdigest(),
        "outputs": sorted(str(p.relative_to(out)) for p in outputs),
    }
    doc["versions"] = _versions()
    write_atomic(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


# -- shared steps ----------------------------------------------------------------


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _pair(text: str) -> tuple[float, float]:
    v = _floats(text)
    if len(v) != 2:
        raise argparse.ArgumentTypeError(f"expected LOW,HIGH, got {text!r}")
    return v


def _em_config(args) -> EMConfig:
    return EMConfig(k_max=args.k_max, split_fraction=args.split_fraction, min_points=args.min_pitches)


def _ingest(args) -> tuple[dict[BinKey, BinnedData], list]:
    result = ingest_csv(args.input, args.ingest_config)
    grouping = None if args.group_by_count in (None, "none", "all") else args.group_by_count
    bins = {k: apply_iqr_mask(b) for k, b in bin_pitches(result.records, grouping).items()}
    return bins, result.records


def _fit_bins(bins: dict[BinKey, BinnedData], args) -> tuple[dict[BinKey, MixtureModel], list[tuple[BinKey, str]]]:
    cfg = _em_config(args)
    models, skipped = {}, []
    for key, b in bins.items():
        if b.n_fit < cfg.min_points:
            reason = f"below {cfg.min_points}-pitch threshold ({b.n_fit} fit-eligible of {len(b)})"
            skipped.append((key, reason))
            log.info("skip %s: %s", key.label(), reason)
            continue
        try:
            models[key] = select_k(b.fit_points, seed=derive_seed(args.seed, key.label()), config=cfg, bin=key)
        except FitError as exc:
            skipped.append((key, f"fit failed: {exc}"))
            log.warning("skip %s: fit failed: %s", key.label(), exc)
    return models, skipped


def _skip_csv(skipped) -> str:
    lines = ["bin,reason"]
    lines += [f"{k.label()},\"{r}\"" for k, r in skipped]
    return "\n".join(lines) + "\n"


def _parse_bin(text: str) -> BinKey:
    try:
        return BinKey.parse(text)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _model_path(out: Path, key: BinKey) -> Path:
    return out / "models" / f"{key.slug()}.json"


# -- subcommands -----------------------------------------------------------------


def cmd_fit(args) -> int:
    out = args.out
    bins, _ = _ingest(args)
    models, skipped = _fit_bins(bins, args)
    written = []
    for key, m in models.items():
        p = _model_path(out, key)
        write_atomic(p, dumps(m))
        written.append(p)
    p = out / "models" / "skipped.csv"
    write_atomic(p, _skip_csv(skipped))
    written.append(p)
    update_manifest(out, args, [args.input], written)
    if not models:
        log.error("no bin qualified for fitting (%d skipped)", len(skipped))
        return EXIT_FIT if any(r.startswith("fit failed") for _, r in skipped) else EXIT_DATA
    print(f"fitted {len(models)} bin(s), skipped {len(skipped)}")
    return EXIT_OK


def _overall_rows(per_bin: dict[BinKey, tuple[float, BootstrapSummary | None, int]], weighted: bool):
    """Combine L/R bins into one ranking row per pitcher/season/type/count group."""
    groups: dict[tuple, dict[str, tuple]] = {}
    for key, entry in per_bin.items():
        groups.setdefault((key.pitcher_id, key.season, key.pitch_type, key.count_group), {})[key.batter_hand] = entry
    rows = []
    for (pid, season, ptype, _group), sides in sorted(groups.items()):
        present = [sides[h] for h in ("L", "R") if h in sides]
        n = sum(e[2] for e in present)
        wts = np.array([e[2] / n if weighted else 1.0 / len(present) for e in present])
        if all(e[1] is not None for e in present):
            reps = [np.asarray(e[1].replicates) for e in present]
            m = min(len(r) for r in reps)
            combined = sum(w * r[:m] for w, r in zip(wts, reps))
            value, lo, hi = percentile(combined, 50), percentile(combined, 5), percentile(combined, 95)
        else:
            value, lo, hi = float(sum(w * e[0] for w, e in zip(wts, present))), None, None
        rows.append(RankingRow(pid, season, ptype, value, n, lo, hi, len(present) == 1))
    return rows


def cmd_score(args) -> int:
    out = args.out
    bins, _ = _ingest(args)
    cfg = _em_config(args)
    models: dict[BinKey, MixtureModel] = {}
    skipped: list[tuple[BinKey, str]] = []
    if args.fit_inline:
        models, skipped = _fit_bins(bins, args)
    else:
        model_dir = args.models or out / "models"
        for key, b in bins.items():
            p = model_dir / f"{key.slug()}.json"
            if p.exists():
                models[key] = load(p)
            else:
                skipped.append((key, "no model file"))
        if not models:
            raise ConfigError(f"no model files for any bin in {model_dir}; run 'fit' first or pass --fit-inline")

    boot_cfg = BootstrapConfig(n_replicates=args.replicates, score_resample=args.score_resample)
    per_bin: dict[BinKey, tuple[float, BootstrapSummary | None, int]] = {}
    summaries: list[BootstrapSummary] = []
    written = []
    for key, model in models.items():
        b = bins[key]
        point = score_bin(b, model).mean_xctrl
        summary = None
        if not args.no_bootstrap:
            try:
                summary = bootstrap_bin(b, boot_cfg, seed=derive_seed(args.seed, "bootstrap", key.label()),
                                        em_config=cfg)
            except FitError as exc:
                skipped.append((key, f"bootstrap failed: {exc}"))
                log.warning("skip %s: bootstrap failed: %s", key.label(), exc)
                continue
            summaries.append(summary)
            p = out / "models" / f"{key.slug()}.median.json"
            write_atomic(p, dumps(summary.median_model, role="bootstrap-median"))
            written.append(p)
        per_bin[key] = (summary.median_xctrl if summary else point, summary, len(b))
    if not per_bin:
        log.error("nothing could be scored")
        return EXIT_FIT

    bin_rows = [RankingRow(k.pitcher_id, k.season, k.pitch_type, v, n,
                           s.ci90[0] if s else None, s.ci90[1] if s else None)
                for k, (v, s, n) in per_bin.items()]
    targets = {
        out / "scores" / "rankings.csv": ranking_csv(rank_bins(_overall_rows(per_bin, args.weighted_overall))),
        out / "scores" / "bin_rankings.csv": ranking_csv(rank_bins(bin_rows)),
        out / "scores" / "skipped.csv": _skip_csv(skipped),
    }
    if summaries:
        targets[out / "scores" / "bootstrap_summary.csv"] = summary_csv(summaries)
    for p, text in targets.items():
        write_atomic(p, text)
        written.append(p)
    update_manifest(out, args, [args.input], written)
    print(f"scored {len(per_bin)} bin(s)")
    return EXIT_OK


def cmd_heatmap(args) -> int:
    out = args.out
    if args.model is not None:
        model = load(args.model)
        if model.bin is None and args.bin is None:
            raise ConfigError("--bin is required when the model file has no bin")
        key = _parse_bin(args.bin) if args.bin else model.bin
        source = args.model
    else:
        if args.bin is None:
            raise ConfigError("give --bin (with --models) or --model")
        key = _parse_bin(args.bin)
        source = (args.models or out / "models") / f"{key.slug()}.json"
        if not source.exists():
            raise DataError(f"unknown bin {key.label()}: no model at {source}")
        model = load(source)
    zone = StrikeZone(*args.zone)
    grid = density_grid(model, args.x_range, args.z_range, args.resolution)
    paths = [out / "grids" / f"{key.slug()}.csv", out / "grids" / f"{key.slug()}.zone.json"]
    write_atomic(paths[0], grid.to_csv())
    write_atomic(paths[1], zone_sidecar(zone, grid, key))
    update_manifest(out, args, [source], paths)
    print(f"wrote {paths[0]}")
    return EXIT_OK


def cmd_shrink(args) -> int:
    out = args.out
    result = ingest_csv(args.input, args.ingest_config)
    if args.bin is None:
        raise ConfigError("--bin is required")
    parent = replace(_parse_bin(args.bin), count_group="All")
    try:
        group = CountGroup.parse(args.counts)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cfg = _em_config(args)
    parent_bin = bin_pitches(result.records).get(parent)
    if parent_bin is None:
        raise DataError(f"unknown bin {parent.label()}")
    prior_path = (args.models or out / "models") / f"{parent.slug()}.json"
    inputs = [args.input]
    if prior_path.exists():
        prior = load(prior_path)
        inputs.append(prior_path)
    elif args.fit_inline:
        parent_bin = apply_iqr_mask(parent_bin)
        prior = select_k(parent_bin.fit_points, seed=derive_seed(args.seed, parent.label()), config=cfg,
                         bin=parent)
    else:
        raise ConfigError(f"no prior model at {prior_path}; run 'fit' first or pass --fit-inline")
    count_bin = apply_iqr_mask(count_bin_from(result.records, parent, group))
    try:
        scfg = ShrinkageConfig(n_synthetic=args.n_synthetic, omega_mesh=args.mesh, B=args.replicates,
                               R=args.restarts, split_fraction=args.split_fraction,
                               freeze_synthetic=args.freeze_synthetic)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    res = shrink_bin(count_bin.fit_points, prior, scfg, derive_seed(args.seed, "shrink", count_bin.key.label()),
                     cfg, count_bin.key)
    p = out / "models" / f"{count_bin.key.slug()}.shrunk.json"
    write_atomic(p, res.to_json())
    update_manifest(out, args, inputs, [p])
    if res.passthrough:
        print(f"{count_bin.key.label()}: only {res.n_real} pitches; prior passed through (flagged)")
    else:
        print(f"{count_bin.key.label()}: omega={res.omega} median xCTRL={res.summary.median_xctrl:.2f}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    out = args.out
    zones = load_zone_csv(args.zones) if args.zones else default_zone_model()
    rc = run_curve(zones, args.sigmas, args.innings, args.seed)
    lc = belief_loss_curve(zones, args.sigma_t, args.sigma_f, args.innings, args.seed)
    paths = [out / "sim" / "run_curve.csv", out / "sim" / "loss_curve.csv"]
    write_atomic(paths[0], curve_csv(rc, "mean_runs"))
    write_atomic(paths[1], curve_csv(lc, "loss_runs"))
    update_manifest(out, args, [args.zones] if args.zones else [], paths)
    print(f"wrote {paths[0]} and {paths[1]}")
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xctrl", description="Pitcher control (xCTRL) toolkit.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master RNG seed (required)")
    common.add_argument("--out", type=Path, default=Path("xctrl-out"), help="output directory")
    common.add_argument("--config", type=Path, help="INI file; its [run] values override flags")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--input", type=Path, help="pitch CSV")
    data.add_argument("--group-by-count", default="none",
                      help="none, groups, exact, or a count list such as 0-0,0-1,1-0")
    data.add_argument("--min-pitches", type=int, default=250)
    data.add_argument("--k-max", type=int, default=6)
    data.add_argument("--split-fraction", type=float, default=0.8)
    data.add_argument("--models", type=Path, help="model directory (default OUT/models)")
    data.add_argument("--fit-inline", action="store_true", help="fit models that are not on disk")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common, data], help="fit one mixture per qualifying bin")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("score", parents=[common, data], help="bootstrap xCTRL and write rankings")
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--no-bootstrap", action="store_true", help="point estimates, empty CI columns")
    p.add_argument("--score-resample", action="store_true", help="score each resample instead of the bin")
    p.add_argument("--weighted-overall", action="store_true", help="pitch-count weighted L/R average")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("heatmap", parents=[common], help="export a density grid for one bin")
    p.add_argument("--bin", help="pitcher|season|pitch_type|hand[|count_group]")
    p.add_argument("--model", type=Path, help="model file (instead of --bin lookup)")
    p.add_argument("--models", type=Path)
    p.add_argument("--resolution", type=int, default=100, help="cells per axis")
    p.add_argument("--x-range", type=_pair, default=(-24.0, 24.0))
    p.add_argument("--z-range", type=_pair, default=(0.0, 60.0))
    p.add_argument("--zone", type=_floats, default=(-8.5, 8.5, 18.0, 42.0), help="LEFT,RIGHT,BOTTOM,TOP inches")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("shrink", parents=[common, data], help="count-specific shrunken density")
    p.add_argument("--bin", help="parent bin pitcher|season|pitch_type|hand")
    p.add_argument("--counts", default="0-0,0-1,1-0", help="count group name or count list")
    p.add_argument("--mesh", type=_floats, default=DEFAULT_MESH)
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--n-synthetic", type=int, default=250)
    p.add_argument("--freeze-synthetic", action="store_true")
    p.set_defaults(func=cmd_shrink)

    p = sub.add_parser("simulate", parents=[common], help="run-expectancy curves vs. control")
    p.add_argument("--zones", type=Path, help="zone outcome CSV (default: shipped synthetic table)")
    p.add_argument("--sigmas", type=_floats, default=(1.0, 2.0, 4.0, 6.0, 8.0))
    p.add_argument("--sigma-t", type=float, default=4.0)
    p.add_argument("--sigma-f", type=_floats, default=(1.0, 2.0, 4.0, 6.0, 8.0))
    p.add_argument("--innings", type=int, default=10_000)
    p.set_defaults(func=cmd_simulate)
    return parser


_FLAGS = {"no_bootstrap", "score_resample", "weighted_overall", "fit_inline", "freeze_synthetic"}
_LISTS = {"mesh", "sigmas", "sigma_f", "zone"}
_PAIRS = {"x_range", "z_range"}
_PATHS = {"input", "models", "model", "zones"}


def apply_config(args: argparse.Namespace) -> argparse.Namespace:
    """Overlay the config file's ``[run]`` section onto parsed flags."""
    if args.config is None:
        args.ingest_config = IngestConfig()
        return args
    try:
        ingest, run = load_config(args.config)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None
    except DataError as exc:
        raise ConfigError(str(exc)) from None
    args.ingest_config = ingest
    base = args.config.parent
    for raw, value in run.items():
        name = raw.replace("-", "_")
        if not hasattr(args, name) or name in _NOT_CONFIG:
            raise ConfigError(f"unknown [run] key {raw!r} for '{args.command}'")
        try:
            if name in _FLAGS:
                parsed = value.strip().lower() in ("1", "true", "yes", "on")
            elif name in _LISTS:
                parsed = _floats(value)
            elif name in _PAIRS:
                parsed = _pair(value)
            elif name in _PATHS:
                parsed = (base / value).resolve() if not Path(value).is_absolute() else Path(value)
            else:
                current = getattr(args, name)
                parsed = type(current)(value) if current is not None and not isinstance(current, Path) else value
                if name == "seed":
                    parsed = int(value)
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise ConfigError(f"bad value for [run] {raw}: {exc}") from None
        setattr(args, name, parsed)
    return args


def _validate(args) -> None:
    if args.seed is None:
        raise ConfigError("--seed is required (there is no clock-based default)")
    if hasattr(args, "input") and args.command != "heatmap":
        if args.input is None:
            raise ConfigError("--input is required")
        if not Path(args.input).is_file():
            raise ConfigError(f"input file not found: {args.input}")
    for name in ("replicates", "innings", "resolution", "restarts", "n_synthetic", "k_max"):
        if getattr(args, name, 1) is not None and getattr(args, name, 1) < 1:
            raise ConfigError(f"--{name.replace('_', '-')} must be positive")
    if getattr(args, "zones", None) is not None and not Path(args.zones).is_file():
        raise ConfigError(f"zone file not found: {args.zones}")
    if getattr(args, "zone", None) is not None and len(args.zone) != 4:
        raise ConfigError("--zone takes LEFT,RIGHT,BOTTOM,TOP")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = apply_config(args)
        _validate(args)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ZoneModelError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FitError as exc:
        print(f"fit error: {exc}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
