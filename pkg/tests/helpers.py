"""Shared fixtures and synthetic-data generators for the test suite."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from xctrl.gmm import GaussianComponent, MixtureModel

# Fried fixture: a 3-target mixture and a low-and-away pitch whose posterior
# and target distances match the worked example to the printed precision.
FRIED_PITCH = (9.5, 18.0)
FRIED_MODEL = MixtureModel(
    (
        GaussianComponent(0.638, (9.5, 26.4), (36.0, 0.0, 36.0)),
        GaussianComponent(0.219, (-0.5, 32.75), (36.0, 0.0, 36.0)),
        GaussianComponent(0.143, (-1.83, 18.0), (36.0, 0.0, 36.0)),
    )
)
FRIED_P = (0.90, 0.01, 0.09)
FRIED_DELTA = (8.40, 17.82, 11.33)


def planted(weights, means, sds, n, rng):
    """Draw ``n`` points from an isotropic planted mixture; returns (points, labels)."""
    weights = np.asarray(weights, float)
    labels = rng.choice(len(weights), size=n, p=weights / weights.sum())
    means = np.asarray(means, float)
    sds = np.broadcast_to(np.asarray(sds, float), (len(weights),))
    pts = means[labels] + rng.standard_normal((n, 2)) * sds[labels, None]
    return pts, labels


def sample_mixture(model: MixtureModel, n: int, rng) -> np.ndarray:
    comp = rng.choice(model.k, size=n, p=model.weights)
    chol = np.linalg.cholesky(model.cov_matrices)
    return model.means[comp] + np.einsum("nij,nj->ni", chol[comp], rng.standard_normal((n, 2)))


def random_model(rng, k=None) -> MixtureModel:
    k = k or int(rng.integers(1, 7))
    w = rng.dirichlet(np.ones(k))
    means = np.column_stack([rng.uniform(-15, 15, k), rng.uniform(10, 50, k)])
    covs = []
    for _ in range(k):
        a = rng.normal(size=(2, 2)) * rng.uniform(0.5, 4)
        c = a @ a.T + 0.5 * np.eye(2)
        covs.append((c[0, 0], c[0, 1], c[1, 1]))
    return MixtureModel.from_arrays(w, means, np.array(covs))


STATCAST_HEADER = ["pitcher", "game_year", "pitch_type", "stand", "balls", "strikes",
                   "plate_x", "plate_z", "delta_run_exp"]


def write_statcast_csv(path: Path, bins: dict, rng, counts=None) -> Path:
    """Write a Statcast-style CSV (locations in feet).

    ``bins`` maps (pitcher, season, pitch_type, stand) to an (n, 2) array of
    inch locations. Counts cycle through ``counts`` (default: every count).
    """
    counts = counts or [(b, s) for b in range(4) for s in range(3)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATCAST_HEADER)
        for (pid, season, ptype, stand), pts in bins.items():
            for i, (x, z) in enumerate(np.asarray(pts, float)):
                b, s = counts[i % len(counts)]
                w.writerow([pid, season, ptype, stand, b, s, repr(float(x) / 12.0), repr(float(z) / 12.0),
                            f"{rng.normal(0, 0.1):.4f}"])
    return path


def two_target_points(n, rng, shift=(0.0, 0.0)):
    pts, _ = planted([0.6, 0.4], [[-5 + shift[0], 26 + shift[1]], [5 + shift[0], 34 + shift[1]]], 2.5, n, rng)
    return pts
