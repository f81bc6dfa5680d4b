"""Pitcher control metrics from Gaussian-mixture models of intended location."""

from .data import BinKey, BinnedData, CountGroup, DataError, PitchRecord, bin_pitches, ingest_csv, iqr_mask
from .gmm import EMConfig, FitError, MixtureModel, em_fit, select_k
from .intent import posterior, score_bin, score_pitch

__version__ = "0.1.0"

__all__ = [
    "BinKey", "BinnedData", "CountGroup", "DataError", "EMConfig", "FitError", "MixtureModel",
    "PitchRecord", "bin_pitches", "em_fit", "ingest_csv", "iqr_mask", "posterior", "score_bin",
    "score_pitch", "select_k",
]
