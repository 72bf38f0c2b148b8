"""Datasets (HAR, synthetic vibration) and checkpoint persistence."""

from .checkpoint import load_checkpoint, save_checkpoint
from .har import (LabeledWindowSet, StandardizerStats, apply_standardizer, fit_standardizer,
                  load_har, normal_subset, relabel_for_ad)
from .synth import SynthConfig, read_split, synth_sample, synth_vibration, write_split

__all__ = [
    "LabeledWindowSet", "StandardizerStats", "SynthConfig", "apply_standardizer",
    "fit_standardizer", "load_checkpoint", "load_har", "normal_subset", "read_split",
    "relabel_for_ad", "save_checkpoint", "synth_sample", "synth_vibration", "write_split",
]
