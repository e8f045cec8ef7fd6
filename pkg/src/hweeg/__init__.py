"""Offline EEG handwriting decoding: synchronization, preprocessing, ICA,
epoching, a compact CNN decoder and evaluation protocols, with a synthetic
session generator for ground-truth checks."""

__version__ = "0.1.0"
