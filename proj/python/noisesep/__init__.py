"""Noise-aware mask-based speech separation.

The model predicts one mask per speaker plus one for the background noise,
and a patch-wise contrastive objective pushes separated speech away from the
predicted noise representation.  This package wraps the C++ core: dataset
synthesis, training, separation, metrics, and finite-difference gradient
checks.
"""

from noisesep._core import (
    IoError,
    NoisesepError,
    Separator,
    evaluate,
    gradcheck,
    make_dataset,
    read_wav,
    sdr,
    si_snr,
    si_snri,
    train,
    upit_si_snr,
    write_wav,
)

__all__ = [
    "IoError",
    "NoisesepError",
    "Separator",
    "evaluate",
    "gradcheck",
    "make_dataset",
    "read_wav",
    "sdr",
    "si_snr",
    "si_snri",
    "train",
    "upit_si_snr",
    "write_wav",
]

__version__ = "1.0.0"
