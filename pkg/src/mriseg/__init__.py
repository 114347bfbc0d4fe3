"""Brain MRI preprocessing and tissue segmentation toolkit.

Volumes and NIfTI I/O (:mod:`mriseg.volume`, :mod:`mriseg.nifti`), brain
extraction (:mod:`mriseg.morphology`), intensity normalization
(:mod:`mriseg.normalize`), affine registration (:mod:`mriseg.registration`),
segmentation engines (:mod:`mriseg.segmentation`), evaluation
(:mod:`mriseg.metrics`), phantoms (:mod:`mriseg.phantom`), augmentation
(:mod:`mriseg.augment`), cohort splitting (:mod:`mriseg.split`) and the
pipeline and CLI (:mod:`mriseg.pipeline`, :mod:`mriseg.cli`).
"""
from .errors import ConfigError, DataError, MrisegError, NumericalError
from .volume import BinaryMask, LabelVolume, Volume3

__version__ = "0.1.0"

__all__ = ["Volume3", "LabelVolume", "BinaryMask", "MrisegError", "ConfigError", "DataError", "NumericalError"]
