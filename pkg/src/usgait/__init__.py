"""Ultrasound-derived knee kinematics estimation with Gaussian process regression.

Modules: ``frames`` (data model and I/O), ``features`` (kernel-mean and
temporal features), ``gait`` (strides and trajectory bands), ``gpr`` (exact
GP regression), ``experiment`` (cross-validated paradigm comparison),
``stats`` (repeated-measures ANOVA), ``synth`` (synthetic cohorts) and
``cli``.
"""

from .errors import InputError, NotPositiveDefinite, UsgaitError

__version__ = "0.1.0"

__all__ = ["InputError", "NotPositiveDefinite", "UsgaitError", "__version__"]
