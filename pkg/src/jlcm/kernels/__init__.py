"""Hot numerical kernels with a compiled backend and a numpy fallback.

The Cython extension ``_ckernels`` is used when it has been built and the
environment variable ``JLCM_PURE_PYTHON`` is unset (or ``0``); otherwise the
numpy implementations in ``_pykernels`` are used.  ``BACKEND`` names the
active choice.
"""

import os

from . import _pykernels as python

NAMES = (
    "gompertz_integral",
    "gompertz_survival_terms",
    "mvn_cholesky_logdens",
    "gaussian_terms",
    "subject_gaussian_loglik",
    "log_softmax_rows",
    "sample_categorical",
)

try:
    from . import _ckernels as compiled
except ImportError:  # extension not built
    compiled = None

if compiled is not None and os.environ.get("JLCM_PURE_PYTHON", "0") in ("", "0"):
    _active = compiled
    BACKEND = "cython"
else:
    _active = python
    BACKEND = "python"

gompertz_integral = _active.gompertz_integral
gompertz_survival_terms = _active.gompertz_survival_terms
mvn_cholesky_logdens = _active.mvn_cholesky_logdens
gaussian_terms = _active.gaussian_terms
subject_gaussian_loglik = _active.subject_gaussian_loglik
log_softmax_rows = _active.log_softmax_rows
sample_categorical = _active.sample_categorical

__all__ = list(NAMES) + ["BACKEND", "python", "compiled"]
