"""Input checks shared by the estimators."""

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import InputError


def _as_sequences(a, name):
    a = np.asarray(a)
    if a.ndim == 2:
        a = check_array(a, dtype=np.float64)[:, None, :]
    elif a.ndim == 3:
        a = check_array(a, dtype=np.float64, allow_nd=True)
    else:
        raise InputError(f"{name} must be 2-D (N, F) or 3-D (N, T, F), got {a.ndim}-D")
    if a.shape[1] == 0:
        raise InputError(f"{name} sequences must be non-empty")
    return a


def check_sequences(X):
    """Split ``X`` into (context, query) float arrays of shape (N, T, F), (N, J, F).

    ``X`` is either a ``(context, query)`` tuple or one array used for both
    branches. 2-D arrays are read as length-1 sequences.
    """
    if isinstance(X, tuple) and len(X) == 2:
        context, query = _as_sequences(X[0], "context"), _as_sequences(X[1], "query")
    else:
        context = _as_sequences(X, "X")
        query = context
    if context.shape[0] != query.shape[0]:
        raise InputError("context and query have different numbers of rows")
    if context.shape[2] != query.shape[2]:
        raise InputError("context and query must share the feature width")
    return context, query


def check_targets(y, n, numeric=False):
    y = np.asarray(y)
    if y.ndim != 1:
        y = y.reshape(-1)
    if y.shape[0] != n:
        raise InputError(f"X has {n} rows but y has {y.shape[0]}")
    if numeric:
        y = y.astype(np.float64)
        if not np.all(np.isfinite(y)):
            raise InputError("y contains non-finite values")
    return y
