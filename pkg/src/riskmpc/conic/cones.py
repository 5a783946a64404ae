"""Stand-alone Euclidean projections onto single cones."""
import numpy as np

from .. import _backend
from ..errors import InvalidProgram

_EMPTY = np.zeros(0, dtype=np.int64)


def psd_project(vec):
    """Nearest PSD matrix (Frobenius) of a scaled lower-triangular vector."""
    v = np.array(vec, dtype=np.float64).ravel()
    d = int(round((np.sqrt(8 * v.size + 1) - 1) / 2))
    if d * (d + 1) // 2 != v.size or d < 1:
        raise InvalidProgram(f"length {v.size} is not a triangular number")
    _backend.project_cones(v, 0, 0, _EMPTY, np.array([d], dtype=np.int64))
    return v


def soc_project(vec):
    """Projection onto {(t, x): ||x|| <= t}."""
    v = np.array(vec, dtype=np.float64).ravel()
    _backend.project_cones(v, 0, 0, np.array([v.size], dtype=np.int64), _EMPTY)
    return v
