"""Hypothesis strategies shared by the property tests."""

import numpy as np
from hypothesis import strategies as st

finite = dict(allow_nan=False, allow_infinity=False)


def vec3(lo=-100.0, hi=100.0):
    return st.tuples(*[st.floats(lo, hi, **finite)] * 3).map(np.array)


unit3 = vec3(-1, 1).filter(lambda v: np.linalg.norm(v) > 1e-3).map(lambda v: v / np.linalg.norm(v))

rotvec = vec3(-3.0, 3.0)


def seeds():
    return st.integers(0, 2**32 - 1)
