import numpy as np
import pytest

from cluvad.frame import TimeSeriesFrame


@pytest.fixture
def make_frame():
    def build(values, names=None, start=0, step=1):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]  # single feature given as a flat list
        n, f = values.shape
        if names is None:
            names = tuple(f"f{j}" for j in range(f))
        ts = start + step * np.arange(n, dtype=np.int64)
        return TimeSeriesFrame(ts, values, tuple(names), step)

    return build
