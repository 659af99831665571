from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedcohort import kernels as K


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 300), st.integers(1, 20), st.integers(1, 12), st.integers(0, 10_000))
def test_nearest_centroid_paths_agree(n, k, d, seed):
    rng = np.random.default_rng(seed)
    x, c = rng.standard_normal((n, d)), rng.standard_normal((k, d))
    la, da = K.nearest_centroid_numba(x, c)
    lb, db = K.nearest_centroid_numpy(x, c)
    assert np.array_equal(la, lb)
    assert np.allclose(da, db, rtol=1e-12, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 200), st.integers(1, 700), st.integers(1, 12), st.integers(0, 10_000))
def test_min_distance_paths_agree(n, m, d, seed):
    rng = np.random.default_rng(seed)
    q, r = rng.standard_normal((n, d)), rng.standard_normal((m, d))
    assert np.allclose(K.min_distance_numba(q, r), K.min_distance_numpy(q, r), rtol=1e-12, atol=1e-12)


def test_brute_force_reference():
    rng = np.random.default_rng(1)
    q, r = rng.standard_normal((30, 4)), rng.standard_normal((50, 4))
    brute = np.array([min(np.linalg.norm(a - b) for b in r) for a in q])
    for fn in (K.min_distance_numba, K.min_distance_numpy):
        assert np.allclose(fn(q, r), brute, rtol=1e-12)


def test_exact_ties_go_to_lowest_index():
    # integer coordinates make every squared distance exact
    x = np.array([[1.0, 0.0], [0.0, 0.0], [3.0, 3.0]])
    c = np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 1.0], [2.0, 2.0], [4.0, 4.0]])
    for fn in (K.nearest_centroid_numba, K.nearest_centroid_numpy):
        labels, best = fn(x, c)
        assert labels.tolist() == [0, 0, 3]
        assert best.tolist() == [1.0, 0.0, 2.0]


@pytest.mark.parametrize("flag,expected", [("1", "numpy"), ("", "numba")])
def test_disable_flag_selects_path(flag, expected):
    env = {**os.environ, "FEDCOHORT_DISABLE_NUMBA": flag}
    code = "from fedcohort import kernels as K; print(K.nearest_centroid.__name__, K.min_distance.__name__)"
    res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert res.stdout.split() == [f"nearest_centroid_{expected}", f"min_distance_{expected}"]
