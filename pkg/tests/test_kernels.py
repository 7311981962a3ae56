"""Compiled and pure-Python kernels must agree; the fallback is selectable."""
import os
import subprocess
import sys
from itertools import permutations

import numpy as np
import pytest

from nvodmr import _kernels_py, kernels

try:
    from nvodmr import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = [_kernels_py] + ([_compiled] if _compiled is not None else [])
needs_compiled = pytest.mark.skipif(_compiled is None, reason="compiled extension not built")


def random_hermitian(rng, m, n):
    a = rng.normal(size=(m, n, n)) + 1j * rng.normal(size=(m, n, n))
    return a + a.conj().transpose(0, 2, 1)


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.BACKEND)
@pytest.mark.parametrize("n", [2, 3, 6])
def test_jacobi_against_numpy(impl, n):
    rng = np.random.default_rng(n)
    a = random_hermitian(rng, 200, n)
    w, v, sweeps = impl.jacobi_eigh_batch(a)
    assert 0 < sweeps <= 50
    np.testing.assert_allclose(w, np.linalg.eigvalsh(a), atol=1e-12 * np.abs(a).max())
    recon = np.einsum("kij,kj,klj->kil", v, w, v.conj())
    assert np.abs(recon - a).max() <= 1e-12 * np.abs(a).max()
    w2, v2, _ = impl.jacobi_eigh_batch(a, want_vectors=False)
    assert v2 is None
    np.testing.assert_array_equal(w2, w)


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.BACKEND)
def test_jacobi_errors(impl):
    with pytest.raises(ValueError):
        impl.jacobi_eigh_batch(np.zeros((2, 3)))
    with pytest.raises(RuntimeError):
        impl.jacobi_eigh_batch(random_hermitian(np.random.default_rng(0), 1, 3), max_sweeps=0)


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.BACKEND)
def test_jacobi_subnormal_offdiagonal(impl):
    h = np.zeros((1, 3, 3), complex)
    h[0, 0, 1], h[0, 1, 2] = 4.3e-303j, 1j
    h[0] = h[0] + h[0].conj().T
    w, _, _ = impl.jacobi_eigh_batch(h)
    np.testing.assert_allclose(w[0], [-1.0, 0.0, 1.0], atol=1e-15)


@needs_compiled
def test_backends_agree():
    rng = np.random.default_rng(9)
    a = random_hermitian(rng, 500, 3)
    wp, vp, sp = _kernels_py.jacobi_eigh_batch(a)
    wc, vc, sc = _compiled.jacobi_eigh_batch(a)
    assert sp == sc
    np.testing.assert_allclose(wc, wp, rtol=0, atol=1e-13 * np.abs(a).max())
    np.testing.assert_allclose(vc, vp, atol=1e-12)

    out_p, out_c = np.zeros((50, 20)), np.zeros((50, 20))
    freq = np.linspace(0, 1, 50)
    centres = rng.random(20)
    centres[3] = np.nan
    _kernels_py.lorentzian_accumulate(out_p, freq, centres, 0.05, 2.0)
    _compiled.lorentzian_accumulate(out_c, freq, centres, 0.05, 2.0)
    np.testing.assert_allclose(out_c, out_p, rtol=1e-14)
    assert not out_c[:, 3].any()

    pos = rng.random((300, 3)) * 5.0
    np.testing.assert_allclose(_compiled.inverse_sixth_sums(pos, 5.0), _kernels_py.inverse_sixth_sums(pos, 5.0), rtol=1e-12)

    vecs = np.linalg.eigh(random_hermitian(rng, 2 * 40, 3))[1].reshape(2, 40, 3, 3)
    np.testing.assert_array_equal(_compiled.track_branches(vecs), _kernels_py.track_branches(vecs))


def brute_track(vectors):
    """Reference tracker written out loop by loop."""
    m, n = vectors.shape[0], vectors.shape[1]
    ov = np.abs(vectors) ** 2
    purity = [ov[t].max(axis=0).min() for t in range(m)]
    anchor = int(np.argmax(purity))
    perms = list(permutations(range(n)))
    best = max(perms, key=lambda p: (sum(ov[anchor][p[s], s] for s in range(n)), -perms.index(p)))
    labels = np.empty((m, n), dtype=int)
    labels[anchor] = best

    def step(src, dst):
        t = np.abs(vectors[src].conj().T @ vectors[dst]) ** 2
        # perm maps each state at dst to its partner at src
        return max(perms, key=lambda p: (sum(t[p[s], s] for s in range(n)), -perms.index(p)))

    for t in range(anchor + 1, m):
        p = step(t - 1, t)
        labels[t] = [labels[t - 1][p[s]] for s in range(n)]
    for t in range(anchor - 1, -1, -1):
        p = step(t + 1, t)
        labels[t] = [labels[t + 1][p[s]] for s in range(n)]
    return labels


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.BACKEND)
def test_track_branches_swap(impl):
    # two states exchange their eigenvalue order midway: labels follow vectors
    e = np.eye(3, dtype=complex)
    vecs = np.stack([e] * 3 + [e[:, [1, 0, 2]]] * 3)[None]
    labels = impl.track_branches(vecs)[0]
    np.testing.assert_array_equal(labels[:3], [[0, 1, 2]] * 3)
    np.testing.assert_array_equal(labels[3:], [[1, 0, 2]] * 3)


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.BACKEND)
def test_track_branches_smooth_rotation_oracle(impl):
    # slowly rotating basis with eigenvalue reordering; compare with the loop
    # reference
    m = 30
    out = []
    for t in range(m):
        a = 0.9 * np.pi * t / (m - 1)
        r = np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1]], dtype=complex)
        out.append(r[:, [0, 1, 2]] if t < m // 2 else r[:, [1, 2, 0]])
    vecs = np.array(out)
    got = impl.track_branches(vecs[None])[0]
    np.testing.assert_array_equal(got, brute_track(vecs))


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.BACKEND)
def test_inverse_sixth_pair(impl):
    pos = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.9]])
    # minimum image: the partner is 0.1 away through the boundary
    np.testing.assert_allclose(impl.inverse_sixth_sums(pos, 1.0), [1e6, 1e6], rtol=1e-9)


def test_forced_fallback():
    env = dict(os.environ, NVODMR_PURE_PYTHON="1")
    code = "import nvodmr, numpy as np; print(nvodmr.BACKEND); print(nvodmr.eigh(np.diag([2.0, 1.0])).eigenvalues)"
    res = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env)
    assert res.returncode == 0, res.stderr
    assert res.stdout.splitlines()[0] == "python"


@needs_compiled
def test_default_backend_is_compiled():
    if os.environ.get("NVODMR_PURE_PYTHON", "") not in ("", "0"):
        pytest.skip("fallback forced by environment")
    assert kernels.BACKEND == "cython"
