# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: batched complex Jacobi, branch tracking, Lorentzian
accumulation and r^-6 sums.

Same algorithms and sweep order as ``_kernels_py``.
"""
from itertools import permutations

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor, isnan

cnp.import_array()

BACKEND = "cython"

cdef extern from "complex.h":
    double cabs(double complex) nogil
    double complex conj(double complex) nogil
    double creal(double complex) nogil
    double cimag(double complex) nogil


cdef int _jacobi_one(double complex* a, double complex* v, Py_ssize_t n,
                     bint want_vectors, double tol, int max_sweeps) noexcept nogil:
    # a, v: contiguous row-major n x n blocks
    cdef Py_ssize_t p, q, k
    cdef double norm2 = 0.0, off2, mag, app, aqq, theta, t, c, s
    cdef double complex phase, ph, xp, xq, z
    cdef int sweep
    for p in range(n * n):
        z = a[p]
        norm2 += creal(z) * creal(z) + cimag(z) * cimag(z)
    cdef double thresh2 = tol * tol * norm2
    for sweep in range(max_sweeps + 1):
        off2 = 0.0
        for p in range(n):
            for q in range(n):
                if p != q:
                    z = a[p * n + q]
                    off2 += creal(z) * creal(z) + cimag(z) * cimag(z)
        if off2 <= thresh2:
            return sweep
        if sweep == max_sweeps:
            return -1
        for p in range(n - 1):
            for q in range(p + 1, n):
                mag = cabs(a[p * n + q])
                if mag == 0.0:
                    continue
                app = creal(a[p * n + p])
                aqq = creal(a[q * n + q])
                # componentwise: a limited-range complex division would
                # square mag and underflow for subnormal elements
                z = a[p * n + q]
                phase = creal(z) / mag + (cimag(z) / mag) * 1j
                ph = conj(phase)
                theta = (aqq - app) / (2.0 * mag)
                if theta == 0.0:
                    t = 1.0
                elif theta > 0.0:
                    t = 1.0 / (theta + sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + sqrt(theta * theta + 1.0))
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    xp = a[k * n + p]
                    xq = a[k * n + q]
                    a[k * n + p] = c * xp - s * ph * xq
                    a[k * n + q] = s * xp + c * ph * xq
                for k in range(n):
                    xp = a[p * n + k]
                    xq = a[q * n + k]
                    a[p * n + k] = c * xp - s * phase * xq
                    a[q * n + k] = s * xp + c * phase * xq
                a[p * n + p] = app - t * mag
                a[q * n + q] = aqq + t * mag
                a[p * n + q] = 0.0
                a[q * n + p] = 0.0
                if want_vectors:
                    for k in range(n):
                        xp = v[k * n + p]
                        xq = v[k * n + q]
                        v[k * n + p] = c * xp - s * ph * xq
                        v[k * n + q] = s * xp + c * ph * xq
    return -1


def jacobi_eigh_batch(a, double tol=1e-15, int max_sweeps=50, bint want_vectors=True):
    """Cyclic Jacobi diagonalisation of a stack of Hermitian matrices.

    See ``_kernels_py.jacobi_eigh_batch`` for the contract.
    """
    cdef cnp.ndarray[cnp.complex128_t, ndim=3] work = np.array(a, dtype=np.complex128, order="C", copy=True)
    if work.ndim != 3 or work.shape[1] != work.shape[2]:
        raise ValueError("expected a stack of square matrices")
    cdef Py_ssize_t m = work.shape[0], n = work.shape[1], k, i
    cdef cnp.ndarray[cnp.complex128_t, ndim=3] vecs = np.zeros_like(work)
    for k in range(m):
        for i in range(n):
            vecs[k, i, i] = 1.0
    cdef double complex* wp = <double complex*> work.data
    cdef double complex* vp = <double complex*> vecs.data
    cdef int used, worst = 0
    cdef bint failed = False
    with nogil:
        for k in range(m):
            used = _jacobi_one(wp + k * n * n, vp + k * n * n, n, want_vectors, tol, max_sweeps)
            if used < 0:
                failed = True
                break
            if used > worst:
                worst = used
    if failed:
        raise RuntimeError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")
    idx = np.arange(n)
    w = work[:, idx, idx].real.copy()
    order = np.argsort(w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    if not want_vectors:
        return w, None, worst
    return w, np.take_along_axis(vecs, order[:, None, :], axis=2), worst


def lorentzian_accumulate(double[:, :] out, freq_axis, line_freqs,
                          double half_width, double amplitude):
    """Add one Lorentzian line (per-column centre) into ``out`` in place."""
    cdef double[:] f = np.ascontiguousarray(freq_axis, dtype=np.float64)
    cdef double[:] f0 = np.ascontiguousarray(line_freqs, dtype=np.float64)
    cdef Py_ssize_t nf = out.shape[0], nb = out.shape[1], i, j
    cdef double x, centre
    if f.shape[0] != nf or f0.shape[0] != nb:
        raise ValueError("axis lengths do not match the output grid")
    with nogil:
        for j in range(nb):
            centre = f0[j]
            if isnan(centre):
                continue
            for i in range(nf):
                x = (f[i] - centre) / half_width
                out[i, j] += amplitude / (1.0 + x * x)
    return np.asarray(out)


def inverse_sixth_sums(positions, double box):
    """Per-particle sum of r^-6 over all partners, minimum-image periodic cube."""
    cdef double[:, :] pos = np.ascontiguousarray(positions, dtype=np.float64)
    cdef Py_ssize_t n = pos.shape[0], i, j
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sums_arr = np.zeros(n)
    cdef double[:] sums = sums_arr
    cdef double dx, dy, dz, r2, inv, inv_box = 1.0 / box
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                dx = pos[i, 0] - pos[j, 0]
                dy = pos[i, 1] - pos[j, 1]
                dz = pos[i, 2] - pos[j, 2]
                dx = dx - box * floor(dx * inv_box + 0.5)
                dy = dy - box * floor(dy * inv_box + 0.5)
                dz = dz - box * floor(dz * inv_box + 0.5)
                r2 = dx * dx + dy * dy + dz * dz
                inv = 1.0 / (r2 * r2 * r2)
                sums[i] += inv
                sums[j] += inv
    return sums_arr


cdef inline double _abs2(double complex z) noexcept nogil:
    return creal(z) * creal(z) + cimag(z) * cimag(z)


def track_branches(vectors):
    """Branch-continuity labels; see ``_kernels_py.track_branches``."""
    cdef double complex[:, :, :, :] v = np.ascontiguousarray(vectors, dtype=np.complex128)
    cdef Py_ssize_t k = v.shape[0], m = v.shape[1], n = v.shape[2]
    cdef cnp.ndarray[cnp.intp_t, ndim=2] perm_arr = np.array(
        list(permutations(range(n))), dtype=np.intp)
    cdef cnp.intp_t[:, :] perms = perm_arr
    cdef Py_ssize_t n_perm = perm_arr.shape[0]
    cdef cnp.ndarray[cnp.intp_t, ndim=3] out = np.empty((k, m, n), dtype=np.intp)
    cdef cnp.intp_t[:, :, :] lab = out
    cdef double[:, :] ov = np.empty((n, n))
    cdef cnp.intp_t[:, :] to_first = np.empty((m, n), dtype=np.intp)
    cdef cnp.intp_t[:] first = np.empty(n, dtype=np.intp)
    cdef Py_ssize_t s, t, i, j, l, p, anchor, pick
    cdef double purity, best_purity, dom, worst, score, best_score
    cdef double complex acc
    with nogil:
        for s in range(k):
            anchor = 0
            best_purity = -1.0
            for t in range(m):
                worst = 2.0
                for l in range(n):
                    dom = 0.0
                    for j in range(n):
                        if _abs2(v[s, t, j, l]) > dom:
                            dom = _abs2(v[s, t, j, l])
                    if dom < worst:
                        worst = dom
                if worst > best_purity:
                    best_purity = worst
                    anchor = t
            for l in range(n):
                to_first[0, l] = l
            for t in range(1, m):
                for i in range(n):
                    for l in range(n):
                        acc = 0.0
                        for j in range(n):
                            acc = acc + conj(v[s, t - 1, j, i]) * v[s, t, j, l]
                        ov[i, l] = _abs2(acc)
                pick = 0
                best_score = -1.0
                for p in range(n_perm):
                    score = 0.0
                    for l in range(n):
                        score = score + ov[perms[p, l], l]
                    if score > best_score:
                        best_score = score
                        pick = p
                for l in range(n):
                    to_first[t, l] = to_first[t - 1, perms[pick, l]]
            pick = 0
            best_score = -1.0
            for p in range(n_perm):
                score = 0.0
                for l in range(n):
                    score = score + _abs2(v[s, anchor, perms[p, l], l])
                if score > best_score:
                    best_score = score
                    pick = p
            for l in range(n):
                first[to_first[anchor, l]] = perms[pick, l]
            for t in range(m):
                for l in range(n):
                    lab[s, t, l] = first[to_first[t, l]]
    return out
