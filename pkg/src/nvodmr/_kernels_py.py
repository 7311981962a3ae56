"""Pure-numpy fallback for the compiled kernels.

Every routine works on a whole batch at once so the Python overhead is paid
per rotation, not per matrix.  Results agree with the compiled backend to
rounding; the sweep order is identical.
"""
from itertools import permutations

import numpy as np

BACKEND = "python"


def jacobi_eigh_batch(a, tol=1e-15, max_sweeps=50, want_vectors=True):
    """Cyclic Jacobi diagonalisation of a stack of Hermitian matrices.

    Parameters
    ----------
    a : (m, n, n) complex array
    tol : float
        Sweeps stop once the off-diagonal Frobenius norm of every matrix is
        below ``tol`` times its full Frobenius norm.
    max_sweeps : int

    Returns
    -------
    w : (m, n) float array, ascending
    v : (m, n, n) complex array, eigenvectors in columns (or None)
    sweeps : int, sweeps used by the slowest matrix
    """
    a = np.array(a, dtype=np.complex128, copy=True)
    if a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise ValueError("expected a stack of square matrices")
    m, n, _ = a.shape
    v = np.zeros_like(a)
    idx = np.arange(n)
    v[:, idx, idx] = 1.0
    norm2 = np.einsum("kij,kij->k", a, a.conj()).real
    thresh2 = (tol * tol) * norm2

    sweeps = 0
    for sweep in range(max_sweeps + 1):
        off = a.real ** 2 + a.imag ** 2
        off[:, idx, idx] = 0.0
        off2 = off.sum(axis=(1, 2))
        # converged matrices are left alone, as in the per-matrix compiled loop
        live = off2 > thresh2
        if not np.any(live):
            break
        if sweep == max_sweeps:
            raise RuntimeError(
                f"Jacobi eigensolver did not converge in {max_sweeps} sweeps"
            )
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                _rotate(a, v if want_vectors else None, p, q, live)

    w = a[:, idx, idx].real.copy()
    order = np.argsort(w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    if not want_vectors:
        return w, None, sweeps
    v = np.take_along_axis(v, order[:, None, :], axis=2)
    return w, v, sweeps


def _rotate(a, v, p, q, live):
    apq = a[:, p, q]
    mag = np.abs(apq)
    active = (mag > 0.0) & live
    if not np.any(active):
        return
    app = a[:, p, p].real.copy()
    aqq = a[:, q, q].real.copy()
    safe = np.where(active, mag, 1.0)
    phase = np.where(active, apq / safe, 1.0)  # e^{i phi}
    theta = (aqq - app) / (2.0 * safe)
    with np.errstate(over="ignore"):
        t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
    t = np.where(theta == 0.0, 1.0, t)
    t = np.where(active, t, 0.0)
    c = 1.0 / np.sqrt(t * t + 1.0)
    s = t * c
    ph = np.conj(phase)  # e^{-i phi}

    # columns p, q: A <- A U with U = [[c, s], [-s e^{-i phi}, c e^{-i phi}]]
    colp = a[:, :, p].copy()
    colq = a[:, :, q].copy()
    a[:, :, p] = c[:, None] * colp - (s * ph)[:, None] * colq
    a[:, :, q] = s[:, None] * colp + (c * ph)[:, None] * colq
    # rows p, q: A <- U^H A
    rowp = a[:, p, :].copy()
    rowq = a[:, q, :].copy()
    a[:, p, :] = c[:, None] * rowp - (s * phase)[:, None] * rowq
    a[:, q, :] = s[:, None] * rowp + (c * phase)[:, None] * rowq
    a[:, p, p] = (app - t * mag).astype(np.complex128)
    a[:, q, q] = (aqq + t * mag).astype(np.complex128)
    a[:, p, q] = 0.0
    a[:, q, p] = 0.0
    if v is not None:
        vp = v[:, :, p].copy()
        vq = v[:, :, q].copy()
        v[:, :, p] = c[:, None] * vp - (s * ph)[:, None] * vq
        v[:, :, q] = s[:, None] * vp + (c * ph)[:, None] * vq


def lorentzian_accumulate(out, freq_axis, line_freqs, half_width, amplitude):
    """Add ``amplitude / (1 + ((f - f0)/hw)^2)`` for one line into ``out``.

    ``out`` has shape (n_freq, n_field); ``line_freqs`` gives the line centre
    for every field column (NaN columns are skipped).
    """
    f = np.asarray(freq_axis, dtype=np.float64)[:, None]
    f0 = np.asarray(line_freqs, dtype=np.float64)[None, :]
    x = (f - f0) / half_width
    contrib = amplitude / (1.0 + x * x)
    contrib[:, np.isnan(line_freqs)] = 0.0
    out += contrib
    return out


def inverse_sixth_sums(positions, box):
    """Per-particle sum of r^-6 over all partners, minimum-image periodic cube."""
    pos = np.asarray(positions, dtype=np.float64)
    n = pos.shape[0]
    sums = np.zeros(n)
    # blocked to bound memory at O(block * n)
    block = 256
    for start in range(0, n, block):
        stop = min(start + block, n)
        d = pos[start:stop, None, :] - pos[None, :, :]
        d -= box * np.round(d / box)
        r2 = np.einsum("ijk,ijk->ij", d, d)
        rows = np.arange(start, stop)
        r2[rows - start, rows] = np.inf
        sums[start:stop] = (1.0 / (r2 * r2 * r2)).sum(axis=1)
    return sums


def track_branches(vectors):
    """Label every eigenstate of a sequence of eigenbases by branch continuity.

    Parameters
    ----------
    vectors : (k, m, n, n) complex array
        ``k`` independent sweeps of ``m`` points; eigenvectors in columns.

    Returns
    -------
    labels : (k, m, n) int array
        Basis index carried by each eigenstate.  Labels are fixed at the
        point of highest purity (the smallest dominant overlap is largest) by
        the overlap-maximising permutation, then propagated along the sweep by
        the permutation maximising the summed |<prev|cur>|^2.  Permutations are
        scored exhaustively in lexicographic order; the first maximum wins.
    """
    vectors = np.asarray(vectors, dtype=np.complex128)
    k, m, n, _ = vectors.shape
    perms = np.array(list(permutations(range(n))), dtype=np.intp)
    cols = np.arange(n)
    ov = (vectors.real ** 2 + vectors.imag ** 2)  # (k, m, basis, state)
    anchor = np.argmax(ov.max(axis=2).min(axis=2), axis=1)
    sweep = np.arange(k)

    trans = np.abs(np.einsum("skji,skjl->skil", vectors[:, :-1].conj(), vectors[:, 1:])) ** 2
    score = trans[:, :, perms, cols].sum(axis=-1)  # (k, m-1, perms)
    best = perms[np.argmax(score, axis=-1)]  # cur -> prev

    # only steps that reorder branches change the map to the first point
    to_first = np.broadcast_to(cols, (k, m, n)).copy()
    rows = sweep[:, None]
    for t in np.flatnonzero(np.any(best != cols, axis=(0, 2))) + 1:
        to_first[:, t:] = to_first[rows, t - 1, best[:, t - 1]][:, None, :]

    at_anchor = ov[sweep, anchor]  # (k, basis, state)
    start = perms[np.argmax(at_anchor[:, perms, cols].sum(axis=-1), axis=-1)]  # state -> basis
    first = np.empty((k, n), dtype=np.intp)
    first[rows, to_first[sweep, anchor]] = start
    return first[rows[:, :, None], to_first]
