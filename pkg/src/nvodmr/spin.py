"""Spin operators, NV and P1 Hamiltonians, and Hermitian eigen-decomposition.

Matrices are in units of hbar (spin operators) or rad/s (Hamiltonians divided
by hbar).  Basis ordering is always m = +s ... -s.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import constants as const
from .kernels import jacobi_eigh_batch

HERMITIAN_RTOL = 1e-12


class SpinOperatorSet(NamedTuple):
    s: Fraction
    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray

    @property
    def splus(self) -> np.ndarray:
        return self.sx + 1j * self.sy

    @property
    def sminus(self) -> np.ndarray:
        return self.sx - 1j * self.sy

    @property
    def m_values(self) -> list[Fraction]:
        return [self.s - k for k in range(int(2 * self.s) + 1)]


class EigenDecomposition(NamedTuple):
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # columns


@dataclass(frozen=True)
class NvParameters:
    """NV- ground-state triplet; all in rad/s (gamma_e in rad/s/T)."""

    d_zfs: float = const.D_NV
    e_strain: float = 0.0
    gamma_e: float = const.GAMMA_E

    def __post_init__(self):
        if not self.d_zfs > 0:
            raise ValueError("d_zfs must be positive")
        if abs(self.e_strain) > 0.1 * self.d_zfs:
            warnings.warn("e_strain exceeds 10% of d_zfs; strain is no longer a perturbation")


@dataclass(frozen=True)
class P1Parameters:
    """Substitutional nitrogen: electron S=1/2 coupled to 14N I=1 (rad/s)."""

    gamma_e: float = const.GAMMA_E
    gamma_n: float = const.GAMMA_N
    quadrupole_q: float = const.Q_P1
    hyperfine_par: float = const.A_P1_PAR
    hyperfine_perp: float = const.A_P1_PERP

    def __post_init__(self):
        if self.hyperfine_par <= 0 or self.hyperfine_perp <= 0:
            raise ValueError("hyperfine couplings must be positive")


def spin_operators(s) -> SpinOperatorSet:
    """Angular-momentum matrices for spin ``s`` (1/2 or 1), hbar = 1."""
    s = Fraction(s).limit_denominator(2)
    if s not in (Fraction(1, 2), Fraction(1)):
        raise ValueError(f"unsupported spin {s}; expected 1/2 or 1")
    m = np.array([float(s) - k for k in range(int(2 * s) + 1)])
    sz = np.diag(m).astype(np.complex128)
    # <m+1| S+ |m> = sqrt(s(s+1) - m(m+1)); basis index k holds m = s - k
    sp = np.zeros((m.size, m.size), dtype=np.complex128)
    for k in range(1, m.size):
        sp[k - 1, k] = np.sqrt(float(s) * (float(s) + 1) - m[k] * (m[k] + 1))
    sm = sp.conj().T
    sx = (sp + sm) / 2
    sy = (sp - sm) / 2j
    return SpinOperatorSet(s, sx, sy, sz)


def kron_product(a, b) -> np.ndarray:
    """Kronecker product, first factor outermost: (a⊗b)[i*nb+k, j*nb+l] = a[i,j] b[k,l]."""
    return np.kron(np.asarray(a), np.asarray(b))


def check_hermitian(h, rtol: float = HERMITIAN_RTOL) -> np.ndarray:
    h = np.asarray(h, dtype=np.complex128)
    if h.ndim < 2 or h.shape[-1] != h.shape[-2]:
        raise ValueError("matrix must be square")
    scale = max(np.abs(h).max(initial=0.0), np.finfo(float).tiny)
    dev = np.abs(h - np.swapaxes(h, -1, -2).conj()).max(initial=0.0)
    if dev > rtol * scale:
        raise ValueError(f"matrix is not Hermitian (deviation {dev:.3g} vs scale {scale:.3g})")
    return h


_S1 = spin_operators(1)
_SHALF = spin_operators(Fraction(1, 2))
_E2 = np.eye(2, dtype=np.complex128)
_E3 = np.eye(3, dtype=np.complex128)


def build_nv_hamiltonian(b_defect, params: NvParameters = NvParameters()) -> np.ndarray:
    """NV triplet Hamiltonian / hbar (rad/s) for a defect-frame field in tesla.

    ``b_defect`` may be a single 3-vector or an (m, 3) stack, in which case an
    (m, 3, 3) stack is returned.
    """
    b = np.asarray(b_defect, dtype=np.float64)
    if not np.all(np.isfinite(b)):
        raise ValueError("field must be finite")
    s = _S1
    h0 = params.d_zfs * (s.sz @ s.sz) + params.e_strain * (
        s.splus @ s.splus + s.sminus @ s.sminus
    ) / 2
    bs = np.einsum("...i,ijk->...jk", b, np.stack([s.sx, s.sy, s.sz]))
    return h0 - params.gamma_e * bs


def build_p1_hamiltonian(b_defect, params: P1Parameters = P1Parameters()) -> np.ndarray:
    """P1 Hamiltonian / hbar on electron(1/2) ⊗ 14N(1), z along the distortion axis."""
    b = np.asarray(b_defect, dtype=np.float64)
    if not np.all(np.isfinite(b)):
        raise ValueError("field must be finite")
    e, n = _SHALF, _S1
    S = [kron_product(op, _E3) for op in (e.sx, e.sy, e.sz)]
    I = [kron_product(_E2, op) for op in (n.sx, n.sy, n.sz)]
    static = (
        params.hyperfine_perp * (S[0] @ I[0] + S[1] @ I[1])
        + params.hyperfine_par * (S[2] @ I[2])
        + params.quadrupole_q * (I[2] @ I[2] - (2.0 / 3.0) * np.eye(6))
    )
    zeeman = params.gamma_e * np.stack(S) - params.gamma_n * np.stack(I)
    return static + np.einsum("...i,ijk->...jk", b, zeeman)


def eigh(h, max_sweeps: int = 50) -> EigenDecomposition:
    """Deterministic cyclic-Jacobi eigen-decomposition of a Hermitian matrix.

    Accepts one matrix or a stack; eigenvalues ascending.  Raises
    ``ValueError`` for non-Hermitian input and ``RuntimeError`` when the sweep
    budget is exhausted.
    """
    h = check_hermitian(h)
    single = h.ndim == 2
    stack = h[None] if single else h.reshape(-1, *h.shape[-2:])
    w, v, _ = jacobi_eigh_batch(stack, max_sweeps=max_sweeps)
    if single:
        return EigenDecomposition(w[0], v[0])
    return EigenDecomposition(w.reshape(h.shape[:-1]), v.reshape(h.shape))


def eigvalsh(h, max_sweeps: int = 50) -> np.ndarray:
    """Eigenvalues only (skips eigenvector accumulation)."""
    h = check_hermitian(h)
    single = h.ndim == 2
    stack = h[None] if single else h.reshape(-1, *h.shape[-2:])
    w, _, _ = jacobi_eigh_batch(stack, max_sweeps=max_sweeps, want_vectors=False)
    return w[0] if single else w.reshape(h.shape[:-1])


class LabeledLevel(NamedTuple):
    energy: float
    label: object
    overlap: float  # |<basis|vec>|^2 of the assigned basis state


def overlap_matrix(vectors: np.ndarray, basis: np.ndarray | None = None) -> np.ndarray:
    """|<basis_a|vec_b>|^2 with basis states in columns (identity if None)."""
    if basis is None:
        return np.abs(vectors) ** 2
    return np.abs(basis.conj().T @ vectors) ** 2


def label_states(
    decomp: EigenDecomposition,
    basis_labels: Sequence,
    basis: np.ndarray | None = None,
    unique: bool = False,
) -> list[LabeledLevel]:
    """Label each eigenvector by its maximal-overlap basis state.

    Ties go to the lower basis index.  With ``unique=True`` labels form a
    permutation (maximum total overlap assignment), which is what line tracing
    needs when two eigenvectors favour the same basis state.
    """
    ov = overlap_matrix(decomp.eigenvectors, basis)
    if unique:
        rows, cols = linear_sum_assignment(-ov)
        pick = np.empty(ov.shape[1], dtype=int)
        pick[cols] = rows
    else:
        pick = np.argmax(ov, axis=0)  # first max wins
    return [
        LabeledLevel(float(decomp.eigenvalues[k]), basis_labels[pick[k]], float(ov[pick[k], k]))
        for k in range(ov.shape[1])
    ]


# NV labels follow the figures: the Sz=+1 state (energy D - gamma_e B_z) is the
# branch descending with field and is called m_S = -1.
NV_BASIS_LABELS = (-1, 0, +1)


def direction_basis(s, direction) -> np.ndarray:
    """Eigenbasis of n·S ordered m = +s ... -s (columns), n a unit 3-vector."""
    ops = spin_operators(s)
    n = np.asarray(direction, dtype=np.float64)
    n = n / np.linalg.norm(n)
    dec = eigh(n[0] * ops.sx + n[1] * ops.sy + n[2] * ops.sz)
    return dec.eigenvectors[:, ::-1]


def p1_product_basis(b_defect, params: P1Parameters = P1Parameters()):
    """High-field product basis |m_S>_B ⊗ |m_I>_n(m_S) and its labels.

    The electron is quantised along B; for each electron state the nucleus is
    quantised along sign(m_S)·(m_S A·b̂ - gamma_n B), which reduces to the
    defect axis for an aligned field, so m_I keeps its usual meaning there.
    """
    b = np.asarray(b_defect, dtype=np.float64)
    norm = np.linalg.norm(b)
    bhat = b / norm if norm > 0 else np.array([0.0, 0.0, 1.0])
    e_basis = direction_basis(Fraction(1, 2), bhat)
    a_diag = np.array([params.hyperfine_perp, params.hyperfine_perp, params.hyperfine_par])
    cols, labels = [], []
    for ke, ms in enumerate((Fraction(1, 2), Fraction(-1, 2))):
        eff = float(ms) * a_diag * bhat - params.gamma_n * b
        axis = np.sign(float(ms)) * eff
        if np.linalg.norm(axis) == 0:
            axis = np.array([0.0, 0.0, 1.0])
        n_basis = direction_basis(1, axis)
        for kn, mi in enumerate((1, 0, -1)):
            cols.append(np.kron(e_basis[:, ke], n_basis[:, kn]))
            labels.append((ms, mi))
    return np.stack(cols, axis=1), labels


def format_p1_label(label) -> str:
    ms, mi = label
    sign = "+" if ms > 0 else "-"
    return f"{sign}1/2,{mi:+d}" if mi else f"{sign}1/2,0"
