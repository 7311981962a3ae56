"""Resonance-line families f(B) for NV- and P1 ODMR maps.

Frequencies leave this module in Hz; fields are the swept main-coil value in
tesla.  Internally everything is rad/s.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import jv

from . import constants as const
from .kernels import jacobi_eigh_batch, track_branches
from .geometry import (
    FieldConfiguration,
    compensate_misalignment,
    crystal_axis,
    defect_frame_vectors,
    lab_field_vectors,
)
from .spin import (
    NV_BASIS_LABELS,
    NvParameters,
    P1Parameters,
    build_nv_hamiltonian,
    build_p1_hamiltonian,
    eigh,
    format_p1_label,
    p1_product_basis,
)

TWO_PI = const.TWO_PI
CLAMP_HZ = 1e3
MIXED_OVERLAP = 0.6
NV_PAIRS = ((-1, 0), (+1, 0), (-1, +1))
KINDS = (
    "nv_single",
    "nv_multiphoton",
    "gslac_hyperbola",
    "gslac_fraction",
    "flip_flip",
    "flip_flop",
    "p1",
    "acoustic",
    "arc",
)


@dataclass(frozen=True, eq=False)
class LineFamily:
    """A labelled curve f(B).

    ``order`` carries the integer of parametrised classes (l, k or n);
    ``flags`` marks samples that were clamped or have ambiguous labels.
    """

    kind: str
    fields: np.ndarray
    freqs: np.ndarray
    orientation: str | None = None
    level_pair: tuple | None = None
    order: int | None = None
    partner: str | None = None
    weight: float = 1.0
    flags: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown line class {self.kind!r}")
        f = np.asarray(self.fields, dtype=np.float64)
        y = np.asarray(self.freqs, dtype=np.float64)
        if f.shape != y.shape:
            raise ValueError("fields and freqs must have the same shape")
        if f.size > 1 and np.any(np.diff(f) < 0):
            raise ValueError("samples must be sorted by field")
        if np.any(y < 0):
            raise ValueError("frequencies must be non-negative")
        object.__setattr__(self, "fields", f)
        object.__setattr__(self, "freqs", y)
        if self.flags is not None:
            object.__setattr__(self, "flags", np.asarray(self.flags, dtype=bool))

    @property
    def class_tag(self) -> str:
        if self.kind == "flip_flop":
            return f"flip_flop({self.partner})"
        if self.order is not None:
            return f"{self.kind}({self.order})"
        return self.kind

    @property
    def key(self) -> str:
        pair = ",".join(str(x) for x in self.level_pair) if self.level_pair else "-"
        pair = pair.replace("/", "|")
        return f"{self.class_tag}/{self.orientation or '-'}/{pair}"

    def at(self, fields) -> np.ndarray:
        """Linear interpolation of the line at arbitrary fields."""
        return np.interp(fields, self.fields, self.freqs, left=np.nan, right=np.nan)

    def with_weight(self, weight: float) -> "LineFamily":
        return replace(self, weight=float(weight))


@dataclass(frozen=True, eq=False)
class SweepGrid:
    """A main-coil sweep with side-coil settings taken from ``template``.

    ``points`` replaces the linear spacing with explicit (sorted) main-coil
    fields; fits use it to evaluate lines exactly at the measured fields.

    compensation: "none" leaves the template side coils as they are;
    "fixed" adds the side-coil fields that align the total field with alpha
    at ``compensate_at`` (coil currents then stay constant, as in a real
    sweep); "tracking" re-compensates at every point.
    """

    field_start: float
    field_stop: float
    n_field: int
    template: FieldConfiguration = FieldConfiguration()
    compensation: str = "none"
    compensate_at: float = 38e-3
    main_scale: float = 1.0
    points: np.ndarray | None = None

    @classmethod
    def from_fields(cls, fields, **kw) -> "SweepGrid":
        pts = np.asarray(fields, dtype=np.float64)
        if pts.ndim != 1 or pts.size < 2 or np.any(np.diff(pts) <= 0):
            raise ValueError("explicit sweep fields must be strictly increasing, at least two")
        return cls(float(pts[0]), float(pts[-1]), int(pts.size), points=pts, **kw)

    def __post_init__(self):
        if self.n_field < 2:
            raise ValueError("a sweep needs at least two points")
        if not self.field_stop > self.field_start:
            raise ValueError("fields must increase along the sweep")
        if self.compensation not in ("none", "fixed", "tracking"):
            raise ValueError(f"unknown compensation mode {self.compensation!r}")

    @property
    def fields(self) -> np.ndarray:
        if self.points is not None:
            return self.points
        return np.linspace(self.field_start, self.field_stop, self.n_field)

    def side_coils(self) -> tuple[np.ndarray, np.ndarray]:
        b_main = self.fields * self.main_scale
        c1 = np.full(self.n_field, self.template.b_coil1)
        c2 = np.full(self.n_field, self.template.b_coil2)
        if self.compensation == "fixed":
            d1, d2 = compensate_misalignment(self.compensate_at * self.main_scale, self.template)
            c1, c2 = c1 + d1, c2 + d2
        elif self.compensation == "tracking":
            d1, d2 = compensate_misalignment(1.0, self.template)
            c1, c2 = c1 + d1 * b_main, c2 + d2 * b_main
        return c1, c2

    def field_vectors(self) -> np.ndarray:
        c1, c2 = self.side_coils()
        t = self.template
        return lab_field_vectors(c1, c2, self.fields * self.main_scale, t.theta_mis, t.phi_mis)


# --- NV -----------------------------------------------------------------------


def _track_labels(vectors: np.ndarray) -> np.ndarray:
    """Basis-label index of every eigenstate at every sweep point.

    ``vectors`` is (m, n, n) or a batch (k, m, n, n) of independent sweeps.
    Labels are read off by maximal overlap at the point where the
    assignment is least ambiguous, then carried along the sweep by
    eigenvector continuity, so a line never jumps between branches.
    """
    if vectors.ndim == 3:
        return track_branches(vectors[None])[0]
    return track_branches(vectors)


def nv_level_energies(b_defect: np.ndarray, params: NvParameters) -> dict:
    """Energies (rad/s) keyed by m_S label along a stack of defect-frame fields."""
    return _nv_energies_batch(np.asarray(b_defect, dtype=np.float64)[None], params)[0]


def _nv_energies_batch(b_defect: np.ndarray, params: NvParameters) -> list[dict]:
    # b_defect: (sweeps, points, 3); one eigensolve for all sweeps.  The
    # Hamiltonians are Hermitian by construction, so the check is skipped.
    k, m, _ = b_defect.shape
    w, v, _ = jacobi_eigh_batch(build_nv_hamiltonian(b_defect.reshape(k * m, 3), params))
    vals = w.reshape(k, m, 3)
    labels = _track_labels(v.reshape(k, m, 3, 3))
    # each point carries every label exactly once
    energy = {lab: np.where(labels == b, vals, 0.0).sum(axis=2) for b, lab in enumerate(NV_BASIS_LABELS)}
    return [{lab: e[s] for lab, e in energy.items()} for s in range(k)]


def nv_frequency_table(
    b_lab: np.ndarray,
    orientations: Sequence[str],
    params: NvParameters = NvParameters(),
    pairs: Sequence[tuple[int, int]] = NV_PAIRS,
) -> np.ndarray:
    """Transition frequencies (Hz) as an (orientation, pair, point) array.

    ``b_lab`` is the (m, 3) crystal-frame field along the sweep.
    """
    axes = np.array([crystal_axis(o) for o in orientations])
    b_lab = np.asarray(b_lab, dtype=np.float64)
    b_par = axes @ b_lab.T  # (orientation, point)
    b_perp = np.linalg.norm(np.cross(axes[:, None, :], b_lab[None, :, :]), axis=-1)
    b_def = np.stack([b_perp, np.zeros_like(b_par), b_par], axis=-1)
    energy = _nv_energies_batch(b_def, params)
    return np.array([[np.abs(e[i] - e[j]) for i, j in pairs] for e in energy]) / TWO_PI


def nv_transitions(
    grid: SweepGrid,
    orientation: str | Sequence[str],
    params: NvParameters = NvParameters(),
    pairs: Sequence[tuple[int, int]] = NV_PAIRS,
) -> list[LineFamily]:
    """T_v^{i,j} lines for one NV orientation (or several) along a sweep."""
    names = (orientation,) if isinstance(orientation, str) else tuple(orientation)
    table = nv_frequency_table(grid.field_vectors(), names, params, pairs)
    return [
        LineFamily("nv_single", grid.fields, table[a, b], o, tuple(pair))
        for a, o in enumerate(names)
        for b, pair in enumerate(pairs)
    ]


def nv_frequencies_at(b_crystal, orientation: str, params: NvParameters = NvParameters()):
    """All three transition frequencies (Hz) at a single crystal-frame field."""
    b_def = defect_frame_vectors(np.atleast_2d(b_crystal), crystal_axis(orientation))
    w = eigh(build_nv_hamiltonian(b_def[0], params)).eigenvalues
    return np.array([w[1] - w[0], w[2] - w[0], w[2] - w[1]]) / TWO_PI


# --- P1 -----------------------------------------------------------------------


def p1_order(upper, lower) -> int:
    """Transition order from dominant labels: 1 + |dm_I| for electron flips, 0 otherwise."""
    (ms1, mi1), (ms2, mi2) = upper, lower
    if ms1 == ms2:
        return 0
    return 1 + abs(mi1 - mi2)


def p1_levels(b_defect, params: P1Parameters):
    """Energies, labels and dominant overlaps at one defect-frame field."""
    dec = eigh(build_p1_hamiltonian(b_defect, params))
    basis, labels = p1_product_basis(b_defect, params)
    ov = np.abs(basis.conj().T @ dec.eigenvectors) ** 2
    rows, cols = linear_sum_assignment(-ov)
    by_label = {}
    for r, c in zip(rows, cols):
        by_label[labels[r]] = (dec.eigenvalues[c], ov[r, c])
    return by_label


P1_LABELS = [(Fraction(1, 2), mi) for mi in (1, 0, -1)] + [(Fraction(-1, 2), mi) for mi in (1, 0, -1)]


def p1_transitions(
    grid: SweepGrid,
    orientation: str,
    params: P1Parameters = P1Parameters(),
    max_order: int = 1,
    include_nuclear: bool = False,
) -> list[LineFamily]:
    """P1 transition lines classified by order (electron flips with |dm_I| = k-1)."""
    if max_order not in (1, 2, 3):
        raise ValueError("max_order must be 1, 2 or 3")
    b_def = defect_frame_vectors(grid.field_vectors(), crystal_axis(orientation))
    m = len(b_def)
    energy = {lab: np.empty(m) for lab in P1_LABELS}
    purity = {lab: np.empty(m) for lab in P1_LABELS}
    for k in range(m):
        levels = p1_levels(b_def[k], params)
        for lab in P1_LABELS:
            energy[lab][k], purity[lab][k] = levels[lab]
    out = []
    for a in range(len(P1_LABELS)):
        for b in range(a + 1, len(P1_LABELS)):
            la, lb = P1_LABELS[a], P1_LABELS[b]
            order = p1_order(la, lb)
            if order > max_order or (order == 0 and not include_nuclear):
                continue
            f = np.abs(energy[la] - energy[lb]) / TWO_PI
            mixed = np.minimum(purity[la], purity[lb]) < MIXED_OVERLAP
            pair = (format_p1_label(la), format_p1_label(lb))
            out.append(LineFamily("p1", grid.fields, f, orientation, pair, order=order, flags=mixed))
    return out


# --- GSLAC closed forms -------------------------------------------------------


def gslac_angular_frequency(psi, b, params: NvParameters = NvParameters()):
    """omega_a = omega_a0 sqrt(1 + eta^2) with omega_a0 = sqrt(2) D |psi| (rad/s)."""
    psi = np.asarray(psi, dtype=np.float64)
    if np.any(np.abs(psi) >= 0.2):
        raise ValueError("closed form valid for |psi| < 0.2 rad only")
    detuning = params.d_zfs - params.gamma_e * np.asarray(b, dtype=np.float64)
    w0 = np.sqrt(2.0) * params.d_zfs * np.abs(psi)
    # written as a root of a sum so psi = 0 returns the |D - gamma_e B| limit
    return np.sqrt(w0 * w0 + detuning * detuning)


def gslac_frequency(psi, b, params: NvParameters = NvParameters()):
    """Hyperbola frequency in Hz."""
    return gslac_angular_frequency(psi, b, params) / TWO_PI


def detuning_parameter(psi, b, params: NvParameters = NvParameters()):
    """eta = (D - gamma_e B) / omega_a0."""
    w0 = np.sqrt(2.0) * params.d_zfs * np.abs(psi)
    return (params.d_zfs - params.gamma_e * np.asarray(b, dtype=np.float64)) / w0


def effective_drive(psi, b, omega_la1, params: NvParameters = NvParameters()):
    """omega_t = omega_LA1 eta / sqrt(1 + eta^2) (same units as omega_la1)."""
    eta = detuning_parameter(psi, b, params)
    return omega_la1 * eta / np.sqrt(1.0 + eta * eta)


def gslac_line(fields, psi: float, params: NvParameters = NvParameters(), orientation="alpha"):
    fields = np.asarray(fields, dtype=np.float64)
    return LineFamily(
        "gslac_hyperbola", fields, gslac_frequency(psi, np.abs(fields), params), orientation, (-1, 0)
    )


# --- derived families ---------------------------------------------------------


def flip_flip_line(parent: LineFamily) -> LineFamily:
    """Double-frequency (two like spins flipping together) companion of a line."""
    if parent.kind not in ("gslac_hyperbola", "nv_single"):
        raise ValueError("flip-flip lines derive from single-photon NV lines only")
    return replace(parent, kind="flip_flip", freqs=2.0 * parent.freqs, order=None, partner=None)


def fractional_lines(parent: LineFamily, l: int) -> LineFamily:
    """Line at f/l (l-photon process or l-th drive harmonic)."""
    if l < 2:
        raise ValueError("fraction order l must be >= 2")
    kinds = {"nv_single": "nv_multiphoton", "gslac_hyperbola": "gslac_fraction"}
    if parent.kind not in kinds:
        raise ValueError(f"no fractional class for {parent.kind!r}")
    return replace(parent, kind=kinds[parent.kind], freqs=parent.freqs / l, order=int(l))


def flip_flop_lines(a: LineFamily, b: LineFamily) -> LineFamily:
    """Pointwise |f_a - f_b|; differences below 1 kHz are clamped to 0 and flagged."""
    if a.fields.shape != b.fields.shape or not np.array_equal(a.fields, b.fields):
        raise ValueError("flip-flop parents must share the same field grid")
    diff = np.abs(a.freqs - b.freqs)
    clamped = diff < CLAMP_HZ
    diff = np.where(clamped, 0.0, diff)
    return LineFamily(
        "flip_flop", a.fields, diff, a.orientation, a.level_pair, partner=b.key, flags=clamped
    )


def bloch_siegert_shift(omega_t, omega_s1, omega_la, l: int = 0, l_max: int | None = None):
    """Drive-induced shift of the l-th multiphoton resonance (rad/s).

    Sum over l' in [-l_max, l_max] without l' = l of
    omega_t^2 (J_l'(x) + J_{l'+2}(x))^2 / (2 (l - l') omega_la), x = omega_s1/omega_la.
    l = 0 is the ordinary single-photon resonance.  Raises ``RuntimeError``
    when the last ten terms still move the sum by more than 1e-12 of the
    absolute series.
    """
    if omega_la <= 0:
        raise ValueError("omega_la must be positive")
    if l_max is None:
        l_max = abs(l) + 40
    if l_max < abs(l) + 20:
        raise ValueError("l_max must be at least |l| + 20")
    x = omega_s1 / omega_la
    lp = np.arange(-l_max, l_max + 1)
    lp = lp[lp != l]
    terms = (jv(lp, x) + jv(lp + 2, x)) ** 2 / (2.0 * (l - lp) * omega_la)
    terms = omega_t**2 * terms
    total = float(np.sum(terms))
    inner = float(np.sum(terms[np.abs(lp) <= l_max - 10]))
    # relative to the absolute series so near-cancelling sums do not trip the check
    if abs(total - inner) > 1e-12 * float(np.sum(np.abs(terms))):
        raise RuntimeError(f"Bloch-Siegert sum not converged at l_max={l_max}")
    return total


def acoustic_comb(f_a: float = const.F_ACOUSTIC, n_max: int = 10, fields=(0.0, 0.2)) -> list[LineFamily]:
    """Field-independent lines at n f_a, n = 1..n_max."""
    if f_a <= 0:
        raise ValueError("f_a must be positive")
    fields = np.asarray(fields, dtype=np.float64)
    return [
        LineFamily("acoustic", fields, np.full(fields.shape, n * f_a), order=n)
        for n in range(1, n_max + 1)
    ]


def sound_speed(f_a: float = const.F_ACOUSTIC, thickness: float = const.WAFER_THICKNESS) -> float:
    """2 f_a t (m/s) for a standing wave across the wafer."""
    return 2.0 * f_a * thickness


def arc_frequency(fields, f_arc=const.F_ARC, b_arc=const.B_ARC, n=1, b_center=const.B_GSLAC):
    return f_arc * np.abs(np.tanh((np.asarray(fields) - b_center) / (n * b_arc)))


def arc_family(
    f_arc: float = const.F_ARC,
    b_arc: float = const.B_ARC,
    n: int = 1,
    b_center: float = const.B_GSLAC,
    fields: Iterable[float] | SweepGrid = None,
) -> LineFamily:
    """Empirical arc f_arc |tanh((B - B_c) / (n B_arc))| near the GSLAC."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if fields is None:
        fields = np.linspace(b_center - 10e-3, b_center + 10e-3, 401)
    elif isinstance(fields, SweepGrid):
        fields = fields.fields
    fields = np.asarray(fields, dtype=np.float64)
    return LineFamily("arc", fields, arc_frequency(fields, f_arc, b_arc, n, b_center), order=n)


def families_by_key(families: Iterable[LineFamily]) -> dict[str, LineFamily]:
    out = {}
    for fam in families:
        if fam.key in out:
            raise ValueError(f"duplicate line family {fam.key}")
        out[fam.key] = fam
    return out
