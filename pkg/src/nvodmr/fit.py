"""Ridge extraction from ODMR maps and least-squares fits of line models.

Residuals are frequency-only (the field axis is treated as exact).  The
optimiser is a bounded Nelder-Mead simplex in coordinates scaled to the unit
box, restarted from random points; the best run wins.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from math import radians
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from . import constants as const
from .geometry import FieldConfiguration
from .lines import (
    NV_PAIRS,
    LineFamily,
    SweepGrid,
    acoustic_comb,
    arc_family,
    families_by_key,
    flip_flip_line,
    fractional_lines,
    gslac_line,
    nv_frequency_table,
    nv_transitions,
)
from .spectrum import OdmrMap
from .spin import NvParameters

TIE_HZ = 1e-6


@dataclass(eq=False)
class PeakSet:
    fields: np.ndarray
    freqs: np.ndarray
    amplitudes: np.ndarray
    tags: list = field(default_factory=list)

    def __post_init__(self):
        self.fields = np.asarray(self.fields, dtype=np.float64)
        self.freqs = np.asarray(self.freqs, dtype=np.float64)
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.float64)
        if not self.tags:
            self.tags = [None] * self.fields.size
        if not (self.fields.shape == self.freqs.shape == self.amplitudes.shape) or len(self.tags) != self.fields.size:
            raise ValueError("peak arrays must have equal length")

    def __len__(self) -> int:
        return int(self.fields.size)

    @classmethod
    def from_families(cls, families: Sequence[LineFamily], fields=None, tagged=True) -> "PeakSet":
        """Noise-free peaks sampled from line families (tagged with their keys)."""
        f, y, t = [], [], []
        for fam in families:
            x = fam.fields if fields is None else np.asarray(fields, dtype=np.float64)
            v = fam.at(x)
            ok = np.isfinite(v)
            f.append(x[ok])
            y.append(v[ok])
            t += [fam.key if tagged else None] * int(ok.sum())
        f, y = np.concatenate(f), np.concatenate(y)
        return cls(f, y, np.ones_like(f), t)

    def with_noise(self, sigma_hz: float, rng) -> "PeakSet":
        return replace(self, freqs=self.freqs + rng.normal(0.0, sigma_hz, self.freqs.size), tags=list(self.tags))

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["field_T", "freq_Hz", "amplitude", "tag"])
            for b, f, a, t in zip(self.fields, self.freqs, self.amplitudes, self.tags):
                w.writerow([repr(float(b)), repr(float(f)), repr(float(a)), t or ""])
        return path

    @classmethod
    def read_csv(cls, path) -> "PeakSet":
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(
            [float(r["field_T"]) for r in rows],
            [float(r["freq_Hz"]) for r in rows],
            [float(r.get("amplitude") or 1.0) for r in rows],
            [r.get("tag") or None for r in rows],
        )


# --- peak extraction and assignment ------------------------------------------


def _vertex(ym, y0, yp) -> float:
    den = ym - 2.0 * y0 + yp
    if den == 0.0:
        return 0.0
    return float(np.clip(0.5 * (ym - yp) / den, -1.0, 1.0))


def extract_peaks(odmr: OdmrMap, threshold: float = 0.2, min_separation_bins: int = 3) -> PeakSet:
    """Column-wise local maxima above ``threshold`` x column maximum.

    Peaks closer than ``min_separation_bins`` keep only the stronger one.
    The sub-bin position comes from a three-point parabola through the
    reciprocal intensities, which is exact for an isolated Lorentzian; it
    falls back to the plain intensity parabola if a neighbour is zero.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    img = odmr.intensity
    fa = odmr.freq_axis
    out_b, out_f, out_a = [], [], []
    for j in range(img.shape[1]):
        col = img[:, j]
        cmax = col.max()
        if not cmax > 0:
            continue
        mid = col[1:-1]
        cand = np.flatnonzero((mid > col[:-2]) & (mid >= col[2:]) & (mid > threshold * cmax)) + 1
        kept: list[int] = []
        for i in sorted(cand.tolist(), key=lambda i: (-col[i], i)):
            if all(abs(i - k) >= min_separation_bins for k in kept):
                kept.append(i)
        for i in sorted(kept):
            ym, y0, yp = col[i - 1], col[i], col[i + 1]
            if ym > 0 and yp > 0:
                d = _vertex(1.0 / ym, 1.0 / y0, 1.0 / yp)
            else:
                d = _vertex(ym, y0, yp)
            step = fa[i + 1] - fa[i] if d >= 0 else fa[i] - fa[i - 1]
            out_b.append(odmr.field_axis[j])
            out_f.append(fa[i] + d * step)
            out_a.append(y0)
    return PeakSet(out_b, out_f, out_a)


def _family_matrix(families: Sequence[LineFamily], fields: np.ndarray) -> np.ndarray:
    return np.array([fam.at(fields) for fam in families]) if families else np.empty((0, fields.size))


def assign_families(
    peaks: PeakSet, families: Sequence[LineFamily], tolerance_hz: float, exclusion_hz: float = 0.0
) -> PeakSet:
    """Tag each peak with the nearest family within ``tolerance_hz``.

    A peak stays untagged when the runner-up family is no farther than the
    nearest one plus ``exclusion_hz`` (exact ties always count as ambiguous),
    which keeps peaks at line crossings out of fits.
    """
    fams = list(families)
    tags: list = [None] * len(peaks)
    if fams and len(peaks):
        pred = _family_matrix(fams, peaks.fields)
        dist = np.abs(pred - peaks.freqs[None, :])
        dist = np.where(np.isnan(dist), np.inf, dist)
        order = np.sort(dist, axis=0)
        best = np.argmin(dist, axis=0)
        margin = max(float(exclusion_hz), TIE_HZ)
        for p in range(len(peaks)):
            d1 = order[0, p]
            if not d1 <= tolerance_hz:
                continue
            if len(fams) > 1 and order[1, p] - d1 <= margin:
                continue
            tags[p] = fams[best[p]].key
    return replace(peaks, tags=tags)


def tagged_only(peaks: PeakSet) -> PeakSet:
    keep = [i for i, t in enumerate(peaks.tags) if t is not None]
    return PeakSet(peaks.fields[keep], peaks.freqs[keep], peaks.amplitudes[keep], [peaks.tags[i] for i in keep])


# --- models -------------------------------------------------------------------


class LineModel:
    """Parametrised set of line families evaluated at explicit fields.

    Subclasses define ``defaults`` (name -> value), ``bounds`` and
    ``families(params, fields)``.
    """

    defaults: dict = {}
    bounds: dict = {}

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.defaults)

    def families(self, params: Mapping[str, float], fields: np.ndarray) -> list[LineFamily]:
        raise NotImplementedError

    def frequency_matrix(self, params, fields) -> tuple[list[str], np.ndarray]:
        """(family keys, (family, field) frequencies in Hz); the fitting hot path."""
        fams = self.families(params, fields)
        return [f.key for f in fams], np.array([f.freqs for f in fams])


class NvGeometryModel(LineModel):
    """NV lines of selected orientations along a main-coil sweep.

    Free parameters: misalignment angles (deg), zero-field splitting and
    strain (Hz), side-coil fields (T) and the main-coil calibration factor.
    """

    def __init__(self, orientations=("alpha", "beta", "gamma", "delta"), pairs=NV_PAIRS,
                 compensation="none", compensate_at=38e-3, gamma_e=const.GAMMA_E, **defaults):
        self.orientations = tuple(orientations)
        self.pairs = tuple(tuple(p) for p in pairs)
        self.compensation = compensation
        self.compensate_at = compensate_at
        self.gamma_e = gamma_e
        self._keys = None
        self.defaults = {
            "theta_deg": const.THETA_MIS_DEG,
            "phi_deg": const.PHI_MIS_DEG,
            "d_hz": const.D_NV / const.TWO_PI,
            "e_hz": 0.0,
            "coil1_t": 0.0,
            "coil2_t": 0.0,
            "main_scale": 1.0,
        }
        unknown = set(defaults) - set(self.defaults)
        if unknown:
            raise ValueError(f"unknown NV model parameters {sorted(unknown)}")
        self.defaults.update(defaults)
        self.bounds = {
            "theta_deg": (-10.0, 10.0),
            "phi_deg": (-10.0, 10.0),
            "d_hz": (2.80e9, 2.94e9),
            "e_hz": (0.0, 50e6),
            "coil1_t": (-10e-3, 10e-3),
            "coil2_t": (-10e-3, 10e-3),
            "main_scale": (0.9, 1.1),
        }

    def grid(self, params, fields) -> SweepGrid:
        cfg = FieldConfiguration(
            b_coil1=params["coil1_t"], b_coil2=params["coil2_t"],
            theta_mis=radians(params["theta_deg"]), phi_mis=radians(params["phi_deg"]),
        )
        return SweepGrid.from_fields(
            fields, template=cfg, compensation=self.compensation,
            compensate_at=self.compensate_at, main_scale=params["main_scale"],
        )

    def _nv(self, params) -> NvParameters:
        return NvParameters(const.TWO_PI * params["d_hz"], const.TWO_PI * params["e_hz"], self.gamma_e)

    def families(self, params, fields):
        return nv_transitions(self.grid(params, fields), self.orientations, self._nv(params), self.pairs)

    def frequency_matrix(self, params, fields):
        if self._keys is None:
            self._keys = [f.key for f in self.families(params, fields)]
        b_lab = self.grid(params, fields).field_vectors()
        table = nv_frequency_table(b_lab, self.orientations, self._nv(params), self.pairs)
        return self._keys, table.reshape(-1, table.shape[-1])


class GslacModel(LineModel):
    """Closed-form GSLAC hyperbola plus optional flip-flip and 1/l companions."""

    def __init__(self, fractions=(), flip_flip=False, gamma_e=const.GAMMA_E, **defaults):
        self.fractions = tuple(int(l) for l in fractions)
        self.flip_flip = bool(flip_flip)
        self.gamma_e = gamma_e
        self.defaults = {"psi_deg": 0.8, "d_hz": const.D_NV / const.TWO_PI}
        self.defaults.update(defaults)
        self.bounds = {"psi_deg": (0.0, 5.0), "d_hz": (2.80e9, 2.94e9)}

    def families(self, params, fields):
        nv = NvParameters(const.TWO_PI * params["d_hz"], 0.0, self.gamma_e)
        base = gslac_line(fields, radians(params["psi_deg"]), nv)
        out = [base]
        if self.flip_flip:
            out.append(flip_flip_line(base))
        out += [fractional_lines(base, l) for l in self.fractions]
        return out


class AcousticModel(LineModel):
    def __init__(self, n_max=10, **defaults):
        self.n_max = int(n_max)
        self.defaults = {"f_a_hz": const.F_ACOUSTIC}
        self.defaults.update(defaults)
        self.bounds = {"f_a_hz": (1e6, 100e6)}

    def families(self, params, fields):
        return acoustic_comb(params["f_a_hz"], self.n_max, fields)


class ArcModel(LineModel):
    def __init__(self, ns=(1, 2, 3), **defaults):
        self.ns = tuple(int(n) for n in ns)
        self.defaults = {"f_arc_hz": const.F_ARC, "b_arc_t": const.B_ARC, "b_center_t": const.B_GSLAC}
        self.defaults.update(defaults)
        self.bounds = {"f_arc_hz": (1e6, 50e6), "b_arc_t": (0.1e-3, 5e-3), "b_center_t": (0.095, 0.11)}

    def families(self, params, fields):
        return [arc_family(params["f_arc_hz"], params["b_arc_t"], n, params["b_center_t"], fields)
                for n in self.ns]


MODELS = {"nv_geometry": NvGeometryModel, "gslac": GslacModel, "acoustic": AcousticModel, "arc": ArcModel}


# --- fitting ------------------------------------------------------------------


@dataclass
class FitProblem:
    peaks: PeakSet
    model: LineModel
    free: tuple = ()
    initial: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)

    def __post_init__(self):
        names = self.model.names
        unknown = (set(self.free) | set(self.initial) | set(self.bounds)) - set(names)
        if unknown:
            raise ValueError(f"unknown parameters {sorted(unknown)}")
        self.free = tuple(n for n in names if n in set(self.free))
        start = dict(self.model.defaults)
        start.update(self.initial)
        self.initial = start
        merged = dict(self.model.bounds)
        merged.update(self.bounds)
        self.bounds = merged
        for n in self.free:
            lo, hi = self.bounds[n]
            if not lo < hi:
                raise ValueError(f"empty bounds for {n}")
            if not lo <= self.initial[n] <= hi:
                raise ValueError(f"initial {n}={self.initial[n]} outside bounds {self.bounds[n]}")
        if len(self.peaks) < len(self.free):
            raise ValueError(
                f"under-determined: {len(self.peaks)} peaks for {len(self.free)} free parameters"
            )
        self._ufields, self._col = np.unique(self.peaks.fields, return_inverse=True)
        self._keys = None
        self._tag_rows = None

    @property
    def frozen(self) -> dict:
        return {n: n not in self.free for n in self.model.names}

    def _rows(self, params, freqs):
        keys, mat = self.model.frequency_matrix(params, self._ufields)
        keys = tuple(keys)
        if keys != self._keys:
            index = {k: i for i, k in enumerate(keys)}
            missing = sorted({t for t in self.peaks.tags if t is not None} - set(index))
            if missing:
                raise ValueError(f"peak tags not produced by the model: {missing}")
            self._tag_rows = np.array([-1 if t is None else index[t] for t in self.peaks.tags], dtype=int)
            self._keys = keys
        cols = mat[:, self._col]  # (family, peak)
        row = self._tag_rows
        untagged = row < 0
        if untagged.any():
            nearest = np.argmin(np.abs(np.nan_to_num(cols, nan=np.inf) - freqs[None, :]), axis=0)
            row = np.where(untagged, nearest, row)
        return keys, row, cols[row, np.arange(cols.shape[1])]

    def predict(self, params, freqs=None):
        """(model frequency per peak, family key per peak)."""
        freqs = self.peaks.freqs if freqs is None else freqs
        keys, row, pred = self._rows(params, freqs)
        return pred, [keys[r] for r in row]

    def residuals(self, params, freqs=None) -> np.ndarray:
        freqs = self.peaks.freqs if freqs is None else freqs
        return freqs - self._rows(params, freqs)[2]

    def loss(self, params, freqs=None) -> float:
        r = self.residuals(params, freqs)
        return float(r @ r)


@dataclass
class FitResult:
    parameters: dict
    frozen: dict
    residual_rms_hz: float
    loss: float
    initial_loss: float
    n_peaks: int
    per_family_rms_hz: dict
    converged: bool
    improved: bool
    seed: int
    restarts: list
    confidence: dict = field(default_factory=dict)

    def report(self) -> dict:
        return {
            "parameters": self.parameters,
            "frozen": self.frozen,
            "residual_rms_hz": self.residual_rms_hz,
            "n_peaks": self.n_peaks,
            "per_family_residual_rms_hz": self.per_family_rms_hz,
            "loss_hz2": self.loss,
            "initial_loss_hz2": self.initial_loss,
            "converged": self.converged,
            "improved": self.improved,
            "confidence": self.confidence,
            "seed": self.seed,
        }


def _nelder_mead(fun, u0, xatol, max_iter, step=0.05):
    k = u0.size
    simplex = np.empty((k + 1, k))
    simplex[0] = u0
    for i in range(k):
        v = u0.copy()
        v[i] = v[i] + step if v[i] + step <= 1.0 else v[i] - step
        simplex[i + 1] = v
    res = minimize(
        fun, u0, method="Nelder-Mead", bounds=[(0.0, 1.0)] * k,
        options={"xatol": xatol, "fatol": np.inf, "maxiter": max_iter,
                 "maxfev": 10 * max_iter, "initial_simplex": simplex},
    )
    return res


def fit_parameters(
    problem: FitProblem,
    seed: int = 0,
    n_restarts: int = 8,
    n_bootstrap: int = 200,
    max_iter: int = 2000,
    xatol: float = 1e-10,
) -> FitResult:
    """Minimise the summed squared frequency residual over the free parameters.

    Runs one simplex from the initial guess and ``n_restarts`` from uniform
    random points inside the bounds; returns the best.  Confidence comes from
    a residual bootstrap (each resample refit from the optimum).
    """
    free = problem.free
    lo = np.array([problem.bounds[n][0] for n in free])
    hi = np.array([problem.bounds[n][1] for n in free])
    span = hi - lo

    def unpack(u, base=problem.initial):
        p = dict(base)
        for n, v in zip(free, lo + np.clip(u, 0.0, 1.0) * span):
            p[n] = float(v)
        return p

    initial_loss = problem.loss(problem.initial)
    best_params, best_loss = dict(problem.initial), initial_loss
    runs = []
    converged = False
    if free:
        u0 = (np.array([problem.initial[n] for n in free]) - lo) / span
        seqs = np.random.SeedSequence(seed)
        rng = np.random.default_rng(seqs)
        starts = [u0] + [rng.random(len(free)) for _ in range(n_restarts)]
        for u in starts:
            res = _nelder_mead(lambda x: problem.loss(unpack(x)), u, xatol, max_iter)
            runs.append({"loss": float(res.fun), "iterations": int(res.nit), "success": bool(res.success)})
            converged |= bool(res.success)
            if res.fun < best_loss:
                best_loss, best_params = float(res.fun), unpack(res.x)
    else:
        converged = True
    improved = best_loss < initial_loss or initial_loss == 0.0 or not free
    converged = converged and improved

    resid = problem.residuals(best_params)
    _, keys = problem.predict(best_params)
    per_family = {}
    for key in sorted(set(keys)):
        sel = np.array([k == key for k in keys])
        per_family[key] = float(np.sqrt(np.mean(resid[sel] ** 2)))

    confidence = {}
    if free and n_bootstrap > 0:
        fitted = problem.peaks.freqs - resid
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        u_best = (np.array([best_params[n] for n in free]) - lo) / span
        draws = []
        for _ in range(n_bootstrap):
            fake = fitted + rng.choice(resid, size=resid.size, replace=True)
            res = _nelder_mead(lambda x: problem.loss(unpack(x, best_params), fake), u_best, xatol, max_iter)
            draws.append(lo + np.clip(res.x, 0, 1) * span)
        draws = np.array(draws)
        for i, n in enumerate(free):
            confidence[n] = {
                "std": float(draws[:, i].std(ddof=1)) if n_bootstrap > 1 else 0.0,
                "ci95": [float(np.percentile(draws[:, i], 2.5)), float(np.percentile(draws[:, i], 97.5))],
            }

    return FitResult(
        parameters=best_params,
        frozen=problem.frozen,
        residual_rms_hz=float(np.sqrt(np.mean(resid**2))) if resid.size else 0.0,
        loss=float(best_loss),
        initial_loss=float(initial_loss),
        n_peaks=len(problem.peaks),
        per_family_rms_hz=per_family,
        converged=converged,
        improved=improved,
        seed=seed,
        restarts=runs,
        confidence=confidence,
    )


def fit_untagged(
    peaks: PeakSet,
    model: LineModel,
    free: Sequence[str],
    initial: Mapping[str, float] | None = None,
    bounds: Mapping[str, tuple] | None = None,
    tolerance_hz: float = 5e6,
    exclusion_hz: float = 0.0,
    rounds: int = 2,
    **kw,
) -> tuple[FitResult, PeakSet]:
    """Assign peaks to the model's families, fit, and repeat with the fitted lines.

    Peaks that no family claims (or that sit at crossings) are dropped before
    each fit.  Returns the last fit and the tagged peaks it used.
    """
    params = dict(model.defaults)
    params.update(initial or {})
    result = None
    for _ in range(max(1, rounds)):
        fields = np.unique(peaks.fields)
        used = tagged_only(assign_families(peaks, model.families(params, fields), tolerance_hz, exclusion_hz))
        problem = FitProblem(used, model, tuple(free), params, dict(bounds or {}))
        previous, result = result, fit_parameters(problem, **kw)
        if previous is not None and previous.converged and not result.improved:
            # started at the optimum of the previous round; nothing left to gain
            result = replace(result, converged=any(r["success"] for r in result.restarts), improved=True)
        params = dict(result.parameters)
    return result, used
