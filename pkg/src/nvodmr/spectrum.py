"""2D ODMR map synthesis from line families, plus CSV / PGM / JSON export."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .kernels import lorentzian_accumulate
from .lines import LineFamily

DEFAULT_LINEWIDTH_HZ = 1e6


@dataclass(eq=False)
class OdmrMap:
    """Intensity grid; rows follow ``freq_axis`` (Hz), columns ``field_axis`` (T)."""

    field_axis: np.ndarray
    freq_axis: np.ndarray
    intensity: np.ndarray

    def __post_init__(self):
        self.field_axis = np.asarray(self.field_axis, dtype=np.float64)
        self.freq_axis = np.asarray(self.freq_axis, dtype=np.float64)
        self.intensity = np.asarray(self.intensity, dtype=np.float64)
        for name in ("field_axis", "freq_axis"):
            ax = getattr(self, name)
            if ax.ndim != 1 or ax.size < 1 or np.any(np.diff(ax) <= 0):
                raise ValueError(f"{name} must be strictly increasing")
        if self.intensity.shape != (self.freq_axis.size, self.field_axis.size):
            raise ValueError("intensity shape must be (n_freq, n_field)")
        if not np.all(np.isfinite(self.intensity)):
            raise ValueError("intensity must be finite")


def class_setting(table, fam: LineFamily, default):
    """Per-class setting; keys may be a family key, 'kind.orientation', a class tag or a kind."""
    if not isinstance(table, Mapping):
        return default if table is None else float(table)
    for key in (fam.key, f"{fam.kind}.{fam.orientation}", fam.class_tag, fam.kind):
        if key in table:
            return float(table[key])
    return default


def synthesize_map(
    families: Sequence[LineFamily],
    field_axis,
    freq_axis,
    linewidth_hz: Mapping[str, float] | float | None = None,
    amplitude: Mapping[str, float] | float | None = None,
    clip: float | None = None,
    normalize: bool = True,
) -> OdmrMap:
    """Sum of unit-peak Lorentzians (FWHM = linewidth) along every line.

    Each line contributes amplitude x visibility weight.  With ``clip`` the
    raw sum is limited to [0, clip] (a saturated colour scale); ``normalize``
    then scales the maximum to one.  ``normalize=False`` without ``clip``
    returns the linear raw sum.
    """
    field_axis = np.asarray(field_axis, dtype=np.float64)
    freq_axis = np.asarray(freq_axis, dtype=np.float64)
    out = np.zeros((freq_axis.size, field_axis.size))
    for fam in families:
        width = class_setting(linewidth_hz, fam, DEFAULT_LINEWIDTH_HZ)
        if not width > 0:
            raise ValueError("linewidths must be positive")
        amp = class_setting(amplitude, fam, 1.0) * fam.weight
        centres = np.ascontiguousarray(fam.at(field_axis))
        lorentzian_accumulate(out, freq_axis, centres, 0.5 * width, amp)
    if clip is not None:
        np.clip(out, 0.0, clip, out=out)
    if normalize:
        peak = out.max(initial=0.0)
        if peak > 0:
            out /= peak
    return OdmrMap(field_axis, freq_axis, out)


def export_map_csv(odmr: OdmrMap, path) -> Path:
    """Header row of fields (T), first column of frequencies (Hz), 9 significant digits."""
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["freq_Hz\\field_T"] + [f"{x:.9g}" for x in odmr.field_axis])
            for f, row in zip(odmr.freq_axis, odmr.intensity):
                w.writerow([f"{f:.9g}"] + [f"{x:.9g}" for x in row])
    except OSError as exc:
        raise OSError(f"cannot write map CSV {path}: {exc}") from exc
    return path


def read_map_csv(path) -> OdmrMap:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise OSError(f"cannot read map CSV {path}: {exc}") from exc
    fields = np.array([float(x) for x in rows[0][1:]])
    body = np.array([[float(x) for x in r] for r in rows[1:]])
    return OdmrMap(fields, body[:, 0], body[:, 1:])


def export_map_pgm(odmr: OdmrMap, path) -> Path:
    """Binary 16-bit PGM (P5, big-endian); top row is the highest frequency."""
    path = Path(path)
    img = np.clip(odmr.intensity, 0.0, 1.0)[::-1]
    data = np.round(img * 65535.0).astype(">u2")
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode("ascii")
    try:
        path.write_bytes(header + data.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write PGM {path}: {exc}") from exc
    return path


def read_map_pgm(path) -> np.ndarray:
    """16-bit PGM pixels as a (rows, cols) uint16 array (top row first)."""
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    width, height = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4], dtype=">u2", count=width * height).reshape(height, width)


def export_map_sidecar(odmr: OdmrMap, path, manifest: Mapping | None = None) -> Path:
    """JSON axes metadata plus the generating manifest."""
    path = Path(path)
    meta = {
        "n_field": int(odmr.field_axis.size),
        "n_freq": int(odmr.freq_axis.size),
        "field_T": [float(odmr.field_axis[0]), float(odmr.field_axis[-1])],
        "freq_Hz": [float(odmr.freq_axis[0]), float(odmr.freq_axis[-1])],
        "rows": "frequency ascending (CSV); PGM row 0 is the highest frequency",
        "manifest": dict(manifest or {}),
    }
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path
