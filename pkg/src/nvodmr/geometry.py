"""Crystal axes, coil-to-crystal field transformation and defect-frame fields.

Lab frame: x = coil 1, y = coil 2 (nominally along [110]), z = main coil
(nominally along alpha).  The crystal is rotated from the lab by
R = Rz(theta) Ry(phi); a lab vector v therefore has nominal-lab components
R^-1 v once the misalignment is applied.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from math import radians

import numpy as np

from .constants import PHI_MIS_DEG, THETA_MIS_DEG

_RAW_AXES = {
    "alpha": (1.0, -1.0, -1.0),
    "beta": (-1.0, 1.0, -1.0),
    "gamma": (-1.0, -1.0, 1.0),
    "delta": (1.0, 1.0, 1.0),
}
ORIENTATIONS = tuple(_RAW_AXES)
AXES = {k: np.array(v) / np.sqrt(3.0) for k, v in _RAW_AXES.items()}
N110 = np.array([1.0, 1.0, 0.0]) / np.sqrt(2.0)

# nominal lab axes in cubic crystal coordinates (columns x, y, z)
LAB_TO_CRYSTAL = np.column_stack([np.cross(N110, AXES["alpha"]), N110, AXES["alpha"]])


def crystal_axis(name: str) -> np.ndarray:
    try:
        return AXES[name]
    except KeyError:
        raise ValueError(f"unknown orientation {name!r}; expected one of {ORIENTATIONS}") from None


@dataclass(frozen=True)
class FieldConfiguration:
    """Coil fields in tesla and misalignment angles in radians."""

    b_main: float = 0.0
    b_coil1: float = 0.0
    b_coil2: float = 0.0
    theta_mis: float = radians(THETA_MIS_DEG)
    phi_mis: float = radians(PHI_MIS_DEG)

    def __post_init__(self):
        for name in ("theta_mis", "phi_mis"):
            if not -np.pi / 2 < getattr(self, name) < np.pi / 2:
                raise ValueError(f"{name} must lie in (-pi/2, pi/2)")

    def with_fields(self, **kw) -> "FieldConfiguration":
        return replace(self, **kw)


def misalignment_rotation(theta: float, phi: float) -> np.ndarray:
    """R = Rz(theta) @ Ry(phi)."""
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(phi), np.sin(phi)
    rz = np.array([[ct, -st, 0.0], [st, ct, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    return rz @ ry


def lab_field_vector(cfg: FieldConfiguration) -> np.ndarray:
    """Total field (tesla) on the cubic crystal axes."""
    return lab_field_vectors(cfg.b_coil1, cfg.b_coil2, cfg.b_main, cfg.theta_mis, cfg.phi_mis)[0]


def lab_field_vectors(b_coil1, b_coil2, b_main, theta, phi) -> np.ndarray:
    """Vectorised form: broadcast coil fields, return (m, 3) crystal vectors."""
    v = np.stack(np.broadcast_arrays(
        np.atleast_1d(b_coil1), np.atleast_1d(b_coil2), np.atleast_1d(b_main)
    ), axis=-1).astype(np.float64)
    m = LAB_TO_CRYSTAL @ misalignment_rotation(theta, phi).T
    return v @ m.T


def crystal_to_lab(b_crystal, theta: float, phi: float) -> np.ndarray:
    """Inverse of ``lab_field_vectors``: crystal vector -> (coil1, coil2, main)."""
    m = LAB_TO_CRYSTAL @ misalignment_rotation(theta, phi).T
    return np.asarray(b_crystal) @ m


def compensate_misalignment(b_main: float, cfg: FieldConfiguration) -> tuple[float, float]:
    """Side-coil fields that make the total field parallel to alpha.

    Solves the 2x2 system that zeroes the field components transverse to
    alpha; the resulting magnitude is b_main / cos(tilt) >= b_main.
    """
    if max(abs(cfg.theta_mis), abs(cfg.phi_mis)) >= radians(30.0):
        raise ValueError("misalignment angles must be below 30 degrees")
    m = LAB_TO_CRYSTAL @ misalignment_rotation(cfg.theta_mis, cfg.phi_mis).T
    transverse = LAB_TO_CRYSTAL[:, :2].T @ m  # rows: crystal-frame x, y components
    a = transverse[:, :2]
    rhs = -transverse[:, 2] * b_main
    if abs(np.linalg.det(a)) < 1e-12:
        raise ValueError("side coils cannot compensate: coil axes coplanar with alpha")
    b1, b2 = np.linalg.solve(a, rhs)
    return float(b1), float(b2)


def defect_frame_field(b_crystal, axis) -> tuple[float, float, float]:
    """(b_par, b_perp, psi) of a crystal-frame field relative to a defect axis."""
    b_par, b_perp = defect_components(np.asarray(b_crystal)[None], axis)
    b_par, b_perp = float(b_par[0]), float(b_perp[0])
    return b_par, b_perp, float(np.arctan2(b_perp, b_par))


def defect_components(b_crystal: np.ndarray, axis) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised (b_par, b_perp) for an (m, 3) stack of crystal-frame fields."""
    axis = np.asarray(axis, dtype=np.float64)
    if abs(np.linalg.norm(axis) - 1.0) > 1e-12:
        raise ValueError("axis must be a unit vector")
    b = np.asarray(b_crystal, dtype=np.float64)
    b_par = b @ axis
    rest = b - b_par[:, None] * axis
    return b_par, np.sqrt(np.einsum("ij,ij->i", rest, rest))


def defect_frame_vectors(b_crystal: np.ndarray, axis) -> np.ndarray:
    """Defect-frame field vectors (b_perp, 0, b_par), x̂ in the (axis, B) plane."""
    b_par, b_perp = defect_components(b_crystal, axis)
    return np.column_stack([b_perp, np.zeros_like(b_par), b_par])


def angle_between(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    # atan2 form keeps precision at small angles
    return float(np.arctan2(np.linalg.norm(np.cross(u, v)), np.dot(u, v)))
