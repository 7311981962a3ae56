"""Dipolar local-field estimates and the second-to-first hyperbola strength ratio."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from . import constants as const
from .kernels import inverse_sixth_sums

CM3_TO_M3 = 1e6  # cm^-3 -> m^-3
MIN_DEFECTS = 100


@dataclass(frozen=True)
class EnsembleDensity:
    rho: float  # defects per cm^3
    spin: Fraction = Fraction(1)

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("density must be positive")

    @property
    def rho_si(self) -> float:
        return self.rho * CM3_TO_M3


class LatticeSum(NamedTuple):
    mean: float  # m^-6
    stderr: float


def r_eff(density: EnsembleDensity, coeff: float = const.R_EFF_COEFF) -> float:
    """Effective partner spacing coeff * rho^(-1/3), in metres."""
    return coeff * density.rho ** (-1.0 / 3.0) * 1e-2


def lattice_sum_samples(density: EnsembleDensity, n_defects: int, rng) -> np.ndarray:
    """Sum_j r_ij^-6 (m^-6) for every spin of one random periodic configuration."""
    if n_defects < MIN_DEFECTS:
        raise ValueError(f"box too small: need at least {MIN_DEFECTS} defects, got {n_defects}")
    box = (n_defects / density.rho_si) ** (1.0 / 3.0)
    pos = rng.random((n_defects, 3)) * box
    return inverse_sixth_sums(pos, box)


def lattice_sum_mc(
    density: EnsembleDensity, n_defects: int = 1000, seed: int = 0, n_trials: int = 1000
) -> LatticeSum:
    """Monte-Carlo mean of Sum_j r_ij^-6 over reference spins and trials.

    Defects sit uniformly at random in a periodic cube (minimum image).  Trial
    k draws from its own child of ``SeedSequence(seed)``, so the result does
    not depend on evaluation order.  The stderr is taken over trial means.
    """
    children = np.random.SeedSequence(seed).spawn(n_trials)
    trial_means = np.array([
        lattice_sum_samples(density, n_defects, np.random.default_rng(ch)).mean()
        for ch in children
    ])
    stderr = trial_means.std(ddof=1) / math.sqrt(n_trials) if n_trials > 1 else float("nan")
    return LatticeSum(float(trial_means.mean()), float(stderr))


def local_field_variance(sum_r6: float, spin=Fraction(1), gamma=const.GAMMA_E,
                         hbar=const.HBAR, mu0=const.MU0) -> float:
    """<(dB)^2>_av = pi mu0^2 hbar^2 gamma^2 S(S+1) Sum_j r^-6, in tesla^2.

    Constants are parameters so the chain can be re-run in other unit systems.
    """
    if sum_r6 < 0:
        raise ValueError("sum_r6 must be non-negative")
    s = float(spin)
    return math.pi * mu0**2 * hbar**2 * gamma**2 * s * (s + 1.0) * sum_r6


def anderson_ratio(variance: float, b_a: float) -> float:
    """R2 = (2/3) <(dB)^2> / B_a^2."""
    if not b_a > 0:
        raise ValueError("b_a must be positive")
    return (2.0 / 3.0) * variance / b_a**2


def effective_field(omega_a: float, gamma=const.GAMMA_E) -> float:
    """B_a = omega_a / gamma_e (tesla) for an angular frequency omega_a."""
    return omega_a / gamma


def dipolar_report(
    density: EnsembleDensity,
    freq_a_hz: float,
    p1_threshold: float = 0.02,
    sum_r6: float | None = None,
) -> dict:
    """Chain rho -> r_eff -> variance -> R2, in the CLI report layout."""
    reff = r_eff(density)
    s6 = reff**-6 if sum_r6 is None else sum_r6
    var = local_field_variance(s6, density.spin)
    b_a = effective_field(const.TWO_PI * freq_a_hz)
    r2 = anderson_ratio(var, b_a)
    r2_db = 10.0 * math.log10(r2) if r2 > 0 else float("-inf")
    return {
        "rho": density.rho,
        "r_eff_m": reff,
        "sum_r6": s6,
        "variance_T2": var,
        "B_a_T": b_a,
        "R2": r2,
        "R2_dB": r2_db,
        "P1": p1_threshold,
        "second_threshold": r2 * p1_threshold,
        "second_threshold_dB": 10.0 * math.log10(r2 * p1_threshold) if r2 > 0 else float("-inf"),
    }
