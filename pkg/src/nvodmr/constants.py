"""Physical constants (CODATA 2018) and default defect parameters.

All angular frequencies are in rad/s, fields in tesla, lengths in metres.
"""
from math import pi

HBAR = 1.054571817e-34  # J s
MU0 = 1.25663706212e-6  # N A^-2
TWO_PI = 2.0 * pi

# NV- ground-state triplet
D_NV = TWO_PI * 2.87e9
GAMMA_E = TWO_PI * 28.03e9  # rad s^-1 T^-1

# P1 (substitutional 14N)
GAMMA_N = TWO_PI * 3.0766e6
Q_P1 = -TWO_PI * 3.97e6
A_P1_PAR = TWO_PI * 114e6
A_P1_PERP = TWO_PI * 81.3e6

# acoustic comb and empirical arcs
F_ACOUSTIC = 20.4e6  # Hz
WAFER_THICKNESS = 0.5e-3  # m
F_ARC = 13.9e6  # Hz
B_ARC = 0.89e-3  # T
B_GSLAC = 102.4e-3  # T, nominal arc centre

# dipolar chain
R_EFF_COEFF = 0.907
RHO_NV_TOTAL = 3.25e17  # cm^-3, all four orientations
RHO_NV = RHO_NV_TOTAL / 4.0

# sweep misalignment fit
THETA_MIS_DEG = 2.86
PHI_MIS_DEG = 1.71
