"""Physical constants and the reference operating point."""

from math import pi

from scipy import constants as _sc

TWO_PI = 2 * pi
C_LIGHT = _sc.c
HBAR = _sc.hbar
K_B = _sc.k
MU_B = _sc.physical_constants["Bohr magneton"][0]
AMU = _sc.physical_constants["atomic mass constant"][0]
MASS_YB171 = 170.9363315 * AMU

# single-module atom-cavity parameters (angular frequencies in rad/s)
G_MAX = TWO_PI * 520e3
KAPPA = TWO_PI * 1.04e6
GAMMA = TWO_PI * 418e3
GAMMA3 = TWO_PI * 182e3
R_BR = 0.64

# cavity geometry
WAVELENGTH = 1389e-9
WAIST = 10e-6
ROUND_TRIP = 6.96e-2
TWIST_DEG = 11.0
OPENING_DEG = 11.0

# sequence
T_MOVE = 100e-6
T_INIT = 6e-6
T_ENT_MEAN = 1.09e-6
P_SUC = 0.125
N_SITES = 204
SPACING = 2.5e-6
THRESHOLD = 0.9

# errors
TAU_3P0 = 3.0
R_DARK = 10.0
TEMPERATURE = 10e-6
