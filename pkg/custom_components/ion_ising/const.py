"""Consts for ion_ising integration."""

import math

DOMAIN = "ion_ising"

# Service call attributes
ATTR_CONFIG_FILE = "config_file"
ATTR_OUTPUT_DIR = "output_dir"
ATTR_HISTOGRAM_FILE = "histogram_file"
ATTR_N_IONS = "n_ions"
ATTR_N_TRAJ = "n_traj"
ATTR_SEED = "seed"
ATTR_WORKERS = "workers"
ATTR_DELIMITER = "delimiter"
ATTR_DECIMAL = "decimal"

SERVICES = ("modes", "couplings", "sweep", "breakdown", "dicke", "oracle", "fit", "synthesize", "bench")

DEFAULT_OUTPUT_DIR = "ion_ising_output"
DEFAULT_DELIMITER = ","

# Physical constants (SI)
HBAR = 1.054571817e-34
AMU = 1.66053906660e-27

# 171Yb+
YB171_MASS_AMU = 170.936323
DETECTION_WAVELENGTH = 369.5e-9
# Two Raman beams at right angles
DEFAULT_DELTA_K = math.sqrt(2) * 2 * math.pi / DETECTION_WAVELENGTH

# Trap and laser parameters of the nine-ion experiment (kHz)
DEFAULT_NU_X = 4748.0
DEFAULT_NU_Z = 1002.0
DEFAULT_OMEGA = 370.0
DEFAULT_MU_OFFSETS = {2: 63.0, 9: 30.0}
DEFAULT_MU_OFFSET = 30.0

# kHz * us -> rad
KHZ_US_TO_RAD = 2 * math.pi * 1e-3
# 1/ms -> 1/us
PER_MS_TO_PER_US = 1e-3

# Equilibrium solver
EQUILIBRIUM_TOLERANCE = 1e-10
EQUILIBRIUM_MAX_ITER = 10_000

# Coupling matrix
RESONANCE_GUARD_BAND = 1.0
ADIABATIC_MARGIN_FACTOR = 4.0

# Ramp protocol
DEFAULT_TAU_US = 80.0
DEFAULT_B0_OVER_J = 5.0
MIN_B0_OVER_J = 1.0
WARN_B0_OVER_J = 5.0
DEFAULT_N_SAMPLES = 41

# Noise model
DEFAULT_GAMMA_SE = 0.1
DEFAULT_GAMMA_DEPH = 0.3
DEFAULT_BRANCH = (1 / 3, 1 / 3, 1 / 3)

# Integrator
MAX_PHASE_PER_STEP = 0.05
JUMP_TIME_RESOLUTION = 1e-3
# RK4 step matrices are precomputed for state dimensions up to MAX_CACHED_DIMENSION,
# in blocks of STEP_BLOCK_ENTRIES matrix entries, kept while a ramp needs at most
# MAX_KEPT_STEP_ENTRIES
MAX_CACHED_DIMENSION = 16
STEP_BLOCK_ENTRIES = 2**18
MAX_KEPT_STEP_ENTRIES = 2**22
NORM_DRIFT_TOLERANCE = 1e-6

# Lindblad oracle
MAX_ORACLE_IONS = 3

# Dicke solver
MAX_DICKE_DIMENSION = 2000
MAX_EXACT_IONS = 12

# Crossover analysis
MIN_POINTS_PER_DECADE = 10

# Detection
DEFAULT_MEAN_BRIGHT = 12.0
DEFAULT_MEAN_DARK = 0.1
DEFAULT_INTENSITY_JITTER = 0.05
DEFAULT_BEAM_PROFILE = ((0.25, 0.9), (0.5, 1.0), (0.25, 0.9))
EXPOSURE_BINS = 32
JITTER_NODES = 15
MIN_HISTOGRAM_TOTAL = 100
DEFAULT_N_RESAMPLE = 400
MAX_FAILED_DRAW_FRACTION = 0.1
DEFAULT_OVERLAP_TARGET = 0.01

# Reference wall times for 10^4 trajectories on one node (s)
REFERENCE_BASELINE_SECONDS = {2: 60.0, 9: 7 * 3600.0}

# CLI exit codes
EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_NUMERICAL_ERROR = 2
EXIT_ACCEPTANCE_ERROR = 3
