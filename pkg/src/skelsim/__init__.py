"""Monte Carlo simulation of supercritical superdiffusions via the skeleton decomposition."""
import os
import warnings

# the bundled TBB is too old for numba; pick OpenMP up front instead of warning on every parallel call
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")
warnings.filterwarnings("ignore", message=".*TBB.*")

__version__ = "0.1.0"
