"""Two-way coupled rigid / MPM soft-body simulation with robot controllers."""
import warnings

# numba probes TBB first and complains about old builds before falling back to OpenMP
warnings.filterwarnings("ignore", message="The TBB threading layer requires")

__version__ = "0.1.0"
