"""Depression screening from facial features: ingestion, models, attribution and evaluation."""
import os

# Prefer OpenMP for numba's parallel loops; some TBB builds are too old and warn.
os.environ.setdefault("NUMBA_THREADING_LAYER_PRIORITY", "omp tbb workqueue")

__version__ = "0.1.0"
