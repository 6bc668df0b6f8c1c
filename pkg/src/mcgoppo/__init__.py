"""Multi-agent PPO with scheduled communication and a global-attention critic."""

import os

# single-threaded BLAS keeps reruns byte-identical; must precede numpy import
os.environ.setdefault("OMP_NUM_THREADS", "1")

__version__ = "0.1.0"
