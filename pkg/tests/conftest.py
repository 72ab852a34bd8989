import os

# Pin thread counts before numpy is imported anywhere, so every test and
# every subprocess the tests spawn does single-threaded math. Reduction
# order then never depends on the machine, which keeps outputs
# byte-reproducible.
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")
os.environ.setdefault("MPLBACKEND", "Agg")
