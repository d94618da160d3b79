import os

# tiny float64 matrices: multithreaded BLAS is pure overhead and the
# training loops are specified single-threaded anyway
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")
