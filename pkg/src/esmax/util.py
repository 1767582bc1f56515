"""Small shared helpers: worker-count control, log-log slope fits, rotations."""
from __future__ import annotations

import os

import numpy as np


def worker_count() -> int:
    """Number of workers for FFT calls; capped by the ESMAX_THREADS env var."""
    cap = os.environ.get("ESMAX_THREADS")
    avail = os.cpu_count() or 1
    if cap is None:
        return avail
    try:
        return max(1, min(avail, int(cap)))
    except ValueError:
        return avail


def apply_thread_cap() -> None:
    """Cap BLAS/LAPACK pools to ESMAX_THREADS where threadpoolctl is available."""
    cap = os.environ.get("ESMAX_THREADS")
    if cap is None:
        return
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limits=max(1, int(cap)))
    except (ImportError, ValueError):
        pass


def loglog_slope(x, y) -> float:
    """Least-squares slope of log(y) against log(x)."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish random rotation matrix via QR with sign fix."""
    m = rng.standard_normal((3, 3))
    q, r = np.linalg.qr(m)
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """Rotation by `angle` about the (normalized) 3-vector `axis`."""
    u = np.asarray(axis, dtype=float)
    u = u / np.linalg.norm(u)
    c, s = np.cos(angle), np.sin(angle)
    ux = np.array([[0, -u[2], u[1]], [u[2], 0, -u[0]], [-u[1], u[0], 0]])
    return c * np.eye(3) + s * ux + (1 - c) * np.outer(u, u)
