"""Wall-clock comparison of unfolded inference against fixed-length PGD."""

from __future__ import annotations

import os
import platform
import time

import numpy as np

from .core import SystemConfig
from .pgd import PgdParams, solve_pgd
from .unfolded import UnfoldedNetwork, forward


def per_channel_seconds(fn, channels, reps):
    """Median over ``reps`` of the mean per-channel time of ``fn(H)``."""
    fn(channels[0])  # warm-up
    samples = []
    for _ in range(reps):
        start = time.perf_counter()
        for H in channels:
            fn(H)
        samples.append((time.perf_counter() - start) / len(channels))
    return float(np.median(samples))


def machine_info():
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "cpu_count": os.cpu_count(),
    }


def benchmark(net: UnfoldedNetwork, channels, cfg: SystemConfig, pgd_iters=5000, reps=5,
              lam=1 / 15):
    params = PgdParams(lam=lam, eta="mp", max_iters=pgd_iters, trace_every=0)
    unfolded = per_channel_seconds(lambda H: forward(net, H, cfg, record=False), channels, reps)
    pgd = per_channel_seconds(lambda H: solve_pgd(H, cfg, params), channels, reps)
    return {
        "machine": machine_info(),
        "reps": int(reps),
        "channels": int(len(channels)),
        "layers": net.num_layers,
        "pgd_iters": int(pgd_iters),
        "unfolded_seconds_per_channel": unfolded,
        "pgd_seconds_per_channel": pgd,
        "speedup": pgd / unfolded,
    }
