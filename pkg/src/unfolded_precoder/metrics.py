"""Transmit and PA-consumed power, SINR, sum rate and the power consumption gain."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .core import SystemConfig, constraint_residual, zf_precoder
from .errors import ZeroPowerError


def column_norms(W):
    return np.linalg.norm(W, axis=-2)


def l21_norm(W):
    """Sum over antennas (columns) of the per-antenna Euclidean norms."""
    return column_norms(W).sum(axis=-1)


def tx_power(W):
    return np.sum(np.abs(W) ** 2, axis=(-2, -1))


def consumed_power(W, alpha):
    """Class-B PA consumed power ``alpha * ||W||_{2,1}``."""
    return alpha * l21_norm(W)


def sinr_per_user(H, W, cfg: SystemConfig):
    """SINR_k = |G_kk|^2 / (sum_{j != k} |G_kj|^2 + sigma^2), ``G = H W^T``."""
    G2 = np.abs(H @ np.swapaxes(W, -1, -2)) ** 2
    signal = np.diagonal(G2, axis1=-2, axis2=-1)
    interference = G2.sum(axis=-1) - signal
    return signal / (interference + cfg.sigma_nu ** 2)


def sum_rate(sinr):
    return np.sum(np.log2(1.0 + np.asarray(sinr)), axis=-1)


def pcg(H, W_eff, cfg: SystemConfig, W_zf=None):
    """Power consumption gain of ``W_eff`` over the ZF precoder.

    Raises ZeroPowerError when ``W_eff`` consumes no power.
    """
    if W_zf is None:
        W_zf = zf_precoder(H, cfg)
    return _ratio(l21_norm(W_zf), l21_norm(W_eff))


def _ratio(zf_l21, eff_l21):
    eff_l21 = np.asarray(eff_l21)
    if np.any(eff_l21 <= 0):
        raise ZeroPowerError("PCG undefined for a precoder with zero consumed power")
    return zf_l21 / eff_l21


@dataclass
class MetricsReport:
    """Per-channel metrics; fields are scalars or arrays over the batch axes."""

    tx_power: np.ndarray
    cons_power: np.ndarray
    sinr: np.ndarray
    sum_rate: np.ndarray
    pcg: np.ndarray
    residual: np.ndarray
    active_columns: np.ndarray

    def mean(self):
        return {k: np.mean(v, axis=0) for k, v in asdict(self).items()}

    def stderr(self):
        out = {}
        for k, v in asdict(self).items():
            v = np.asarray(v)
            n = v.shape[0] if v.ndim else 1
            out[k] = np.std(v, axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(v, dtype=float)
        return out


def metrics_report(H, W, cfg: SystemConfig, W_zf=None, zf_l21=None):
    """All metrics for ``W`` on channel(s) ``H``.

    Pass ``zf_l21`` (the ZF L2,1 norms) to avoid re-solving ZF inside loops.
    A zero precoder gets ``pcg = inf`` here instead of raising, so that
    traces of collapsing iterates stay printable.
    """
    if zf_l21 is None:
        if W_zf is None:
            W_zf = zf_precoder(H, cfg)
        zf_l21 = l21_norm(W_zf)
    norms = column_norms(W)
    l21 = norms.sum(axis=-1)
    sinr = sinr_per_user(H, W, cfg)
    with np.errstate(divide="ignore"):
        gain = np.where(l21 > 0, zf_l21 / np.where(l21 > 0, l21, 1.0), np.inf)
    return MetricsReport(
        tx_power=tx_power(W),
        cons_power=cfg.alpha * l21,
        sinr=sinr,
        sum_rate=sum_rate(sinr),
        pcg=gain,
        residual=np.linalg.norm(constraint_residual(H, W, cfg), axis=(-2, -1)),
        active_columns=np.count_nonzero(norms > 0, axis=-1),
    )
