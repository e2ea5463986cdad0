"""System configuration, Rayleigh channels and the classical ZF precoder.

Array conventions used throughout the package:

* a channel ``H`` has shape ``(..., K, M)`` (users x antennas),
* a precoder ``W`` has the same shape, column ``m`` holds the weights of
  antenna ``m`` for all users,
* leading axes are batch axes; every function broadcasts over them.

The constraint ``H W^T = sigma_nu * diag(sqrt(gamma))`` is written with the
matrix ``B = diag(target)``, ``target = sigma_nu * sqrt(gamma)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, SingularChannelError

# cond(H H^H) above this is treated as a singular channel
MAX_GRAM_CONDITION = 1e12


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


@dataclass(frozen=True)
class SystemConfig:
    """Dimensions and QoS targets of the downlink.

    Parameters
    ----------
    M : int
        Number of base-station antennas.
    K : int
        Number of single-antenna users, ``K <= M``.
    sigma_nu : float
        Noise standard deviation (linear).
    gamma : float or sequence of float
        Per-user SINR targets in linear scale. A scalar is broadcast to all
        users.
    alpha : float
        PA constant ``sqrt(p_max) / eta_max``.
    """

    M: int
    K: int
    sigma_nu: float = 1.0
    gamma: tuple = field(default=10.0)
    alpha: float = 1.0

    def __post_init__(self):
        if int(self.M) != self.M or int(self.K) != self.K or self.K < 1 or self.M < 1:
            raise ConfigError(f"K and M must be positive integers, got K={self.K}, M={self.M}")
        if self.K > self.M:
            raise ConfigError(f"need K <= M, got K={self.K}, M={self.M}")
        gamma = np.asarray(self.gamma, dtype=float)
        if gamma.ndim > 1 or gamma.size not in (1, self.K):
            raise ConfigError(f"gamma must be a scalar or have length K={self.K}")
        gamma = np.broadcast_to(gamma.reshape(-1) if gamma.ndim else gamma, (self.K,))
        if not np.all(np.isfinite(gamma)) or np.any(gamma <= 0):
            raise ConfigError("SINR targets must be finite and > 0")
        if not (np.isfinite(self.sigma_nu) and self.sigma_nu > 0):
            raise ConfigError("sigma_nu must be > 0")
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ConfigError("alpha must be > 0")
        object.__setattr__(self, "M", int(self.M))
        object.__setattr__(self, "K", int(self.K))
        object.__setattr__(self, "gamma", tuple(float(g) for g in gamma))

    @classmethod
    def from_db(cls, M, K, sinr_db=10.0, sigma_nu=1.0, alpha=1.0):
        gamma = db_to_linear(sinr_db)
        gamma = float(gamma) if gamma.ndim == 0 else tuple(gamma)
        return cls(M=M, K=K, sigma_nu=sigma_nu, gamma=gamma, alpha=alpha)

    @property
    def target(self):
        """Diagonal of ``B``: ``sigma_nu * sqrt(gamma_k)``."""
        return self.sigma_nu * np.sqrt(np.asarray(self.gamma))

    @property
    def target_matrix(self):
        return np.diag(self.target).astype(complex)

    @property
    def mp_bound(self):
        return (np.sqrt(self.K) + np.sqrt(self.M)) ** 2

    def check_shape(self, A, name="matrix"):
        A = np.asarray(A)
        if A.ndim < 2 or A.shape[-2:] != (self.K, self.M):
            raise DimensionError(f"{name} must have trailing shape ({self.K}, {self.M}), got {A.shape}")
        return A

    def to_dict(self):
        return {"M": self.M, "K": self.K, "sigma_nu": self.sigma_nu,
                "gamma": list(self.gamma), "alpha": self.alpha}


def generate_channel(cfg: SystemConfig, seed, n=None):
    """Draw i.i.d. CN(0, 1) Rayleigh channels.

    Real and imaginary parts are independent N(0, 1/2). ``seed`` is an int
    or a ``numpy.random.Generator``; with ``n`` given a stack of shape
    ``(n, K, M)`` is returned.
    """
    rng = np.random.default_rng(seed)
    shape = (cfg.K, cfg.M) if n is None else (int(n), cfg.K, cfg.M)
    pairs = rng.standard_normal(shape + (2,)) * np.sqrt(0.5)
    return pairs.view(np.complex128)[..., 0]


def _check_gram(gram):
    eig = np.linalg.eigvalsh(gram)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(eig[..., 0] > 0, eig[..., -1] / eig[..., 0], np.inf)
    if np.any(~(cond <= MAX_GRAM_CONDITION)):
        raise SingularChannelError(
            f"channel Gram matrix is singular (condition number {np.max(cond):.3g})")


def zf_precoder(H, cfg: SystemConfig):
    """Minimum-Frobenius-norm solution of ``H W^T = diag(target)``.

    ``W^T = H^H (H H^H)^{-1} B``.
    """
    H = cfg.check_shape(H, "H")
    gram = H @ np.conj(np.swapaxes(H, -1, -2))
    _check_gram(gram)
    B = np.broadcast_to(cfg.target_matrix, gram.shape)
    X = np.linalg.solve(gram, B)
    return np.swapaxes(X, -1, -2) @ np.conj(H)


def constraint_residual(H, W, cfg: SystemConfig):
    """``H W^T - B`` (K x K per channel)."""
    return H @ np.swapaxes(W, -1, -2) - cfg.target_matrix


def simulate_received(H, W, s, cfg: SystemConfig, seed=None, noise_std=None):
    """Received vector ``r = H W^T s + nu`` with ``nu ~ CN(0, sigma^2 I)``.

    ``noise_std`` overrides ``cfg.sigma_nu`` (e.g. 0 for a noiseless check).
    """
    H = cfg.check_shape(H, "H")
    W = cfg.check_shape(W, "W")
    s = np.asarray(s)
    if s.shape[-1:] != (cfg.K,):
        raise DimensionError(f"symbol vector must have length K={cfg.K}, got {s.shape}")
    sigma = cfg.sigma_nu if noise_std is None else float(noise_std)
    x = np.einsum("...km,...k->...m", W, s)
    r = np.einsum("...km,...m->...k", H, x)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(r.shape + (2,)).view(np.complex128)[..., 0]
    return r + sigma * np.sqrt(0.5) * noise
