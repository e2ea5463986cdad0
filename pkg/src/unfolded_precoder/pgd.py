"""Proximal gradient descent for the PA-consumption ZF precoder.

One iteration is

    V      = W - eta * (W H^T H^* - B H^*)
    W_next = prox_{lam * eta * ||.||_{2,1}}(V)

with the conjugate (Wirtinger) gradient and no factor 2. With that
convention the iteration is plain proximal gradient on

    lam * ||W||_{2,1} + 1/2 * ||H W^T - B||_F^2          (``pgd_objective``)

whose gradient is 1/L-Lipschitz with L the largest eigenvalue of H^T H^*.
``lagrangian`` is the unhalved form ``lam*||W||_{2,1} + ||H W^T - B||_F^2``;
the minimizer of ``pgd_objective`` at ``lam`` is the minimizer of
``lagrangian`` at ``2*lam``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .core import SystemConfig, constraint_residual, zf_precoder
from .errors import ConfigError, ConvergenceError, DivergenceError
from .metrics import column_norms, l21_norm, metrics_report

POWER_ITER_TOL = 1e-8
POWER_ITER_MAX = 10_000


def _t(A):
    return np.swapaxes(A, -1, -2)


def _as_batch_scalar(x):
    """Scalar or batch-shaped array -> broadcastable against (..., K, M)."""
    x = np.asarray(x, dtype=float)
    return x if x.ndim == 0 else x[..., None, None]


class _Operator:
    """Precomputed pieces of the gradient map for a fixed channel (stack)."""

    __slots__ = ("H", "Ht", "Hc", "B")

    def __init__(self, H, cfg: SystemConfig):
        self.H = H
        self.Ht = _t(H)
        self.Hc = np.conj(H)
        self.B = cfg.target_matrix

    def grad(self, W):
        return (W @ self.Ht - self.B) @ self.Hc

    def gram_apply(self, W):
        # W H^T H^*
        return (W @ self.Ht) @ self.Hc


def grad_f(W, H, cfg: SystemConfig):
    """Conjugate gradient ``W H^T H^* - B H^*`` of ``||H W^T - B||_F^2``."""
    return (W @ _t(H) - cfg.target_matrix) @ np.conj(H)


def _shrink_factors(norms, t):
    t = np.asarray(t, dtype=float)
    if t.ndim:
        t = t[..., None]
    denom = np.maximum(norms, t)
    safe = np.where(denom > 0, denom, 1.0)
    return np.where(denom > 0, 1.0 - t / safe, 1.0)


def prox_l21(V, t):
    """Column-wise block soft thresholding, ``v_m * (1 - t / max(||v_m||, t))``.

    Works on complex columns directly; the norm of a complex column equals
    the norm of its stacked real/imaginary parts.
    """
    if np.any(np.asarray(t) < 0):
        raise ConfigError("prox threshold must be >= 0")
    return _shrink_factors(column_norms(V), t)[..., None, :] * V


def _layer(W, op: _Operator, lam, eta):
    """One gradient + prox step. Returns (W_next, V, norms(V), shrink)."""
    eta_b = _as_batch_scalar(eta)
    V = W - eta_b * op.grad(W)
    norms = column_norms(V)
    shrink = _shrink_factors(norms, np.asarray(lam) * np.asarray(eta))
    return shrink[..., None, :] * V, V, norms, shrink


def pgd_step(W, H, cfg: SystemConfig, lam, eta):
    if np.any(np.asarray(lam) < 0) or np.any(np.asarray(eta) <= 0):
        raise ConfigError("need lam >= 0 and eta > 0")
    return _layer(W, _Operator(H, cfg), lam, eta)[0]


def lagrangian(W, H, cfg: SystemConfig, lam):
    """``lam * ||W||_{2,1} + ||H W^T - B||_F^2``."""
    R = constraint_residual(H, W, cfg)
    return lam * l21_norm(W) + np.sum(np.abs(R) ** 2, axis=(-2, -1))


def pgd_objective(W, H, cfg: SystemConfig, lam):
    """``lam * ||W||_{2,1} + 1/2 ||H W^T - B||_F^2``, the function PGD descends."""
    R = constraint_residual(H, W, cfg)
    return lam * l21_norm(W) + 0.5 * np.sum(np.abs(R) ** 2, axis=(-2, -1))


class LipschitzBound(NamedTuple):
    exact: np.ndarray
    mp: float


def largest_gram_eigenvalue(H, tol=POWER_ITER_TOL, max_iter=POWER_ITER_MAX):
    """Largest eigenvalue of ``H^T H^*`` by power iteration on the K x K Gram."""
    H = np.asarray(H)
    gram = np.conj(H) @ _t(H)  # same nonzero spectrum as H^T H^*
    K = gram.shape[-1]
    start = np.random.default_rng(0).standard_normal((K, 2)).view(np.complex128)[:, 0]
    x = np.broadcast_to(start / np.linalg.norm(start), gram.shape[:-1]).copy()
    estimate = np.zeros(gram.shape[:-2])
    for _ in range(int(max_iter)):
        y = np.einsum("...ij,...j->...i", gram, x)
        new = np.einsum("...i,...i->...", np.conj(x), y).real
        ny = np.linalg.norm(y, axis=-1)
        if np.all(ny == 0):
            return np.zeros_like(estimate)
        x = y / np.where(ny > 0, ny, 1.0)[..., None]
        done = np.abs(new - estimate) <= tol * np.abs(new)
        estimate = new
        if np.all(done | (ny == 0)):
            return estimate
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations")


def lipschitz_bound(H, cfg: SystemConfig | None = None):
    """Exact Lipschitz constant and the Marchenko-Pastur surrogate ``(sqrt K + sqrt M)^2``."""
    K, M = np.shape(H)[-2:]
    return LipschitzBound(exact=largest_gram_eigenvalue(H), mp=(np.sqrt(K) + np.sqrt(M)) ** 2)


@dataclass
class PgdParams:
    """Solver settings.

    ``eta`` is a float, ``"mp"`` for ``1 / (sqrt K + sqrt M)^2`` or
    ``"exact"`` for one over the per-channel largest eigenvalue.
    ``residual_tol = 0`` runs exactly ``max_iters`` iterations.
    ``trace_every = 0`` disables tracing.
    """

    lam: float = 1 / 15
    eta: float | str = "mp"
    max_iters: int = 20
    residual_tol: float = 0.0
    trace_every: int = 1

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("lam must be >= 0")
        if isinstance(self.eta, str):
            if self.eta not in ("mp", "exact"):
                raise ConfigError(f"unknown step-size rule {self.eta!r}")
        elif not self.eta > 0:
            raise ConfigError("eta must be > 0")
        if self.max_iters < 0:
            raise ConfigError("max_iters must be >= 0")
        if self.residual_tol < 0 or self.trace_every < 0:
            raise ConfigError("residual_tol and trace_every must be >= 0")


def resolve_step(eta, H):
    if eta == "mp":
        K, M = np.shape(H)[-2:]
        return 1.0 / (np.sqrt(K) + np.sqrt(M)) ** 2
    if eta == "exact":
        return 1.0 / largest_gram_eigenvalue(H)
    return float(eta)


@dataclass
class SolveTrace:
    """Metrics sampled along a solve; every field holds one entry per record,
    each entry shaped like the channel batch."""

    lam: float
    iterations: list = field(default_factory=list)
    lagrangian: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    pcg: list = field(default_factory=list)
    sum_rate: list = field(default_factory=list)
    active_columns: list = field(default_factory=list)

    COLUMNS = ("lagrangian", "residual", "pcg", "sum_rate", "active_columns")

    def record(self, i, H, W, cfg, zf_l21):
        if self.iterations and i <= self.iterations[-1]:
            raise ValueError("trace iterations must be strictly increasing")
        rep = metrics_report(H, W, cfg, zf_l21=zf_l21)
        self.iterations.append(int(i))
        self.lagrangian.append(lagrangian(W, H, cfg, self.lam))
        self.residual.append(rep.residual)
        self.pcg.append(rep.pcg)
        self.sum_rate.append(rep.sum_rate)
        self.active_columns.append(rep.active_columns)

    def __len__(self):
        return len(self.iterations)

    def column(self, name):
        return np.asarray(getattr(self, name))

    def mean(self, name):
        """Mean over channels of ``name`` at each record."""
        col = self.column(name)
        return col.reshape(len(self), -1).mean(axis=1)

    def mean_rows(self):
        means = {c: self.mean(c) for c in self.COLUMNS}
        return [dict(index=it, **{c: float(means[c][j]) for c in self.COLUMNS})
                for j, it in enumerate(self.iterations)]


def solve_pgd(H, cfg: SystemConfig, params: PgdParams | None = None, W0=None):
    """Run PGD from ``W0`` (default ``conj(H)``).

    Stops after ``params.max_iters`` iterations, or per channel once the
    relative change ``||W_next - W|| / max(||W||, 1e-12)`` drops below
    ``params.residual_tol``; converged channels are frozen while the rest
    of the batch continues.
    """
    params = params or PgdParams()
    H = cfg.check_shape(H, "H")
    W = np.conj(H) if W0 is None else cfg.check_shape(W0, "W0").astype(complex)
    op = _Operator(H, cfg)
    eta = resolve_step(params.eta, H)
    trace = SolveTrace(lam=params.lam)
    tracing = params.trace_every > 0
    zf_l21 = l21_norm(zf_precoder(H, cfg)) if tracing else None
    if tracing:
        trace.record(0, H, W, cfg, zf_l21)
    batch = H.shape[:-2]
    done = np.zeros(batch, dtype=bool)
    for i in range(1, params.max_iters + 1):
        W_next = _layer(W, op, params.lam, eta)[0]
        if not np.all(np.isfinite(W_next)):
            raise DivergenceError(f"non-finite iterate at iteration {i}", where=i)
        finished = False
        if params.residual_tol > 0:
            change = np.linalg.norm(W_next - W, axis=(-2, -1)) / np.maximum(
                np.linalg.norm(W, axis=(-2, -1)), 1e-12)
            W_next = np.where(done[..., None, None], W, W_next)
            done |= change < params.residual_tol
            finished = bool(np.all(done))
        W = W_next
        if tracing and (i % params.trace_every == 0 or i == params.max_iters or finished):
            trace.record(i, H, W, cfg, zf_l21)
        if finished:
            break
    return W, trace
