"""Ground-truth minimizers of ``pgd_objective``.

Two routes are available:

``"reduced"`` (default)
    Uses ``lam*||w|| = min_{tau > 0} lam/2 * (||w||^2 / tau + tau)``. For
    fixed per-antenna weights ``tau`` the inner problem in ``W`` is a ridge
    regression with a closed form, which leaves the smooth convex program

        Phi(tau) = 1/2 tr(B^H S^{-1} B) + lam/2 * sum(tau),
        S = I + H diag(tau) H^H / lam,          tau >= 0

    in M variables. It is solved by projected Newton with exact Hessian, and
    the precoder is recovered as ``w_m = tau_m / lam * (h_m^H S^{-1} B)^T``.
    At the optimum ``||w_m|| = tau_m``. The result is certified by the KKT
    conditions of ``pgd_objective``.

``"pgd"``
    Long-run PGD: step ``1 / L_exact``, up to 1e5 iterations, relative
    change tolerance 1e-10.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .core import SystemConfig, zf_precoder
from .errors import ConfigError, ConvergenceError
from .metrics import column_norms
from .pgd import PgdParams, grad_f, solve_pgd

NEWTON_MAX_ITER = 500
NEWTON_TOL = 1e-12
ARMIJO = 1e-4
EPS = np.finfo(float).eps


def _reduced_parts(tau, H, Hh, B, lam, hessian):
    K = H.shape[0]
    S = np.eye(K) + (H * tau) @ Hh / lam
    C = np.linalg.cholesky(S)
    Z = np.linalg.solve(C, B)
    X = np.linalg.solve(C.conj().T, Z)  # S^{-1} B
    phi = 0.5 * np.sum(np.abs(Z) ** 2) + 0.5 * lam * tau.sum()
    HX = Hh @ X  # row m: h_m^H S^{-1} B
    grad = 0.5 * lam - 0.5 / lam * np.sum(np.abs(HX) ** 2, axis=1)
    if not hessian:
        return phi, grad, None, HX
    Y = np.linalg.solve(C, H)
    Q = Y.conj().T @ Y  # H^H S^{-1} H
    P = HX @ HX.conj().T
    hess = (Q.T * P).real / lam ** 2
    return phi, grad, hess, HX


def _phi(tau, H, Hh, B, lam):
    K = H.shape[0]
    C = np.linalg.cholesky(np.eye(K) + (H * tau) @ Hh / lam)
    Z = np.linalg.solve(C, B)
    return 0.5 * np.sum(np.abs(Z) ** 2) + 0.5 * lam * tau.sum()


def _solve_reduced_one(H, cfg: SystemConfig, lam, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER):
    B = cfg.target_matrix
    Hh = H.conj().T
    tau = column_norms(zf_precoder(H, cfg))
    gtol = tol * lam
    for _ in range(max_iter):
        phi, g, hess, HX = _reduced_parts(tau, H, Hh, B, lam, hessian=True)
        pg = tau - np.maximum(tau - g, 0.0)
        pg_norm = np.max(np.abs(pg))
        if pg_norm <= gtol:
            break
        binding = (tau <= min(1e-3 * lam, pg_norm)) & (g > 0)
        free = ~binding
        d = np.where(binding, -g, 0.0)
        Hf = hess[np.ix_(free, free)]
        damping = 0.0
        while True:
            try:
                L = np.linalg.cholesky(Hf + damping * np.eye(Hf.shape[0]))
                break
            except np.linalg.LinAlgError:
                damping = max(10 * damping, 1e-12 * max(1.0, np.abs(np.diag(Hf)).max()))
        d[free] = -np.linalg.solve(L.conj().T, np.linalg.solve(L, g[free]))
        step = 1.0
        improved = False
        for _ls in range(60):
            cand = np.maximum(tau + step * d, 0.0)
            phi_c = _phi(cand, H, Hh, B, lam)
            # slack: decreases below round-off are accepted
            if phi_c <= phi + ARMIJO * (g @ (cand - tau)) + 8 * EPS * abs(phi):
                improved = True
                break
            step *= 0.5
        if not improved:
            # no representable decrease left
            break
        tau = cand
    else:
        raise ConvergenceError(f"reduced oracle did not converge in {max_iter} Newton steps")
    HX = _reduced_parts(tau, H, Hh, B, lam, hessian=False)[3]
    return (HX * (tau / lam)[:, None]).T


def kkt_residual(W, H, cfg: SystemConfig, lam):
    """Worst violation of the optimality conditions of ``pgd_objective``.

    Active column m: ``grad_m + lam * w_m / ||w_m|| = 0``; inactive column:
    ``||grad_m|| <= lam``, with ``grad = grad_f(W)``.
    """
    G = grad_f(W, H, cfg)
    n = column_norms(W)
    active = n > 0
    unit = W / np.where(active, n, 1.0)[..., None, :]
    r_active = np.linalg.norm(G + lam * unit, axis=-2)
    r_inactive = np.maximum(np.linalg.norm(G, axis=-2) - lam, 0.0)
    return np.max(np.where(active, r_active, r_inactive), axis=-1)


def oracle_solve(H, cfg: SystemConfig, lam, method="reduced", workers=1):
    """Minimizer of ``pgd_objective`` (fixed point of PGD at this ``lam``)."""
    H = cfg.check_shape(H, "H")
    if method == "pgd":
        params = PgdParams(lam=lam, eta="exact", max_iters=100_000,
                           residual_tol=1e-10, trace_every=0)
        return solve_pgd(H, cfg, params)[0]
    if method != "reduced":
        raise ConfigError(f"unknown oracle method {method!r}")
    if lam < 0:
        raise ConfigError("lam must be >= 0")
    if lam == 0:
        # PGD from conj(H) never leaves the row space of H: its limit is the min-norm ZF solution
        return zf_precoder(H, cfg)
    batch = H.shape[:-2]
    flat = H.reshape((-1,) + H.shape[-2:])

    def one(h):
        return _solve_reduced_one(h, cfg, lam)

    if workers > 1 and len(flat) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(one, flat))
    else:
        out = [one(h) for h in flat]
    return np.stack(out).reshape(batch + H.shape[-2:])
