"""Deep-unfolded PGD: I layers, each with its own learned (lam_i, eta_i).

Layer i computes exactly one PGD iteration with step ``eta_i`` and prox
threshold ``lam_i * eta_i``. Gradients of a scalar cost of the last iterate
with respect to every ``lam_i`` and ``eta_i`` are obtained by a reverse
sweep over a recorded tape of per-layer intermediates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import SystemConfig
from .errors import ConfigError, DataFormatError, DimensionError, DivergenceError, TapeMismatchError
from .pgd import _Operator, _layer, _as_batch_scalar

FORMAT_VERSION = 1
DEFAULT_LAYERS = 20
DEFAULT_LAMBDA = 1 / 15


def marchenko_pastur_bound(K, M):
    return float((np.sqrt(K) + np.sqrt(M)) ** 2)


@dataclass(frozen=True)
class LayerParams:
    lam: float
    eta: float


class UnfoldedNetwork:
    """Per-layer shrinkage weights and step sizes for a fixed (K, M)."""

    def __init__(self, K, M, lambdas, etas):
        lambdas = np.array(lambdas, dtype=float)
        etas = np.array(etas, dtype=float)
        if lambdas.ndim != 1 or lambdas.shape != etas.shape or lambdas.size < 1:
            raise ConfigError("need matching 1-D lambda and eta arrays with at least one layer")
        self.K = int(K)
        self.M = int(M)
        self.lambdas = lambdas
        self.etas = etas
        self.mp_bound = marchenko_pastur_bound(K, M)

    @classmethod
    def initial(cls, K, M, num_layers=DEFAULT_LAYERS, lam=DEFAULT_LAMBDA):
        """Classical-PGD starting point: every layer at (lam, 1 / L_mp)."""
        eta = 1.0 / marchenko_pastur_bound(K, M)
        return cls(K, M, np.full(num_layers, lam), np.full(num_layers, eta))

    @property
    def num_layers(self):
        return self.lambdas.size

    @property
    def layers(self):
        return [LayerParams(float(l), float(e)) for l, e in zip(self.lambdas, self.etas)]

    @property
    def params(self):
        """Trainable parameters stacked as ``[lambdas, etas]``, shape (2, I)."""
        return np.stack([self.lambdas, self.etas])

    def with_params(self, theta):
        theta = np.asarray(theta, dtype=float)
        return UnfoldedNetwork(self.K, self.M, theta[0], theta[1])

    def copy(self):
        return self.with_params(self.params)

    def __eq__(self, other):
        return (isinstance(other, UnfoldedNetwork) and (self.K, self.M) == (other.K, other.M)
                and np.array_equal(self.params, other.params))

    def __repr__(self):
        return f"UnfoldedNetwork(K={self.K}, M={self.M}, layers={self.num_layers})"

    def to_dict(self):
        return {
            "version": FORMAT_VERSION,
            "K": self.K,
            "M": self.M,
            "I": self.num_layers,
            "mp_bound": self.mp_bound,
            "layers": [{"lambda": p.lam, "eta": p.eta} for p in self.layers],
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            if doc["version"] != FORMAT_VERSION:
                raise DataFormatError(f"unsupported model version {doc['version']}")
            layers = doc["layers"]
            if len(layers) != doc["I"]:
                raise DataFormatError("layer count does not match I")
            return cls(doc["K"], doc["M"], [l["lambda"] for l in layers], [l["eta"] for l in layers])
        except (KeyError, TypeError) as exc:
            raise DataFormatError(f"malformed model document: {exc}") from exc

    def save(self, path, extra=None):
        doc = self.to_dict()
        if extra:
            doc.update(extra)
        from .dataio import atomic_write_text

        atomic_write_text(path, json.dumps(doc, indent=2) + "\n")

    @classmethod
    def load(cls, path):
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: not a JSON model file") from exc
        return cls.from_dict(doc)


def project_params(net: UnfoldedNetwork) -> UnfoldedNetwork:
    """Clamp ``lam_i >= 0`` and ``eta_i`` into ``[1/(2 L_mp), 1/L_mp]``."""
    lo, hi = 0.5 / net.mp_bound, 1.0 / net.mp_bound
    return UnfoldedNetwork(net.K, net.M, np.maximum(net.lambdas, 0.0),
                           np.minimum(np.maximum(net.etas, lo), hi))


@dataclass
class ForwardTape:
    """Per-layer intermediates of one forward pass."""

    lambdas: np.ndarray
    etas: np.ndarray
    inputs: list = field(default_factory=list)
    V: list = field(default_factory=list)
    norms: list = field(default_factory=list)
    shrink: list = field(default_factory=list)

    def __len__(self):
        return len(self.inputs)

    def kink_gap(self):
        """Smallest distance between a column norm and its layer threshold."""
        return min(np.min(np.abs(n - l * e))
                   for n, l, e in zip(self.norms, self.lambdas, self.etas))


def _check_dims(net, cfg, H):
    if (net.K, net.M) != (cfg.K, cfg.M):
        raise DimensionError(f"network built for K={net.K}, M={net.M}, "
                             f"system has K={cfg.K}, M={cfg.M}")
    return cfg.check_shape(H, "H")


def forward(net: UnfoldedNetwork, H, cfg: SystemConfig, W0=None, record=True,
            keep_iterates=False):
    """Run all layers from ``W0`` (default ``conj(H)``).

    Returns ``(W_out, tape, iterates)``; ``tape`` is None unless ``record``
    and ``iterates`` (the I + 1 iterates including ``W0``) is None unless
    ``keep_iterates``.
    """
    H = _check_dims(net, cfg, H)
    W = np.conj(H) if W0 is None else cfg.check_shape(W0, "W0").astype(complex)
    op = _Operator(H, cfg)
    tape = ForwardTape(net.lambdas.copy(), net.etas.copy()) if record else None
    iterates = [W] if keep_iterates else None
    for i, (lam, eta) in enumerate(zip(net.lambdas, net.etas)):
        W_next, V, norms, shrink = _layer(W, op, lam, eta)
        if not np.all(np.isfinite(W_next)):
            raise DivergenceError(f"non-finite output at layer {i}", where=i)
        if record:
            tape.inputs.append(W)
            tape.V.append(V)
            tape.norms.append(norms)
            tape.shrink.append(shrink)
        W = W_next
        if keep_iterates:
            iterates.append(W)
    return W, tape, iterates


def backward(tape: ForwardTape, net: UnfoldedNetwork, H, cfg: SystemConfig, dW):
    """Reverse sweep through the recorded layers.

    ``dW`` is the gradient of a real cost with respect to the output,
    packed as ``dC/dRe(W) + 1j * dC/dIm(W)``. Returns ``(dlam, deta)``,
    each of length I, summed over the batch axes. At a prox kink
    (``||v_m|| == lam_i * eta_i``) the column is treated as inactive.
    """
    if len(tape) != net.num_layers or not (
            np.array_equal(tape.lambdas, net.lambdas) and np.array_equal(tape.etas, net.etas)):
        raise TapeMismatchError("tape was not recorded with this network's parameters")
    H = _check_dims(net, cfg, H)
    Wbar = np.asarray(dW, dtype=complex)
    if len(tape) and Wbar.shape != tape.V[-1].shape:
        raise TapeMismatchError(f"cost gradient shape {Wbar.shape} does not match tape "
                                f"output {tape.V[-1].shape}")
    op = _Operator(H, cfg)
    I = net.num_layers
    dlam = np.zeros(I)
    deta = np.zeros(I)
    for i in reversed(range(I)):
        lam, eta = net.lambdas[i], net.etas[i]
        V, norms, shrink = tape.V[i], tape.norms[i], tape.shrink[i]
        t = lam * eta
        active = shrink > 0
        safe = np.where(active, norms, 1.0)
        rho = np.sum((np.conj(Wbar) * V).real, axis=-2)
        coef = np.where(active, t * rho / safe ** 3, 0.0)
        Vbar = shrink[..., None, :] * Wbar + coef[..., None, :] * V
        tbar = -np.sum(np.where(active, rho / safe, 0.0))
        dlam[i] = tbar * eta
        deta[i] = tbar * lam - np.sum((np.conj(Vbar) * op.grad(tape.inputs[i])).real)
        Wbar = Vbar - _as_batch_scalar(eta) * op.gram_apply(Vbar)
    return dlam, deta
