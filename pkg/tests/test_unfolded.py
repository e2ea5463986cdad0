import numpy as np
import pytest

from unfolded_precoder import (PgdParams, SystemConfig, UnfoldedNetwork, backward, forward,
                               generate_channel, project_params, solve_pgd, zf_precoder)
from unfolded_precoder.errors import (ConfigError, DataFormatError, DimensionError,
                                      TapeMismatchError)
from unfolded_precoder.metrics import column_norms

from conftest import crandn

FIXTURE_H = np.array([[0.8 + 0.3j, -0.5 + 1.1j, 0.2 - 0.7j, 1.4 + 0.1j],
                      [-0.6 - 0.9j, 0.3 + 0.4j, 1.2 + 0.5j, -0.1 + 0.2j]])
FIXTURE_PARAMS = ([0.5, 0.9, 5.0], [0.12, 0.05, 0.2])
# three layers from conj(H), evaluated entry by entry in plain Python; the
# last layer zeroes the fourth column
FIXTURE_OUT = np.array([
    [0.05099498842755608 - 0.006911041997617843j, -0.02165874250563967 - 0.055981124984496734j,
     0.07336905262256843 + 0.09915295314637156j, 0j],
    [-0.047816738989408886 + 0.08812604648981262j, 0.01793704501611482 - 0.037786833811238894j,
     0.3081571671379861 - 0.10207615642028935j, 0j]])


def _cost(W, C):
    # smooth real cost: weighted squared moduli plus a linear term
    return np.sum(np.abs(W) ** 2 * C.real) + np.sum((np.conj(C) * W).real)


def _cost_grad(W, C):
    # packed as dC/dRe(W) + 1j * dC/dIm(W)
    return 2 * C.real * W + C


def test_matches_pgd(ref_cfg):
    H = generate_channel(ref_cfg, 50, n=50)
    net = UnfoldedNetwork.initial(8, 64, 20)
    W, _, _ = forward(net, H, ref_cfg)
    Wp, _ = solve_pgd(H, ref_cfg, PgdParams(lam=1 / 15, eta="mp", max_iters=20, trace_every=0))
    assert np.max(np.linalg.norm(W - Wp, axis=(-2, -1))) < 1e-12


def test_single_zero_lambda_layer_keeps_feasible_input(small_cfg):
    H = generate_channel(small_cfg, 1)
    W0 = zf_precoder(H, small_cfg)
    net = UnfoldedNetwork(4, 16, [0.0], [1 / 40])
    W, _, _ = forward(net, H, small_cfg, W0=W0)
    assert np.allclose(W, W0, atol=1e-12)


def test_scripted_fixture():
    cfg = SystemConfig(M=4, K=2, gamma=10.0)
    net = UnfoldedNetwork(2, 4, *FIXTURE_PARAMS)
    W, tape, iterates = forward(net, FIXTURE_H, cfg, keep_iterates=True)
    assert np.allclose(W, FIXTURE_OUT, rtol=0, atol=1e-13)
    assert np.all(W[:, 3] == 0)
    assert len(tape) == 3 and len(iterates) == 4


def test_project_params():
    net = UnfoldedNetwork(8, 64, [-0.1, 0.2], [1.0, 0.006])
    p = project_params(net)
    assert p.lambdas[0] == 0.0 and p.lambdas[1] == 0.2
    assert p.etas[0] == pytest.approx(1 / 117.255, rel=1e-5)
    assert p.etas[1] == 0.006
    assert project_params(p) == p
    low = project_params(UnfoldedNetwork(8, 64, [0.1], [1e-9]))
    assert low.etas[0] == 0.5 / net.mp_bound
    fresh = UnfoldedNetwork.initial(8, 64)
    assert project_params(fresh) == fresh


def test_network_basics(tmp_path):
    net = UnfoldedNetwork.initial(8, 64)
    assert net.num_layers == 20
    assert net.mp_bound == pytest.approx((np.sqrt(8) + 8) ** 2)
    assert net.layers[0].lam == pytest.approx(1 / 15)
    with pytest.raises(ConfigError):
        UnfoldedNetwork(8, 64, [], [])
    path = tmp_path / "net.json"
    net.save(path)
    assert UnfoldedNetwork.load(path) == net
    doc = net.to_dict()
    assert set(doc) == {"version", "K", "M", "I", "mp_bound", "layers"}
    doc["I"] = 3
    with pytest.raises(DataFormatError):
        UnfoldedNetwork.from_dict(doc)
    doc = net.to_dict()
    doc["version"] = 99
    with pytest.raises(DataFormatError):
        UnfoldedNetwork.from_dict(doc)


def test_dimension_mismatch(small_cfg):
    net = UnfoldedNetwork.initial(8, 64, 2)
    with pytest.raises(DimensionError):
        forward(net, generate_channel(small_cfg, 0), small_cfg)


def test_tape_determinism(small_cfg, channels_small):
    net = UnfoldedNetwork.initial(4, 16, 5)
    _, a, _ = forward(net, channels_small, small_cfg)
    _, b, _ = forward(net, channels_small, small_cfg)
    for field in ("inputs", "V", "norms", "shrink"):
        for x, y in zip(getattr(a, field), getattr(b, field)):
            assert np.array_equal(x, y)


def test_backward_zero_cotangent(small_cfg, channels_small):
    net = UnfoldedNetwork.initial(4, 16, 5)
    W, tape, _ = forward(net, channels_small, small_cfg)
    dlam, deta = backward(tape, net, channels_small, small_cfg, np.zeros_like(W))
    assert np.array_equal(dlam, np.zeros(5)) and np.array_equal(deta, np.zeros(5))


def test_backward_all_columns_killed(small_cfg, rng):
    H = generate_channel(small_cfg, 4)
    net = UnfoldedNetwork(4, 16, [1e6], [1 / 40])
    W, tape, _ = forward(net, H, small_cfg)
    assert np.all(W == 0)
    dlam, deta = backward(tape, net, H, small_cfg, crandn(rng, 4, 16))
    assert deta[0] == 0.0 and dlam[0] == 0.0


def test_backward_mismatch(small_cfg, channels_small):
    net = UnfoldedNetwork.initial(4, 16, 5)
    W, tape, _ = forward(net, channels_small, small_cfg)
    other = UnfoldedNetwork.initial(4, 16, 4)
    with pytest.raises(TapeMismatchError):
        backward(tape, other, channels_small, small_cfg, W)
    with pytest.raises(TapeMismatchError):
        backward(tape, net.with_params(net.params * 1.01), channels_small, small_cfg, W)
    with pytest.raises(TapeMismatchError):
        backward(tape, net, channels_small, small_cfg, W[0])


def random_non_kink_draw(rng, cfg, I, min_gap=1e-4):
    """Random channel, parameters and cost weights with every column norm at
    least ``min_gap`` away from its shrinkage threshold."""
    L = (np.sqrt(cfg.K) + np.sqrt(cfg.M)) ** 2
    while True:
        H = crandn(rng, cfg.K, cfg.M)
        net = UnfoldedNetwork(cfg.K, cfg.M, rng.uniform(0.5, 4.0, I),
                              rng.uniform(0.5 / L, 1.0 / L, I))
        _, tape, _ = forward(net, H, cfg)
        if tape.kink_gap() > min_gap:
            return H, net, crandn(rng, cfg.K, cfg.M)


def finite_difference_check(rng, cfg, I, h=1e-6):
    H, net, C = random_non_kink_draw(rng, cfg, I)
    W, tape, _ = forward(net, H, cfg)
    dlam, deta = backward(tape, net, H, cfg, _cost_grad(W, C))
    analytic = np.stack([dlam, deta])
    numeric = np.zeros_like(analytic)
    theta = net.params
    for idx in np.ndindex(theta.shape):
        scale = h * abs(theta[idx])
        up, dn = theta.copy(), theta.copy()
        up[idx] += scale
        dn[idx] -= scale
        fu = _cost(forward(net.with_params(up), H, cfg, record=False)[0], C)
        fd = _cost(forward(net.with_params(dn), H, cfg, record=False)[0], C)
        numeric[idx] = (fu - fd) / (2 * scale)
    rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-8)
    return float(np.max(rel)), analytic, numeric


def test_backward_finite_differences(rng):
    cfg = SystemConfig.from_db(M=16, K=4)
    worst = max(finite_difference_check(rng, cfg, 5)[0] for _ in range(5))
    assert worst < 1e-5


def test_backward_batch_sums(small_cfg, channels_small, rng):
    net = UnfoldedNetwork(4, 16, rng.uniform(0.5, 2, 3), np.full(3, 0.02))
    C = crandn(rng, 8, 4, 16)
    W, tape, _ = forward(net, channels_small, small_cfg)
    total = np.stack(backward(tape, net, channels_small, small_cfg, _cost_grad(W, C)))
    parts = 0
    for h, c in zip(channels_small, C):
        w, t, _ = forward(net, h, small_cfg)
        parts = parts + np.stack(backward(t, net, h, small_cfg, _cost_grad(w, c)))
    assert np.allclose(total, parts, rtol=1e-12)
