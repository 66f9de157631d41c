import numpy as np
import pytest

from vpgan.nn import ArchitectureSpec, NetworkParams, forward
from vpgan.optim import Adam, NonFiniteGradientError


def scalar_params(value=0.0):
    spec = ArchitectureSpec(kind="mlp", input_dim=1, output_dim=1, hidden_dim=1, layer_count=1)
    return NetworkParams(spec, {"layer0.W": np.array([[value]]), "layer0.b": np.array([value])})


def zero_grads(params):
    return {n: np.zeros_like(t.data) for n, t in params.tensors.items()}


def test_zero_gradient_leaves_params_but_counts_step():
    p = scalar_params(1.5)
    opt = Adam(p, lr=0.1)
    opt.step(zero_grads(p))
    assert opt.t == 1
    np.testing.assert_array_equal(p.flat(), [1.5, 1.5])


def test_zero_learning_rate_leaves_params():
    p = scalar_params(0.3)
    opt = Adam(p, lr=0.0)
    for _ in range(5):
        opt.step({n: np.ones_like(t.data) for n, t in p.tensors.items()})
    np.testing.assert_array_equal(p.flat(), [0.3, 0.3])


@pytest.mark.parametrize("g", [2.5, -0.01])
def test_constant_gradient_moves_monotonically_against_sign(g):
    p = scalar_params(0.0)
    opt = Adam(p, lr=0.01)
    trail = []
    for _ in range(50):
        opt.step({n: np.full_like(t.data, g) for n, t in p.tensors.items()})
        trail.append(p.flat()[0])
    steps = np.diff([0.0] + trail)
    assert np.all(np.sign(steps) == -np.sign(g))


def test_matches_scalar_simulation():
    p = scalar_params(0.2)
    lr, (b1, b2), eps = 0.05, (0.5, 0.999), 1e-8
    opt = Adam(p, lr=lr, betas=(b1, b2), eps=eps)
    x, m, v = 0.2, 0.0, 0.0
    rng = np.random.default_rng(0)
    for t in range(1, 21):
        g = float(rng.standard_normal())
        opt.step({n: np.full_like(tt.data, g) for n, tt in p.tensors.items()})
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        assert p.flat()[0] == pytest.approx(x, abs=1e-15)


def test_non_finite_gradient_aborts_with_diagnostics():
    p = scalar_params(1.0)
    opt = Adam(p)
    grads = zero_grads(p)
    grads["layer0.b"] = np.array([np.nan])
    with pytest.raises(NonFiniteGradientError) as err:
        opt.step(grads)
    assert err.value.diagnostics["non_finite_counts"] == {"layer0.b": 1}
    assert opt.t == 0
    np.testing.assert_array_equal(p.flat(), [1.0, 1.0])


def test_uses_tape_gradients_by_default():
    p = scalar_params(1.0)
    opt = Adam(p, lr=0.1)
    forward(p, np.array([[2.0]])).sum().backward()
    opt.step()
    assert p["layer0.W"].data[0, 0] < 1.0


def test_bit_identical_trajectories():
    spec = ArchitectureSpec(kind="resnet", input_dim=4, output_dim=2, hidden_dim=6)

    def run():
        p = NetworkParams.initialize(spec, np.random.default_rng(5))
        opt = Adam(p, lr=1e-2)
        rng = np.random.default_rng(6)
        for _ in range(100):
            p.zero_grad()
            (forward(p, rng.standard_normal((8, 4))) ** 2).mean().backward()
            opt.step()
        return p.flat()

    assert run().tobytes() == run().tobytes()


def test_state_round_trip():
    p = scalar_params(1.0)
    opt = Adam(p, lr=0.1)
    opt.step({n: np.ones_like(t.data) for n, t in p.tensors.items()})
    q = scalar_params(0.0)
    q.load_flat(p.flat())
    opt2 = Adam(q, lr=0.1)
    opt2.load_state_arrays("g", opt.state_arrays("g"), opt.t)
    for o in (opt, opt2):
        o.step({n: np.full_like(t.data, -1.0) for n, t in o.params.tensors.items()})
    np.testing.assert_array_equal(p.flat(), q.flat())
