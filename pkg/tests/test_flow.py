import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from freqflow.autograd import Tensor
from freqflow.errors import ContractError, DimensionError, NumericError
from freqflow.flow import flow_loss, make_residual_target, ode_sample, sample_path, target_velocity
from freqflow.gradcheck import finite_diff_check
from freqflow.layers import FlowHead
from freqflow.spectral import Spectrum

vec = st.lists(st.floats(-100, 100), min_size=1, max_size=8)


class ConstantHead:
    """Stand-in velocity field returning a fixed vector."""

    def __init__(self, v):
        self.v = np.asarray(v, dtype=np.float64)

    def __call__(self, x_t, t, cond):
        x_t = np.asarray(x_t.data if isinstance(x_t, Tensor) else x_t)
        return Tensor(np.broadcast_to(self.v, x_t.shape).copy())


def test_path_examples():
    x0, x1 = np.array([0.0, 0.0]), np.array([2.0, 4.0])
    np.testing.assert_array_equal(sample_path(x0, x1, 0.0).x_t, x0)
    np.testing.assert_array_equal(sample_path(x0, x1, 1.0).x_t, x1)
    np.testing.assert_array_equal(sample_path(x0, x1, 0.5).x_t, [1.0, 2.0])


@given(vec, st.integers(0, 1000))
def test_path_endpoints_exact(x1, seed):
    x1 = np.array(x1)
    x0 = np.random.default_rng(seed).standard_normal(x1.shape)
    assert np.array_equal(sample_path(x0, x1, 0.0).x_t, x0)
    assert np.array_equal(sample_path(x0, x1, 1.0).x_t, x1)


def test_path_rejects_bad_input():
    with pytest.raises(DimensionError):
        sample_path(np.zeros(2), np.zeros(3), 0.5)
    with pytest.raises(ContractError):
        sample_path(np.zeros(2), np.zeros(2), 1.5)


def test_target_velocity_examples():
    np.testing.assert_array_equal(target_velocity([1, 1], [1, 1]), [0, 0])
    np.testing.assert_array_equal(target_velocity([1, 1], [3, 0]), [2, -1])
    with pytest.raises(DimensionError):
        target_velocity([1], [1, 2])


@given(vec)
def test_target_velocity_antisymmetric(a):
    a = np.array(a)
    b = a[::-1] * 0.5
    np.testing.assert_array_equal(target_velocity(a, b), -target_velocity(b, a))


def test_flow_loss_zero_for_perfect_head(rng):
    x0, x1 = rng.standard_normal(6), rng.standard_normal(6)
    for t in (0.0, 0.3, 1.0):
        assert flow_loss(ConstantHead(x1 - x0), x0, x1, np.zeros(6), t).data == 0.0


def test_flow_loss_with_zero_head(rng):
    head = FlowHead(4, 4, hidden=5, depth=2, time_embed_dim=4, rng=rng, zero_output=True)
    x0, x1 = rng.standard_normal(4), rng.standard_normal(4)
    loss = flow_loss(head, x0, x1, rng.standard_normal(4), 0.4).data
    assert loss == pytest.approx(np.mean((x1 - x0) ** 2), rel=1e-12)


@pytest.mark.parametrize("depth", [2, 16])
def test_flow_loss_gradient(depth, rng):
    head = FlowHead(4, 4, hidden=6, depth=depth, time_embed_dim=4, rng=rng)
    x0, x1, c = (rng.standard_normal((16, 4)) for _ in range(3))
    t = rng.uniform(size=16)
    for p in (head.layers[0].weight, head.out.weight, head.time_in.bias):
        assert finite_diff_check(lambda: flow_loss(head, x0, x1, c, t), p, 1e-4) < 1e-4


@given(st.integers(1, 40), st.integers(0, 1000))
def test_euler_exact_on_constant_field(n_steps, seed):
    r = np.random.default_rng(seed)
    x0, v = r.standard_normal(5), r.standard_normal(5)
    out = ode_sample(ConstantHead(v), x0, np.zeros(5), n_steps)
    np.testing.assert_allclose(out, x0 + v, atol=1e-12)


def test_zero_head_is_identity_flow(rng):
    head = FlowHead(4, 4, hidden=5, depth=2, time_embed_dim=4, rng=rng, zero_output=True)
    x0 = rng.standard_normal((3, 4))
    np.testing.assert_array_equal(ode_sample(head, x0, np.zeros((3, 4)), 7), x0)


def test_ode_sample_deterministic_and_validated(rng):
    head = FlowHead(4, 4, hidden=5, depth=2, time_embed_dim=4, rng=rng)
    x0, c = rng.standard_normal(4), rng.standard_normal(4)
    assert np.array_equal(ode_sample(head, x0, c, 3), ode_sample(head, x0, c, 3))
    with pytest.raises(ContractError):
        ode_sample(head, x0, c, 0)


def test_ode_divergence_names_step():
    with pytest.raises(NumericError, match="step 1 of 4"):
        ode_sample(ConstantHead([np.inf, 0.0]), np.zeros(2), np.zeros(2), 4)


def test_ode_sample_lipschitz_in_x0(rng):
    head = FlowHead(6, 6, hidden=8, depth=2, time_embed_dim=4, rng=rng)
    x0, c = rng.standard_normal(6), rng.standard_normal(6)
    base = ode_sample(head, x0, c, 8)
    ratios = []
    for delta in (1e-3, 1e-4, 1e-5):
        d = rng.standard_normal(6)
        d *= delta / np.linalg.norm(d)
        ratios.append(np.linalg.norm(ode_sample(head, x0 + d, c, 8) - base) / delta)
    assert np.all(np.isfinite(ratios)) and max(ratios) < 1e3


def test_residual_target():
    S = Spectrum(np.array([1 + 2j, -3j]), 4)
    np.testing.assert_array_equal(make_residual_target(S, S), np.zeros(4))
    T = Spectrum(np.array([2 + 2j, 1 - 3j]), 4)
    np.testing.assert_array_equal(make_residual_target(T, S), [1, 0, 1, 0])
    with pytest.raises(DimensionError):
        make_residual_target(S, Spectrum(np.zeros(3, complex), 6))
