import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adiascope.errors import ConvergenceError, DimensionError, InvariantError
from adiascope.linalg import (check_hermitian, check_unitary, degenerate_groups, eig_hermitian,
                              expm_skew, magnus_steps, ordered_product, polar_unitary,
                              step_nodes, unitarity_defect)


def random_hermitian(rng, n, scale=1.0):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * 0.5 * (a + a.conj().T)


def taylor_expm(a, terms=30):
    # Oracle: truncated power series of exp(a), for modest |a|.
    out = np.eye(a.shape[0], dtype=complex)
    term = np.eye(a.shape[0], dtype=complex)
    for k in range(1, terms):
        term = term @ a / k
        out = out + term
    return out


seeds = st.integers(min_value=0, max_value=2**32 - 1)
dims = st.integers(min_value=1, max_value=6)


@settings(max_examples=60, deadline=None)
@given(seeds, dims)
def test_eig_reconstructs_matrix(seed, n):
    m = random_hermitian(np.random.default_rng(seed), n, scale=3.0)
    w, v = eig_hermitian(m)
    assert np.all(np.diff(w) >= 0)
    assert unitarity_defect(v) < 1e-12
    assert np.allclose((v * w) @ v.conj().T, m, atol=1e-12)
    assert np.allclose(w, np.linalg.eigvalsh(m), atol=1e-12)


def test_eig_batched_matches_loop():
    rng = np.random.default_rng(3)
    stack = np.stack([random_hermitian(rng, 4) for _ in range(7)]).reshape(7, 1, 4, 4)
    w, v = eig_hermitian(stack)
    assert w.shape == (7, 1, 4) and v.shape == (7, 1, 4, 4)
    for k in range(7):
        wk, _ = eig_hermitian(stack[k, 0])
        assert np.allclose(w[k, 0], wk, atol=1e-13)


def test_eig_degenerate_spectrum():
    rng = np.random.default_rng(11)
    q, _ = np.linalg.qr(rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4)))
    m = q @ np.diag([1.0, 1.0, -2.0, 5.0]) @ q.conj().T
    m = 0.5 * (m + m.conj().T)
    w, v = eig_hermitian(m)
    assert np.allclose(w, [-2.0, 1.0, 1.0, 5.0], atol=1e-12)
    assert np.allclose((v * w) @ v.conj().T, m, atol=1e-12)
    assert degenerate_groups(w, np.linalg.norm(m), 1e-9) == [[0], [1, 2], [3]]


def test_eig_sweep_cap_raises():
    m = random_hermitian(np.random.default_rng(0), 5)
    with pytest.raises(ConvergenceError) as info:
        eig_hermitian(m, max_sweeps=1)
    assert info.value.residual > 0


def test_non_hermitian_and_non_square_rejected():
    with pytest.raises(InvariantError):
        eig_hermitian(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(DimensionError):
        check_hermitian(np.zeros((2, 3)))
    with pytest.raises(InvariantError):
        check_hermitian(np.array([[np.nan, 0], [0, 1]]))
    with pytest.raises(InvariantError):
        check_unitary(2 * np.eye(2))


@settings(max_examples=40, deadline=None)
@given(seeds, dims, st.floats(min_value=-2.0, max_value=2.0))
def test_expm_matches_taylor_oracle(seed, n, scale):
    a = random_hermitian(np.random.default_rng(seed), n)
    a /= max(1.0, np.linalg.norm(a, 2))
    u = expm_skew(a, scale)
    assert unitarity_defect(u) < 1e-12
    assert np.allclose(u, taylor_expm(-1j * scale * a), atol=1e-12)


def test_expm_scale_broadcasts_over_batch():
    rng = np.random.default_rng(5)
    a = np.stack([random_hermitian(rng, 3) for _ in range(4)])
    scales = np.array([0.0, 0.1, -0.3, 1.0])
    u = expm_skew(a, scales)
    assert np.allclose(u[0], np.eye(3))
    for k in range(4):
        assert np.allclose(u[k], expm_skew(a[k], scales[k]), atol=1e-13)


def test_ordered_product_order_and_prefixes():
    rng = np.random.default_rng(2)
    steps = np.stack([expm_skew(random_hermitian(rng, 2)) for _ in range(3)])
    out = ordered_product(steps)
    assert np.allclose(out[0], np.eye(2))
    assert np.allclose(out[-1], steps[2] @ steps[1] @ steps[0])


def test_polar_unitary_of_unitary_is_itself():
    u = expm_skew(random_hermitian(np.random.default_rng(8), 3))
    assert np.allclose(polar_unitary(u), u, atol=1e-13)


def _propagate(order, k):
    # i dU/dt = K(t) U for a non-commuting generator on [0, 1].
    knots = np.linspace(0.0, 1.0, k + 1)
    t = step_nodes(knots, order)
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sz = np.diag([1.0, -1.0]).astype(complex)
    gens = np.cos(3 * t)[..., None, None] * sx + t[..., None, None] ** 2 * sz
    return ordered_product(magnus_steps(gens, np.diff(knots), order))[-1]


@pytest.mark.parametrize("order,expected", [(2, 4.0), (4, 16.0)])
def test_magnus_convergence_order(order, expected):
    ref = _propagate(4, 4096)
    e1 = np.linalg.norm(_propagate(order, 32) - ref)
    e2 = np.linalg.norm(_propagate(order, 64) - ref)
    assert e1 / e2 == pytest.approx(expected, rel=0.15)


def test_magnus_constant_generator_is_exact():
    a = random_hermitian(np.random.default_rng(4), 3)
    gens = np.broadcast_to(a, (10, 2, 3, 3))
    u = ordered_product(magnus_steps(gens, 0.1, 4))[-1]
    assert np.allclose(u, taylor_expm(-1j * a), atol=1e-12)


def test_unknown_order_rejected():
    with pytest.raises(ValueError):
        step_nodes([0.0, 1.0], 3)
