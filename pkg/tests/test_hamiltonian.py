import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adiascope.errors import InvariantError, LabelTrackingError
from adiascope.hamiltonian import (HamiltonianModel, ParameterPath, SpinHalfFieldModel,
                                   analytic_spin_frame, frames_along, spectral_frame_at,
                                   spin_half_vectors)


def circle(amplitude=1.0):
    return ParameterPath(0.0, 2 * np.pi, lambda s: np.stack([np.full_like(s, amplitude), s], -1))


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, np.pi), st.floats(-20.0, 20.0), st.floats(-5.0, 5.0))
def test_spin_frame_is_eigenframe(theta, phi, b):
    model = SpinHalfFieldModel(theta=theta)
    h = model.hamiltonian(np.array([b, phi]))
    energies, v = model.analytic_frame(np.array([b, phi]))
    assert np.allclose(h @ v, v * energies, atol=1e-12)
    assert np.allclose(v.conj().T @ v, np.eye(2), atol=1e-12)


def test_half_angle_gauge_is_4pi_periodic():
    v0 = spin_half_vectors(0.7, 0.0)
    assert np.allclose(spin_half_vectors(0.7, 2 * np.pi), -v0)
    assert np.allclose(spin_half_vectors(0.7, 4 * np.pi), v0)


def test_labels_follow_field_direction_through_sign_change():
    model = SpinHalfFieldModel(theta=np.pi / 2)
    e_pos, v_pos = model.analytic_frame(np.array([1.0, 0.3]))
    e_neg, v_neg = model.analytic_frame(np.array([-1.0, 0.3]))
    assert np.allclose(v_pos, v_neg)
    assert e_pos[0] == 0.5 and e_neg[0] == -0.5


def test_numeric_frames_match_analytic_projectors():
    theta = np.pi / 3
    analytic = SpinHalfFieldModel(theta=theta)
    numeric = HamiltonianModel(2, analytic.hamiltonian)
    path = circle()
    t = np.linspace(0.0, 2 * np.pi, 200)
    fa = frames_along(analytic, path, t)
    fn = frames_along(numeric, path, t)
    assert fn.gauge == "transport"
    pa = np.einsum("kil,kjl->klij", fa.vectors, fa.vectors.conj())
    # numeric labels are ascending at the start: (-B/2, +B/2)
    pn = np.einsum("kil,kjl->klij", fn.vectors, fn.vectors.conj())
    assert np.allclose(pn[:, 0], pa[:, 1], atol=1e-10)
    assert np.allclose(fn.energies[:, 1], fa.energies[:, 0], atol=1e-12)


@pytest.mark.parametrize("theta", [0.4, np.pi / 3, 2.0])
def test_numeric_transport_carries_berry_phase(theta):
    model = HamiltonianModel(2, SpinHalfFieldModel(theta=theta).hamiltonian)
    fn = frames_along(model, circle(), np.linspace(0.0, 2 * np.pi, 400))
    ov = np.einsum("kia,kia->ka", fn.vectors[:-1].conj(), fn.vectors[1:])
    assert np.all(ov.real > 0.99)
    assert np.max(np.abs(ov.imag)) < 1e-4
    # closed loop: each level picks up minus half its solid angle
    loop = np.diag(fn.vectors[0].conj().T @ fn.vectors[-1])
    gamma = np.pi * (1 - np.cos(theta))
    assert np.allclose(np.abs(loop), 1.0, atol=1e-12)
    expected = np.angle(np.exp(1j * np.array([gamma, -gamma])))
    assert np.allclose(np.sort(np.angle(loop)), np.sort(expected), atol=1e-9)


def crossing_model():
    # Levels +t and -t cross at t = 0 with a vanishing coupling.
    def h(p):
        t = p[..., 0]
        out = np.zeros(p.shape[:-1] + (2, 2), dtype=complex)
        out[..., 0, 0] = t
        out[..., 1, 1] = -t
        return out
    return HamiltonianModel(2, h)


def test_labels_continue_through_level_crossing():
    path = ParameterPath(-1.0, 1.0, lambda t: t[:, None])
    fs = frames_along(crossing_model(), path, np.linspace(-1.0, 1.0, 41) + 1e-3)
    # the state that started as the lower level keeps its label
    assert np.allclose(np.abs(fs.vectors[:, 0, 0]), 1.0)
    assert fs.energies[0, 0] < 0 < fs.energies[-1, 0]


def test_label_jump_raises():
    # Between the two samples the eigenbasis rotates to a DFT basis, so no
    # assignment of labels has weight above 1/3.
    q = np.exp(2j * np.pi * np.outer(np.arange(3), np.arange(3)) / 3) / np.sqrt(3)
    h0 = np.diag([0.0, 1.0, 2.0]).astype(complex)
    h1 = q @ h0 @ q.conj().T

    def h(p):
        return np.where(p[..., 0, None, None] < 0.5, h0, h1)

    path = ParameterPath(0.0, 1.0, lambda t: t[:, None])
    with pytest.raises(LabelTrackingError) as info:
        frames_along(HamiltonianModel(3, h), path, np.array([0.0, 1.0]))
    assert info.value.overlap.shape == (3, 3)


def test_spectral_frame_at_continues_from_previous():
    model = HamiltonianModel(2, SpinHalfFieldModel(theta=1.0).hamiltonian)
    path = circle()
    f0 = spectral_frame_at(model, path, 0.0)
    f1 = spectral_frame_at(model, path, 0.01, prev=f0)
    assert f0.gauge == "anchor" and f1.gauge == "transport"
    assert abs(np.vdot(f0.vectors[:, 0], f1.vectors[:, 0]) - 1) < 1e-3
    with pytest.raises(InvariantError):
        spectral_frame_at(model, path, 7.0)


def test_analytic_spin_frame_and_projector():
    f = analytic_spin_frame(np.pi / 4, 1.0, amplitude=2.0)
    assert np.allclose(f.energies, [1.0, -1.0])
    p = f.projector(0) + f.projector(1)
    assert np.allclose(p, np.eye(2))


def test_path_validation_and_velocity():
    with pytest.raises(InvariantError):
        ParameterPath(1.0, 1.0, lambda t: t[:, None])
    path = ParameterPath(0.0, 1.0, lambda t: np.stack([t ** 2, np.sin(t)], -1))
    assert np.allclose(path.velocity(np.array([0.5])), [[1.0, np.cos(0.5)]], atol=1e-8)


def test_non_hermitian_model_rejected():
    model = HamiltonianModel(2, lambda p: np.broadcast_to(np.array([[0, 1], [0, 0]], complex),
                                                          p.shape[:-1] + (2, 2)))
    with pytest.raises(InvariantError):
        model.hamiltonian(np.zeros((1, 1)))
