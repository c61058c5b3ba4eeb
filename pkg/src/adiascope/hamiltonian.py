"""Parameter paths, Hamiltonian models and gauge-fixed spectral frames.

Frames carry eigenvectors as columns in *label order*: column ``k`` is the
state with label ``labels[k] = (n, j)``, where ``n`` is the level group and
``j`` the index inside a degenerate group.  Labels are continued along a
path by overlap, so they survive level crossings.
"""
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InvariantError, LabelTrackingError
from .linalg import (check_hermitian, dagger, degenerate_groups, eig_hermitian, magnus_steps,
                     ordered_product, polar_unitary, step_nodes)

DEGENERACY_TOL = 1e-9
# Central-difference step for projector derivatives, relative to the path's
# natural period.
FD_REL_STEP = 1e-5
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)


@dataclass(frozen=True)
class ParameterPath:
    """A curve ``t -> R(t)`` on ``[t_start, t_end]``.

    ``r`` must accept an array of times of shape ``(K,)`` and return an
    array of shape ``(K, k)``.  ``period`` sets the natural time unit used
    by :func:`adiascope.propagate.propagate_continuous` to pick a step
    size; it defaults to the whole interval.
    """

    t_start: float
    t_end: float
    r: Callable
    velocity_fn: Optional[Callable] = None
    period: Optional[float] = None

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise InvariantError(
                f"path needs t_end > t_start (got {self.t_start}, {self.t_end})")

    @property
    def span(self):
        return self.t_end - self.t_start

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.asarray(self.r(np.atleast_1d(t)), dtype=float).reshape(t.shape + (-1,))

    def velocity(self, t, h=None):
        """dR/dt, analytic when available, else a central difference."""
        if self.velocity_fn is not None:
            t = np.asarray(t, dtype=float)
            return np.asarray(self.velocity_fn(np.atleast_1d(t)), dtype=float).reshape(t.shape + (-1,))
        if h is None:
            h = 1e-6 * self.span
        return (self(np.asarray(t) + h) - self(np.asarray(t) - h)) / (2.0 * h)

    def restricted(self, t_start, t_end):
        return ParameterPath(t_start, t_end, self.r, self.velocity_fn, self.period)


@dataclass(frozen=True)
class HamiltonianModel:
    """``H(R)`` on a ``dim``-dimensional Hilbert space.

    ``h`` maps parameters of shape ``(..., k)`` to matrices of shape
    ``(..., dim, dim)``.  ``group_sizes`` optionally fixes the level
    grouping (sizes of consecutive groups in the initial ascending
    spectrum); otherwise groups are read off the first frame by degeneracy.
    """

    dim: int
    h: Callable
    group_sizes: Optional[tuple] = None

    def hamiltonian(self, params):
        return check_hermitian(self.h(np.asarray(params, dtype=float)))

    def analytic_frame(self, params):
        """(energies, vectors) in label order, or ``None`` for numeric frames."""
        return None


@dataclass(frozen=True)
class SpinHalfFieldModel(HamiltonianModel):
    """``H = B/2 * sigma . n(theta, phi)`` with parameters ``R = (B, phi)``.

    Frames use the half-angle gauge with unwrapped ``phi``; label ``(0, 0)``
    is the state along the field direction and ``(1, 0)`` the one against
    it, independent of the sign of ``B``.
    """

    dim: int = 2
    h: Callable = None
    group_sizes: Optional[tuple] = (1, 1)
    theta: float = 0.0

    def hamiltonian(self, params):
        params = np.asarray(params, dtype=float)
        b, phi = params[..., 0], params[..., 1]
        st, ct = np.sin(self.theta), np.cos(self.theta)
        out = np.empty(params.shape[:-1] + (2, 2), dtype=complex)
        out[..., 0, 0] = ct
        out[..., 1, 1] = -ct
        out[..., 0, 1] = st * np.exp(-1j * phi)
        out[..., 1, 0] = st * np.exp(1j * phi)
        return 0.5 * b[..., None, None] * out

    def analytic_frame(self, params):
        params = np.asarray(params, dtype=float)
        b = params[..., 0]
        vectors = spin_half_vectors(self.theta, params[..., 1])
        energies = np.stack([0.5 * b, -0.5 * b], axis=-1)
        return energies, vectors


def spin_half_vectors(theta, phi):
    """Columns ``|phi+>, |phi->`` in the half-angle gauge (4*pi periodic)."""
    phi = np.asarray(phi, dtype=float)
    c, s = np.cos(theta / 2.0), np.sin(theta / 2.0)
    em, ep = np.exp(-0.5j * phi), np.exp(0.5j * phi)
    out = np.empty(phi.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = c * em
    out[..., 1, 0] = s * ep
    out[..., 0, 1] = -s * em
    out[..., 1, 1] = c * ep
    return out


@dataclass(frozen=True)
class SpectralFrame:
    t: float
    energies: np.ndarray
    vectors: np.ndarray
    labels: tuple
    groups: tuple
    gauge: str = "transport"

    @property
    def dim(self):
        return len(self.energies)

    def projector(self, k):
        v = self.vectors[:, k]
        return np.outer(v, v.conj())


@dataclass(frozen=True)
class FrameSeries:
    """Frames at a sorted set of times, stored as stacked arrays."""

    times: np.ndarray
    energies: np.ndarray
    vectors: np.ndarray
    labels: tuple
    groups: tuple
    gauge: str = "transport"

    def __len__(self):
        return len(self.times)

    def __getitem__(self, k):
        return SpectralFrame(float(self.times[k]), self.energies[k], self.vectors[k],
                             self.labels, self.groups, self.gauge)


def _labels_for(groups):
    labels = [None] * sum(len(g) for g in groups)
    for n, g in enumerate(groups):
        for j, col in enumerate(g):
            labels[col] = (n, j)
    return tuple(labels)


def _initial_groups(model, w, h_norm):
    if model.group_sizes is not None:
        if sum(model.group_sizes) != model.dim:
            raise InvariantError(f"group sizes {model.group_sizes} do not sum to {model.dim}")
        groups, start = [], 0
        for size in model.group_sizes:
            groups.append(list(range(start, start + size)))
            start += size
        return groups
    return degenerate_groups(w, h_norm, DEGENERACY_TOL)


def _anchor_vectors(v, groups, anchor=None):
    # Deterministic gauge for a frame with no predecessor: each group's
    # basis is built from the projected anchor vectors, largest first.
    dim = v.shape[0]
    anchor = np.eye(dim, dtype=complex) if anchor is None else anchor
    out = v.copy()
    for g in groups:
        vg = v[:, g]
        proj = vg @ (dagger(vg) @ anchor)
        order = np.argsort(-np.linalg.norm(proj, axis=0), kind="stable")
        basis = []
        for k in order:
            x = proj[:, k].copy()
            for b in basis:
                x -= b * np.vdot(b, x)
            nrm = np.linalg.norm(x)
            if nrm > 1e-8:
                basis.append(x / nrm)
            if len(basis) == len(g):
                break
        out[:, g] = np.stack(basis, axis=1)
    return out


def _continue_labels(prev_vectors, groups, w, v):
    """Assign eigenpairs ``(w, v)`` to the label slots of ``prev_vectors``."""
    overlap = dagger(prev_vectors) @ v
    weight = np.abs(overlap) ** 2
    slot_group = np.empty(len(w), dtype=int)
    for n, g in enumerate(groups):
        slot_group[g] = n
    group_weight = np.array([weight[g].sum(axis=0) for g in groups])
    score = group_weight[slot_group]
    rows, cols = linear_sum_assignment(-score)
    chosen = score[rows, cols]
    if np.min(chosen) <= 0.5:
        raise LabelTrackingError(
            "cannot continue eigenvector labels: overlap matrix is far from "
            f"a permutation (weakest assignment weight {np.min(chosen):.3f})",
            overlap=overlap)
    out = np.empty_like(v)
    out[:, rows] = v[:, cols]
    for g in groups:
        vg = out[:, g]
        out[:, g] = vg @ polar_unitary(dagger(vg) @ prev_vectors[:, g])
    return out


def _numeric_frames(model, params, prev=None, groups=None):
    hs = model.hamiltonian(params)
    norms = np.linalg.norm(hs, axis=(-2, -1))
    ws, vs = eig_hermitian(hs)
    vectors = np.empty_like(vs)
    if prev is None:
        groups = _initial_groups(model, ws[0], norms[0])
        vectors[0] = _anchor_vectors(vs[0], groups)
        start = 1
        last = vectors[0]
    else:
        start = 0
        last = prev
    for k in range(start, len(ws)):
        vectors[k] = _continue_labels(last, groups, ws[k], vs[k])
        last = vectors[k]
    energies = np.einsum("kij,kjl,kli->ki", dagger(vectors), hs, vectors).real
    return energies, vectors, [list(g) for g in groups]


def spectral_frame_at(model, path, t, prev=None):
    """Labelled, gauge-fixed eigenframe of ``H(R(t))``.

    With ``prev`` the labels and gauge are continued from that frame
    (parallel transport for numeric frames).  Models with an analytic
    gauge ignore ``prev``.
    """
    if not path.t_start <= t <= path.t_end:
        raise InvariantError(f"t={t} outside [{path.t_start}, {path.t_end}]")
    params = path(np.array([t]))
    analytic = model.analytic_frame(params)
    if analytic is not None:
        groups = tuple((k,) for k in range(model.dim))
        return SpectralFrame(float(t), analytic[0][0], analytic[1][0],
                             _labels_for(groups), groups, "analytic")
    if prev is None:
        energies, vectors, groups = _numeric_frames(model, params)
        gauge = "anchor"
    else:
        groups = [list(g) for g in prev.groups]
        energies, vectors, _ = _numeric_frames(model, params, prev.vectors, groups)
        gauge = "transport"
    groups = tuple(tuple(g) for g in groups)
    return SpectralFrame(float(t), energies[0], vectors[0], _labels_for(groups), groups, gauge)


def analytic_spin_frame(theta, phi, amplitude=1.0, t=0.0):
    """Spin-1/2 frame in the half-angle gauge at azimuth ``phi`` (unwrapped)."""
    model = SpinHalfFieldModel(theta=theta)
    energies, vectors = model.analytic_frame(np.array([amplitude, phi], dtype=float))
    groups = ((0,), (1,))
    return SpectralFrame(float(t), energies, vectors, _labels_for(groups), groups, "analytic")


def _group_projectors(reference, groups, w, v):
    """Spectral projectors of each level group, batched over points.

    Eigenvectors ``v`` (any order) are assigned to the groups of the
    nearby labelled frames ``reference`` by overlap; projectors are gauge
    free, so no alignment is needed.
    """
    weight = np.abs(dagger(reference) @ v) ** 2
    group_weight = np.stack([weight[:, g, :].sum(axis=1) for g in groups], axis=1)
    assign = np.argmax(group_weight, axis=1)
    chosen = np.take_along_axis(group_weight, assign[:, None, :], axis=1)[:, 0]
    counts_ok = all(np.all((assign == n).sum(axis=1) == len(g)) for n, g in enumerate(groups))
    if not counts_ok or np.min(chosen) <= 0.5:
        raise LabelTrackingError(
            "cannot assign eigenvectors to level groups near a transport node "
            f"(weakest weight {np.min(chosen):.3f})")
    return np.stack([np.einsum("kic,kjc->kij", v * (assign == n)[:, None, :], v.conj())
                     for n in range(len(groups))], axis=1)


def _kato_transport(model, path, times, vectors, groups):
    """Re-gauge chained frames to fourth-order parallel transport.

    Chaining frames by polar alignment is a discrete parallel transport
    whose gauge drifts by O(h^2) over a path.  Instead the frames are
    aligned to ``T(t) V(t_0)``, where ``T`` solves ``dT/dt = A T`` with
    the adiabatic generator ``A = sum_n P_n' P_n`` built from the
    gauge-free group projectors.
    """
    nodes = step_nodes(times, 4)
    k_steps = len(times) - 1
    h = FD_REL_STEP * (path.period if path.period is not None else path.span)
    pts = np.concatenate([nodes.ravel(), nodes.ravel() + h, nodes.ravel() - h])
    hs = model.hamiltonian(path(pts))
    w, v = eig_hermitian(hs)
    reference = np.repeat(vectors[:-1], 2, axis=0)
    reference = np.concatenate([reference] * 3)
    proj = _group_projectors(reference, groups, w, v).reshape((3, k_steps, 2) + (len(groups),) + hs.shape[-2:])
    p0, dp = proj[0], (proj[1] - proj[2]) / (2.0 * h)
    a = 0.5 * np.sum(dp @ p0 - p0 @ dp, axis=-3)
    k = 1j * a
    k = 0.5 * (k + dagger(k))
    transport = ordered_product(magnus_steps(k, np.diff(times), 4))
    target = transport @ vectors[0]
    out = vectors.copy()
    for g in groups:
        vg = vectors[:, :, g]
        out[:, :, g] = vg @ polar_unitary(dagger(vg) @ target[:, :, g])
    return out


def frames_along(model, path, times, prev=None):
    """Frames at sorted ``times``; numeric frames are parallel transported in order."""
    times = np.asarray(times, dtype=float)
    params = path(times)
    analytic = model.analytic_frame(params)
    if analytic is not None:
        groups = tuple((k,) for k in range(model.dim))
        return FrameSeries(times, analytic[0], analytic[1], _labels_for(groups), groups, "analytic")
    if prev is None:
        energies, vectors, groups = _numeric_frames(model, params)
    else:
        groups = [list(g) for g in prev.groups]
        energies, vectors, _ = _numeric_frames(model, params, prev.vectors, groups)
    if len(times) > 1 and np.all(np.diff(times) > 0):
        if prev is not None:
            t_all = np.concatenate([[prev.t], times])
            v_all = np.concatenate([prev.vectors[None], vectors])
            vectors = _kato_transport(model, path, t_all, v_all, groups)[1:]
        else:
            vectors = _kato_transport(model, path, times, vectors, groups)
    groups = tuple(tuple(g) for g in groups)
    return FrameSeries(times, energies, vectors, _labels_for(groups), groups, "transport")


def frames_aligned_to(model, params, reference, groups):
    """Frames at ``params`` (shape (K, k)), each aligned to ``reference[K]``.

    Used for finite-difference derivatives, where neighbours of a node
    must share the node's labels and gauge.
    """
    analytic = model.analytic_frame(params)
    if analytic is not None:
        return analytic[1]
    hs = model.hamiltonian(params)
    ws, vs = eig_hermitian(hs)
    out = np.empty_like(vs)
    groups = [list(g) for g in groups]
    for k in range(len(ws)):
        out[k] = _continue_labels(reference[k], groups, ws[k], vs[k])
    return out
