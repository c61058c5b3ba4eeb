"""Factorization ``U = U_dyn @ U_geo @ U_err`` and the factors' own formulas.

Path quantities are evaluated in the eigen-coordinates of the initial
frame: an operator ``X`` written there is mapped to the computational
basis as ``V0 @ X @ V0^H``.  The connection ``C(s) = V(s)^H i dV/ds``
(label order) drives both the geometric factor (same-group blocks) and
the error generator (off-group blocks, weighted by the modulation
``F_ab = exp(i (Phi_a - Phi_b))``).
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import GeometricConditionError, InvariantError, ToleranceError
from .hamiltonian import frames_aligned_to, frames_along
from .linalg import dagger, distance, expm_skew, magnus_steps, ordered_product, step_nodes
from .propagate import DEFAULT_ORDER, dyn_phase_condition_check, propagate_continuous, propagate_pulses

DEFAULT_PATH_STEPS = 4096
RECONSTRUCTION_TOL = 1e-8
DIRECT_TOL = 1e-6
CONDITION_TOL = 1e-8
# Central-difference step for connections, relative to the path's natural
# period: truncation (~h^2) and roundoff (~eps/h) both stay near 1e-10.
FD_REL_STEP = 1e-5
HALF_PI = 0.5 * np.pi


def unit_phase(x):
    """``exp(1j * x)``, exact at multiples of pi/2."""
    x = np.asarray(x, dtype=float)
    quarters = x / HALF_PI
    k = np.round(quarters)
    exact = np.abs(quarters - k) < 1e-9
    table = np.array([1, 1j, -1, -1j], dtype=complex)
    return np.where(exact, table[np.mod(k, 4).astype(int)], np.exp(1j * x))


def modulation_matrix(phases):
    """``F[..., a, b] = exp(i (Phi_a - Phi_b))`` for phase integrals ``Phi``."""
    phases = np.asarray(phases, dtype=float)
    return unit_phase(phases[..., :, None] - phases[..., None, :])


def group_mask(groups, dim):
    """Boolean ``(dim, dim)`` mask of same-group label pairs."""
    mask = np.zeros((dim, dim), dtype=bool)
    for g in groups:
        mask[np.ix_(g, g)] = True
    return mask


@dataclass(frozen=True)
class PathFrames:
    """Frames, connections and phase integrals sampled along a path.

    ``knots`` delimit the integration steps; ``node_s`` holds the one
    (midpoint) or two (Gauss) sample points inside each step.
    """

    knots: np.ndarray
    node_s: np.ndarray
    v_start: np.ndarray
    v_end: np.ndarray
    node_vectors: np.ndarray
    node_connection: np.ndarray
    node_phases: np.ndarray
    phases_end: np.ndarray
    labels: tuple
    groups: tuple
    order: int = DEFAULT_ORDER

    @property
    def dim(self):
        return self.v_start.shape[0]

    @property
    def steps(self):
        return np.diff(self.knots)


def connection(model, path, s, vectors, groups, h=None):
    """``V^H i dV/ds`` at points ``s`` by central differences.

    Neighbouring frames are aligned to ``vectors`` (the frames at ``s``) so
    the derivative is taken in one consistent gauge.
    """
    s = np.asarray(s, dtype=float)
    if h is None:
        h = FD_REL_STEP * (path.period if path.period is not None else path.span)
    if h <= 0.0 or h < 1e-12 * max(1.0, path.span):
        raise InvariantError(f"finite-difference step underflow (h={h:.3e})")
    plus = frames_aligned_to(model, path(s + h), vectors, groups)
    minus = frames_aligned_to(model, path(s - h), vectors, groups)
    c = 1j * dagger(vectors) @ (plus - minus) / (2.0 * h)
    return 0.5 * (c + dagger(c))


def _assemble(model, path, knots, node_s, node_vectors, node_phases, phases_end,
              v_start, v_end, labels, groups, order):
    shape = node_s.shape
    dim = model.dim
    flat_v = node_vectors.reshape((-1, dim, dim))
    conn = connection(model, path, node_s.ravel(), flat_v, groups)
    return PathFrames(
        knots=knots, node_s=node_s, v_start=v_start, v_end=v_end,
        node_vectors=node_vectors, node_connection=conn.reshape(shape + (dim, dim)),
        node_phases=node_phases, phases_end=phases_end, labels=labels,
        groups=groups, order=order)


def path_frames_continuous(model, path, result):
    """:class:`PathFrames` on the propagator's own grid."""
    if result.kind != "continuous":
        raise InvariantError("expected a continuous EvolutionResult")
    knots = result.checkpoints
    return _assemble(
        model, path, knots, result.node_times, result.node_vectors,
        result.node_phases, result.phase_integrals[-1],
        result.frames.vectors[0], result.frames.vectors[-1],
        result.labels, result.groups, result.order)


def pulse_knots(seq, steps=DEFAULT_PATH_STEPS):
    """Step boundaries along the pulse path, with every pulse on a knot."""
    path = seq.path
    breaks = np.unique(np.concatenate([[path.t_start], seq.positions, [path.t_end]]))
    pieces = [breaks[:1]]
    for a, b in zip(breaks[:-1], breaks[1:]):
        n = max(1, int(round(steps * (b - a) / path.span)))
        pieces.append(np.linspace(a, b, n + 1)[1:])
    return np.concatenate(pieces)


def path_frames_pulses(model, seq, steps=DEFAULT_PATH_STEPS, order=DEFAULT_ORDER):
    """:class:`PathFrames` along the smooth path through the pulse points.

    Phases are piecewise constant: a node sees every pulse fired at an
    earlier path position.
    """
    path = seq.path
    knots = pulse_knots(seq, steps)
    node_s = step_nodes(knots, order).reshape(len(knots) - 1, -1)
    m = node_s.shape[1]
    merged = np.concatenate([np.column_stack([knots[:-1], node_s]).ravel(), knots[-1:]])
    series = frames_along(model, path, merged)
    knot_idx = np.arange(len(knots)) * (m + 1)
    node_idx = knot_idx[:-1, None] + 1 + np.arange(m)[None, :]
    sums = seq.phase_sums()
    fired = np.searchsorted(seq.positions, node_s, side="left")
    return _assemble(
        model, path, knots, node_s, series.vectors[node_idx], sums[fired], sums[-1],
        series.vectors[0], series.vectors[-1], series.labels, series.groups, order)


def u_dyn(vectors, phases):
    """``sum_k exp(-i Phi_k) |k><k|`` for frame columns ``vectors``."""
    vectors = np.asarray(vectors)
    return (vectors * np.exp(-1j * np.asarray(phases))[None, :]) @ dagger(vectors)


def u_g1(frame_0, frame_t):
    """``sum_k |k(t)><k(0)|``; accepts :class:`SpectralFrame` or arrays."""
    if hasattr(frame_0, "labels") and hasattr(frame_t, "labels"):
        if tuple(frame_0.labels) != tuple(frame_t.labels):
            raise InvariantError("frames carry different label sets")
        frame_0, frame_t = frame_0.vectors, frame_t.vectors
    frame_0 = np.asarray(frame_0)
    frame_t = np.asarray(frame_t)
    if frame_0.shape != frame_t.shape:
        raise InvariantError("frames have different shapes")
    return frame_t @ dagger(frame_0)


def check_geometric_condition(pf, tol=CONDITION_TOL):
    """Raise unless same-group phase differences lie in ``2*pi*Z`` on the path."""
    violations = []
    for n, g in enumerate(pf.groups):
        for j, p in enumerate(g):
            for q in g[j + 1:]:
                diff = np.concatenate([pf.node_phases[..., p].ravel() - pf.node_phases[..., q].ravel(),
                                       [pf.phases_end[p] - pf.phases_end[q]]])
                wrapped = diff - 2.0 * np.pi * np.round(diff / (2.0 * np.pi))
                worst = float(np.max(np.abs(wrapped)))
                if worst > tol:
                    violations.append((n, pf.labels[p], pf.labels[q], worst))
    if violations:
        n, a, b, worst = violations[0]
        raise GeometricConditionError(
            f"dynamic phases of labels {a} and {b} in group {n} differ by "
            f"{worst:.3e} (mod 2*pi); the same-group factor is not geometric",
            violations)


def _g2_generators(pf):
    mask = group_mask(pf.groups, pf.dim)
    return -np.where(mask, pf.node_connection, 0.0)


def g2_partials(pf):
    """Path-ordered same-group transport in initial eigen-coordinates, at every knot."""
    return ordered_product(magnus_steps(_g2_generators(pf), pf.steps, pf.order))


def u_g2(pf, check=True):
    """Same-group holonomy, returned in the computational basis."""
    if check:
        check_geometric_condition(pf)
    w = g2_partials(pf)[-1]
    return pf.v_start @ w @ dagger(pf.v_start)


def u_geo(pf, check=True):
    return u_g1(pf.v_start, pf.v_end) @ u_g2(pf, check=check)


def u_err_extracted(u_total, u_dyn_, u_geo_):
    """Error factor implied by the other two, ``U_geo^H U_dyn^H U``."""
    return dagger(u_geo_) @ dagger(u_dyn_) @ u_total


def _stencil(k_steps):
    # Four consecutive flat node indices around each two-node step: the
    # step's own nodes plus one on each side, shifted inwards at the ends.
    start = np.clip(2 * np.arange(k_steps) - 1, 0, 2 * k_steps - 4)
    return start[:, None] + np.arange(4)[None, :]


def _lagrange(x_nodes, x):
    # Lagrange basis weights, shapes (K, p) nodes and (K, q) points -> (K, q, p).
    p = x_nodes.shape[1]
    w = np.ones(x.shape + (p,))
    for j in range(p):
        for i in range(p):
            if i != j:
                w[..., j] *= (x - x_nodes[:, i, None]) / (x_nodes[:, j] - x_nodes[:, i])[:, None]
    return w


def _g2_at_nodes(pf, partials):
    # Transport from each step's left knot to its nodes.  The generator is
    # only known at the nodes; it is interpolated by a cubic through four
    # neighbouring nodes and each sub-interval gets one Gauss-Magnus step.
    gens = _g2_generators(pf)
    offsets = pf.node_s - pf.knots[:-1, None]
    k_steps, m = offsets.shape
    if m == 1 or k_steps < 2:
        out = np.empty(gens.shape, dtype=complex)
        for i in range(m):
            out[:, i] = expm_skew(gens[:, i], offsets[:, i]) @ partials[:-1]
        return out
    dim = gens.shape[-1]
    flat_s = pf.node_s.reshape(-1)
    flat_g = gens.reshape((-1, dim, dim))
    idx = _stencil(k_steps)
    x_nodes = flat_s[idx]
    stencil_g = flat_g[idx]
    out = np.empty(gens.shape, dtype=complex)
    for i in range(m):
        length = offsets[:, i]
        pts = pf.knots[:-1, None] + length[:, None] * np.asarray(
            step_nodes([0.0, 1.0], 4))[0][None, :]
        w = _lagrange(x_nodes, pts)
        sub = np.einsum("kqp,kpij->kqij", w, stencil_g)
        out[:, i] = magnus_steps(sub, length, 4) @ partials[:-1]
    return out


def error_generators(pf, g2_nodes=None):
    """Interaction-picture error generator at every node (eigen-coordinates)."""
    if g2_nodes is None:
        g2_nodes = _g2_at_nodes(pf, g2_partials(pf))
    off = ~group_mask(pf.groups, pf.dim)
    f = modulation_matrix(pf.node_phases)
    h_err = -np.where(off, f * pf.node_connection, 0.0)
    return dagger(g2_nodes) @ h_err @ g2_nodes


def u_err_direct(pf, check=True):
    """Path-ordered error evolution built from connections and modulation.

    Integrates ``i dW/ds = U_G2^H H_err U_G2 W`` with the same integrator
    order as ``pf``; the result is independent of the propagator and
    should agree with :func:`u_err_extracted`.
    """
    if check:
        check_geometric_condition(pf)
    w = ordered_product(magnus_steps(error_generators(pf), pf.steps, pf.order))[-1]
    return pf.v_start @ w @ dagger(pf.v_start)


def h_g2_operator(v0, vt, dv, phases, groups=None):
    """Same-group generator at one point, computational basis.

    ``dv`` is the derivative of the frame ``vt`` along the path and
    ``phases`` the dynamic phase integrals there.
    """
    return _frame_operator(v0, vt, dv, phases, True, groups)


def h_err_operator(v0, vt, dv, phases, groups=None):
    """Off-group (transition) generator at one point, computational basis."""
    return _frame_operator(v0, vt, dv, phases, False, groups)


def _frame_operator(v0, vt, dv, phases, same, groups=None):
    dim = vt.shape[-1]
    if groups is None:
        groups = tuple((k,) for k in range(dim))
    mask = group_mask(groups, dim)
    if not same:
        mask = ~mask
    c = 1j * dagger(vt) @ dv
    block = -np.where(mask, modulation_matrix(phases) * c, 0.0)
    return v0 @ block @ dagger(v0)


def transformed_generator(h, s, s_dot):
    """Generator in the moving frame ``S``: ``S^H (H - i dS/dt S^H) S``."""
    return dagger(s) @ (h - 1j * s_dot @ dagger(s)) @ s


@dataclass(frozen=True)
class EvolutionDecomposition:
    u_total: np.ndarray
    u_dyn: np.ndarray
    u_g1: np.ndarray
    u_g2: np.ndarray
    u_geo: np.ndarray
    u_err: np.ndarray
    reconstruction_residual: float
    u_err_direct: Optional[np.ndarray] = None
    direct_residual: Optional[float] = None
    phases_end: Optional[np.ndarray] = None
    labels: tuple = ()


def _finish(u_total, pf, direct, tol, direct_tol):
    dyn = u_dyn(pf.v_end, pf.phases_end)
    g1 = u_g1(pf.v_start, pf.v_end)
    g2 = u_g2(pf)
    geo = g1 @ g2
    err = u_err_extracted(u_total, dyn, geo)
    residual = distance(dyn @ geo @ err, u_total)
    if residual > tol:
        raise ToleranceError(f"reconstruction residual {residual:.3e} exceeds {tol:.1e}",
                             difference=residual)
    err_d = direct_res = None
    if direct:
        err_d = u_err_direct(pf, check=False)
        direct_res = distance(dyn @ geo @ err_d, u_total)
        if direct_tol is not None and direct_res > direct_tol:
            raise ToleranceError(
                f"direct error evolution disagrees with the extracted one by "
                f"{direct_res:.3e} > {direct_tol:.1e}",
                coarse=err, fine=err_d, difference=direct_res)
    return EvolutionDecomposition(
        u_total=u_total, u_dyn=dyn, u_g1=g1, u_g2=g2, u_geo=geo, u_err=err,
        reconstruction_residual=residual, u_err_direct=err_d,
        direct_residual=direct_res, phases_end=pf.phases_end, labels=pf.labels)


def decompose_continuous(model, path, result=None, direct=True,
                         tol=RECONSTRUCTION_TOL, direct_tol=None, **propagate_kw):
    """Propagate (unless ``result`` is given) and factorize a continuous drive."""
    if result is None:
        result = propagate_continuous(model, path, **propagate_kw)
    pf = path_frames_continuous(model, path, result)
    return _finish(result.u_total, pf, direct, tol, direct_tol)


def decompose_pulses(model, seq, result=None, steps=DEFAULT_PATH_STEPS, direct=True,
                     tol=RECONSTRUCTION_TOL, direct_tol=None, order=DEFAULT_ORDER):
    """Factorize a pulse sequence along its interpolating path."""
    report = dyn_phase_condition_check(seq, _model_groups(model, seq))
    if not report.ok:
        lam, n, p, q, diff = report.violations[0]
        raise GeometricConditionError(
            f"pulse phases of columns {p} and {q} (group {n}) differ by {diff:.3e} "
            f"after pulse {lam}", report.violations)
    if result is None:
        result = propagate_pulses(model, seq)
    pf = path_frames_pulses(model, seq, steps=steps, order=order)
    return _finish(result.u_total, pf, direct, tol, direct_tol)


def _model_groups(model, seq):
    frames = frames_along(model, seq.path, seq.positions[:1])
    return frames.groups


@dataclass(frozen=True)
class ModulationTrace:
    """Samples of one modulation function ``F_ab`` along a path."""

    s: np.ndarray
    values: np.ndarray
    pair: tuple = (0, 1)

    def __post_init__(self):
        if len(self.values) and abs(self.values[0] - 1.0) > 1e-12:
            raise InvariantError("modulation trace must start at F = 1")
        if np.any(np.abs(np.abs(self.values) - 1.0) > 1e-12):
            raise InvariantError("modulation values must have unit modulus")


def modulation_trace_pulses(seq, pair=(0, 1), samples=1001):
    """F along the pulse path; constant between pulses."""
    path = seq.path
    s = np.linspace(path.t_start, path.t_end, samples)
    sums = seq.phase_sums()
    # Left-continuous: the value at a pulse position excludes that pulse.
    fired = np.searchsorted(seq.positions, s, side="left")
    a, b = pair
    values = unit_phase(sums[fired, a] - sums[fired, b])
    return ModulationTrace(s, values, tuple(pair))


def modulation_trace_continuous(model, path, pair=(0, 1), samples=1001, t_end=None,
                                refine=16):
    """F(t) from energies integrated on a grid ``refine`` times finer than the output."""
    from scipy.integrate import cumulative_simpson

    t_end = path.t_end if t_end is None else t_end
    dense = np.linspace(path.t_start, t_end, refine * (samples - 1) + 1)
    frames = frames_along(model, path, dense)
    a, b = pair
    gap = frames.energies[:, a] - frames.energies[:, b]
    phase = cumulative_simpson(gap, x=dense, initial=0.0)
    return ModulationTrace(dense[::refine], np.exp(1j * phase[::refine]), tuple(pair))
