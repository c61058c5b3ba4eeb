"""Time-ordered propagators for continuous drives and delta-pulse sequences."""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvariantError, ToleranceError
from .hamiltonian import FrameSeries, ParameterPath, frames_along
from .linalg import dagger, distance, magnus_steps, ordered_product, step_nodes

DEFAULT_SLICES_PER_PERIOD = 256
MIN_SLICES = 1024
DEFAULT_ORDER = 4
DOUBLING_TOL = 1e-8
TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class PulseSequence:
    """Instantaneous pulses ``P(R_mu) = sum exp(-i theta) |n_j><n_j|``.

    ``positions`` are values of the path parameter at which the pulses
    fire; ``path`` is the smooth curve through the pulse points that the
    decomposition integrates along.  ``phases[mu, k]`` is the phase
    applied to label column ``k`` by pulse ``mu``.
    """

    path: ParameterPath
    positions: np.ndarray
    phases: np.ndarray
    signs: Optional[np.ndarray] = None

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=float)
        phases = np.atleast_2d(np.asarray(self.phases, dtype=float))
        if positions.ndim != 1 or len(positions) == 0:
            raise InvariantError("a pulse sequence needs at least one pulse")
        if len(phases) != len(positions):
            raise InvariantError(
                f"{len(positions)} pulse positions but {len(phases)} phase rows")
        if np.any(np.diff(positions) < 0):
            raise InvariantError("pulse positions must be non-decreasing")
        if positions[0] < self.path.t_start or positions[-1] > self.path.t_end:
            raise InvariantError("pulse positions fall outside the path interval")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "phases", phases)

    def __len__(self):
        return len(self.positions)

    @property
    def points(self):
        return self.path(self.positions)

    def phase_sums(self):
        """Prefix sums of the pulse phases, starting with a zero row."""
        out = np.zeros((len(self) + 1, self.phases.shape[1]))
        np.cumsum(self.phases, axis=0, out=out[1:])
        return out


@dataclass(frozen=True)
class EvolutionResult:
    """Propagator and accumulated dynamic phases on a checkpoint grid.

    ``phase_integrals[k]`` holds the per-label integral of the energy from
    the start up to ``checkpoints[k]``; ``partials[k]`` is ``U`` at that
    checkpoint.  Continuous runs also keep the labelled frames and phases
    at the interior integration nodes (``node_*``) for the decomposition.
    """

    u_total: np.ndarray
    checkpoints: np.ndarray
    phase_integrals: np.ndarray
    partials: np.ndarray
    labels: tuple
    groups: tuple
    frames: Optional[FrameSeries] = None
    node_times: Optional[np.ndarray] = None
    node_vectors: Optional[np.ndarray] = None
    node_phases: Optional[np.ndarray] = None
    order: int = DEFAULT_ORDER
    kind: str = "continuous"
    doubling_error: Optional[float] = None

    def phase_integral_at(self, t):
        k = int(np.argmin(np.abs(self.checkpoints - t)))
        if abs(self.checkpoints[k] - t) > 1e-12 * max(1.0, abs(t)):
            raise InvariantError(f"no checkpoint at t={t}")
        return self.phase_integrals[k]


def _interp_weights(order):
    # Integrals over [0, x] of the Lagrange basis through the knot ends and
    # the interior nodes; rows are x = node positions followed by x = 1.
    inner = np.array([0.5]) if order == 2 else np.asarray(step_nodes([0.0, 1.0], order))[0]
    pts = np.concatenate([[0.0], inner, [1.0]])
    m = len(pts)
    vander = np.vander(pts, m, increasing=True)
    rows = []
    for x in list(inner) + [1.0]:
        moments = np.array([x ** (p + 1) / (p + 1) for p in range(m)])
        rows.append(np.linalg.solve(vander.T, moments))
    return np.array(rows)


def _knot_grid(path, slices):
    return np.linspace(path.t_start, path.t_end, slices + 1)


def _generators(model, path, knots, order):
    nodes = step_nodes(knots, order)
    hs = model.hamiltonian(path(nodes.ravel()))
    return hs.reshape(nodes.shape + hs.shape[-2:]), nodes


def _slice_count(path, slices_per_period, min_slices):
    period = path.period if path.period is not None else path.span
    return max(min_slices, int(np.ceil(slices_per_period * path.span / period - 1e-9)))


def propagate_continuous(model, path, slices_per_period=DEFAULT_SLICES_PER_PERIOD,
                         order=DEFAULT_ORDER, tol=DOUBLING_TOL, check=True,
                         min_slices=MIN_SLICES):
    """Solve ``i dU/dt = H(R(t)) U`` on ``path`` as a product of exponentials.

    Parameters
    ----------
    model : HamiltonianModel
    path : ParameterPath
        ``path.period`` fixes the time unit for ``slices_per_period``.
    slices_per_period : int
        At least 16.  The total slice count never drops below
        ``min_slices``.
    order : {2, 4}
        Exponential midpoint rule or the two-node Magnus integrator.  Both
        are unitary at every step.
    tol : float
        With ``check`` on, the propagator is recomputed with twice as many
        slices and :class:`ToleranceError` is raised when the two differ by
        more than ``tol`` (Frobenius).

    Returns
    -------
    EvolutionResult
    """
    if slices_per_period < 16:
        raise InvariantError("slices_per_period must be at least 16")
    n = _slice_count(path, slices_per_period, min_slices)
    knots = _knot_grid(path, n)
    hs, nodes = _generators(model, path, knots, order)
    h = np.diff(knots)
    partials = ordered_product(magnus_steps(hs, h, order))
    u_total = partials[-1]

    doubling_error = None
    if check:
        fine_knots = _knot_grid(path, 2 * n)
        fine_hs, _ = _generators(model, path, fine_knots, order)
        fine = ordered_product(magnus_steps(fine_hs, np.diff(fine_knots), order))[-1]
        doubling_error = distance(u_total, fine)
        if doubling_error > tol:
            raise ToleranceError(
                f"step doubling changed U(T) by {doubling_error:.3e} > {tol:.1e}; "
                "increase slices_per_period",
                coarse=u_total, fine=fine, difference=doubling_error)

    # Frames on the merged grid knot, node(s), knot, ... so that labels are
    # continued through every point where energies are needed.
    nodes2 = nodes.reshape(n, -1)
    m = nodes2.shape[1]
    merged = np.concatenate([np.column_stack([knots[:-1], nodes2]).ravel(), knots[-1:]])
    series = frames_along(model, path, merged)
    energies = series.energies
    vectors = series.vectors
    knot_idx = np.arange(n + 1) * (m + 1)
    node_idx = knot_idx[:-1, None] + 1 + np.arange(m)[None, :]

    # Per-step cubic (or quadratic) interpolant of the energies.
    weights = _interp_weights(order)
    samples = np.concatenate(
        [energies[knot_idx[:-1]][:, None, :], energies[node_idx],
         energies[knot_idx[1:]][:, None, :]], axis=1)
    partial_int = np.einsum("rp,kpd->krd", weights, samples) * h[:, None, None]
    phase_knots = np.zeros((n + 1, model.dim))
    np.cumsum(partial_int[:, -1, :], axis=0, out=phase_knots[1:])
    node_phases = phase_knots[:-1, None, :] + partial_int[:, :-1, :]

    frames = FrameSeries(knots, energies[knot_idx], vectors[knot_idx],
                         series.labels, series.groups, series.gauge)
    return EvolutionResult(
        u_total=u_total, checkpoints=knots, phase_integrals=phase_knots,
        partials=partials, labels=series.labels, groups=series.groups,
        frames=frames, node_times=nodes2, node_vectors=vectors[node_idx],
        node_phases=node_phases, order=order, kind="continuous",
        doubling_error=doubling_error)


def pulse_frames(model, seq, samples=1024):
    """Labelled frames at the pulse positions of ``seq``.

    Numeric frames are chained along a dense sampling of the path so that
    labels are continued smoothly between widely spaced pulses.
    """
    path = seq.path
    dense = np.union1d(np.linspace(path.t_start, path.t_end, samples + 1), seq.positions)
    series = frames_along(model, path, dense)
    idx = np.searchsorted(dense, seq.positions)
    return FrameSeries(seq.positions, series.energies[idx], series.vectors[idx],
                       series.labels, series.groups, series.gauge), series


def propagate_pulses(model, seq):
    """``U = P(R_N) ... P(R_1)`` with each pulse diagonal in its own frame."""
    if seq.phases.shape[1] != model.dim:
        raise InvariantError(
            f"phase table has {seq.phases.shape[1]} columns; the model has "
            f"{model.dim} eigenlabels")
    frames, _ = pulse_frames(model, seq)
    v = frames.vectors
    pulses = (v * np.exp(-1j * seq.phases)[:, None, :]) @ dagger(v)
    partials = ordered_product(pulses)
    checkpoints = np.concatenate([[seq.path.t_start], seq.positions])
    return EvolutionResult(
        u_total=partials[-1], checkpoints=checkpoints,
        phase_integrals=seq.phase_sums(), partials=partials,
        labels=frames.labels, groups=frames.groups, frames=frames,
        order=0, kind="pulses")


@dataclass(frozen=True)
class ConditionReport:
    ok: bool
    violations: list

    def __bool__(self):
        return self.ok


def dyn_phase_condition_check(seq, groups=None, tol=1e-9):
    """Check that same-group phase differences stay in ``2*pi*Z``.

    Every prefix of the sequence is checked for every ordered pair
    ``(p, q)`` inside each level group.  ``groups`` lists the label
    columns of each group; by default every level is its own group, which
    makes the condition hold trivially.  Violations are reported as
    ``(prefix, n, p, q, difference)``.
    """
    dim = seq.phases.shape[1]
    if groups is None:
        groups = tuple((k,) for k in range(dim))
    sums = seq.phase_sums()[1:]
    violations = []
    for lam, row in enumerate(sums, start=1):
        for n, g in enumerate(groups):
            for j, p in enumerate(g):
                for q in g[j + 1:]:
                    diff = row[p] - row[q]
                    wrapped = diff - TWO_PI * np.round(diff / TWO_PI)
                    if abs(wrapped) > tol:
                        violations.append((lam, n, p, q, float(diff)))
    return ConditionReport(not violations, violations)
