"""Concrete scenarios: pulse trains on a cone and amplitude-modulated rotating fields.

Both scenario families use :class:`SpinHalfFieldModel`, a spin-1/2 in a
field of magnitude ``B`` tilted by ``theta`` from the z axis whose azimuth
``phi`` moves along the path.  Path callables are module-level classes so
scenarios can be shipped to worker processes.
"""
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad as adaptive_quad
from scipy.optimize import brentq

from .decompose import (DEFAULT_PATH_STEPS, DIRECT_TOL, ModulationTrace, decompose_continuous,
                        decompose_pulses, modulation_trace_continuous, modulation_trace_pulses)
from .errors import ConvergenceError, InvariantError, ToleranceError
from .hamiltonian import ParameterPath, SpinHalfFieldModel
from .metrics import QuadratureSpec, estimate_delta_u_err
from .propagate import DEFAULT_SLICES_PER_PERIOD, PulseSequence

DRIVE_KINDS = ("b_pi", "b_2pi", "b_const")
GAMMA_BRACKET = (1.0, 4.0)
QUAD_EPSABS = 1e-13
GAMMA = 2.342132472653136


@dataclass(frozen=True)
class CpScenario:
    """``n`` equally spaced pulses on the circle ``phi_0 -> phi_t`` at tilt ``theta``.

    Pulse ``mu`` sits at ``phi_0 + (phi_t - phi_0)(2 mu - 1)/(2 n)`` and
    rotates by ``g(mu) * angle`` about the field, with ``g`` alternating
    +1, -1, ...  ``angle = 2 pi`` gives the full-rotation variant.
    """

    theta: float
    n: int
    phi_0: float = 0.0
    phi_t: float = 2.0 * np.pi
    amplitude: float = 1.0
    angle: float = np.pi

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise InvariantError(f"pulse count must be a positive integer, got {self.n!r}")
        if not self.phi_t >= self.phi_0:
            raise InvariantError("phi_t must not be smaller than phi_0")
        if not self.amplitude > 0:
            raise InvariantError("field amplitude must be positive")

    def signs(self):
        mu = np.arange(1, self.n + 1)
        return np.where(mu % 2 == 1, 1.0, -1.0)

    def positions(self):
        mu = np.arange(1, self.n + 1)
        return (self.phi_t - self.phi_0) * (2 * mu - 1) / (2.0 * self.n) + self.phi_0


@dataclass(frozen=True)
class DriveScenario:
    """Rotating field ``phi = omega t`` on ``[0, T]`` with a modulated amplitude.

    ``n_prime`` fixes the modulation frequency ``Omega = 2 pi n_prime``.
    """

    kind: str
    n_prime: float
    theta: float = 0.5 * np.pi
    omega: float = 2.0 * np.pi
    t_total: float = 1.0
    gamma: float = GAMMA

    def __post_init__(self):
        if self.kind not in DRIVE_KINDS:
            raise InvariantError(f"unknown drive kind {self.kind!r}; expected one of {DRIVE_KINDS}")
        if not self.n_prime > 0:
            raise InvariantError("n_prime must be positive")
        if not self.t_total > 0:
            raise InvariantError("total time must be positive")

    @property
    def big_omega(self):
        return 2.0 * np.pi * self.n_prime

    @property
    def drive_period(self):
        return 2.0 * np.pi / self.big_omega


class CirclePath:
    """``s -> (B, s)``: constant field magnitude, azimuth equal to the parameter."""

    def __init__(self, amplitude=1.0):
        self.amplitude = amplitude

    def __call__(self, s):
        return np.stack([np.full_like(s, self.amplitude), s], axis=-1)


class DriveAmplitude:
    """Field magnitude ``B(t)`` of a drive kind."""

    def __init__(self, kind, big_omega, gamma=GAMMA):
        if kind not in DRIVE_KINDS:
            raise InvariantError(f"unknown drive kind {kind!r}")
        self.kind, self.big_omega, self.gamma = kind, big_omega, gamma

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        w, g = self.big_omega, self.gamma
        if self.kind == "b_const":
            return np.full_like(t, np.sqrt((2.0 + g * g) / 8.0) * w)
        b = 0.5 * w * (1.0 - g * np.cos(w * t))
        return 2.0 * b if self.kind == "b_2pi" else b

    def integral(self, t):
        """``int_0^t B(s) ds`` in closed form."""
        t = np.asarray(t, dtype=float)
        w, g = self.big_omega, self.gamma
        if self.kind == "b_const":
            return np.sqrt((2.0 + g * g) / 8.0) * w * t
        phase = 0.5 * (w * t - g * np.sin(w * t))
        return 2.0 * phase if self.kind == "b_2pi" else phase


class DrivePath:
    def __init__(self, amplitude, omega):
        self.amplitude, self.omega = amplitude, omega

    def __call__(self, t):
        return np.stack([self.amplitude(t), self.omega * t], axis=-1)


def build_cp(scenario):
    """Model and pulse sequence of a :class:`CpScenario`."""
    if scenario.phi_t == scenario.phi_0:
        raise InvariantError("a pulse sequence needs a path of nonzero length")
    model = SpinHalfFieldModel(theta=scenario.theta)
    path = ParameterPath(scenario.phi_0, scenario.phi_t, CirclePath(scenario.amplitude))
    g = scenario.signs()
    half = 0.5 * scenario.angle * g
    seq = PulseSequence(path, scenario.positions(), np.stack([half, -half], axis=-1), g)
    return model, seq


def build_drive(scenario):
    """Model and time path of a :class:`DriveScenario`."""
    model = SpinHalfFieldModel(theta=scenario.theta)
    amp = DriveAmplitude(scenario.kind, scenario.big_omega, scenario.gamma)
    path = ParameterPath(0.0, scenario.t_total, DrivePath(amp, scenario.omega),
                         period=scenario.drive_period)
    return model, path


def _half_period_sine(gamma):
    # With x = Omega t the drive-period average of exp(i int B_pi) reduces,
    # by the symmetry x -> 2 pi - x, to 2i/Omega times this real integral.
    value, _ = adaptive_quad(lambda x: np.sin(0.5 * (x - gamma * np.sin(x))), 0.0, np.pi,
                             epsabs=QUAD_EPSABS, epsrel=0.0, limit=200)
    return value


def gamma_objective(gamma, big_omega=1.0):
    """``|int_0^{2 pi/Omega} exp(i int_0^t B_pi) dt|`` by direct complex quadrature."""
    amp = DriveAmplitude("b_pi", big_omega, gamma)
    t_end = 2.0 * np.pi / big_omega
    re, _ = adaptive_quad(lambda t: np.cos(amp.integral(t)), 0.0, t_end,
                          epsabs=QUAD_EPSABS, epsrel=0.0, limit=200)
    im, _ = adaptive_quad(lambda t: np.sin(amp.integral(t)), 0.0, t_end,
                          epsabs=QUAD_EPSABS, epsrel=0.0, limit=200)
    return float(np.hypot(re, im))


def solve_gamma(tol=1e-12):
    """Modulation depth for which the B_pi phase factor averages to zero over a drive period.

    Brent's method on the signed reduced integral over ``[1, 4]``; ``tol``
    is the absolute tolerance on ``gamma``.
    """
    if not np.isfinite(tol) or not 1e-12 <= tol < 1e-2:
        raise InvariantError(f"gamma tolerance must lie in [1e-12, 1e-2), got {tol!r}")
    lo, hi = GAMMA_BRACKET
    f_lo, f_hi = _half_period_sine(lo), _half_period_sine(hi)
    if np.sign(f_lo) == np.sign(f_hi):
        raise ConvergenceError(f"no sign change of the gamma objective on [{lo}, {hi}]",
                               residual=min(abs(f_lo), abs(f_hi)))
    return float(brentq(_half_period_sine, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps))


@dataclass(frozen=True)
class SweepRow:
    sweep_var: float
    kind: str
    delta_u_err: float
    residual: float
    n_pulses_or_nprime: float
    theta: float
    seed: int


@dataclass(frozen=True)
class SweepResult:
    rows: tuple
    tol: float = DIRECT_TOL
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        keys = [(r.sweep_var, r.kind) for r in self.rows]
        if keys != sorted(keys):
            raise InvariantError("sweep rows must be sorted by sweep variable")
        bad = [r for r in self.rows if not r.residual <= self.tol]
        if bad:
            raise ToleranceError(
                f"{len(bad)} sweep point(s) exceed residual tolerance {self.tol:.1e} "
                f"(first at {bad[0].kind} {bad[0].sweep_var})", difference=bad[0].residual)

    def column(self, name, kind=None):
        return np.array([getattr(r, name) for r in self.rows if kind is None or r.kind == kind])


def _cp_point(args):
    scenario, quad, steps = args
    model, seq = build_cp(scenario)
    dec = decompose_pulses(model, seq, steps=steps, direct=True)
    est = estimate_delta_u_err(dec.u_err, quad)
    kind = "cp_even" if scenario.n % 2 == 0 else "cp_odd"
    return SweepRow(float(scenario.n), kind, est.value, float(dec.direct_residual),
                    float(scenario.n), float(scenario.theta), int(quad.seed))


def _drive_point(args):
    scenario, quad, slices = args
    model, path = build_drive(scenario)
    dec = decompose_continuous(model, path, direct=True, slices_per_period=slices)
    est = estimate_delta_u_err(dec.u_err, quad)
    return SweepRow(float(scenario.n_prime), scenario.kind, est.value,
                    float(dec.direct_residual), float(scenario.n_prime),
                    float(scenario.theta), int(quad.seed))


def resolve_jobs(jobs=None):
    """Worker count from the argument, else ``ADIASCOPE_JOBS``, else 1."""
    if jobs is None:
        env = os.environ.get("ADIASCOPE_JOBS", "").strip()
        if not env:
            return 1
        try:
            jobs = int(env)
        except ValueError:
            raise InvariantError(f"ADIASCOPE_JOBS must be an integer, got {env!r}") from None
    if int(jobs) != jobs or jobs < 1:
        raise InvariantError(f"job count must be a positive integer, got {jobs!r}")
    return int(jobs)


def _run(worker, tasks, jobs):
    jobs = resolve_jobs(jobs)
    if jobs == 1 or len(tasks) < 2:
        return [worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
        return list(pool.map(worker, tasks))


def _merge(rows, tol, meta):
    return SweepResult(tuple(sorted(rows, key=lambda r: (r.sweep_var, r.kind))), tol, meta)


def sweep_cp(theta, n_values, phi_0=0.0, phi_t=2.0 * np.pi, quad=None, jobs=None,
             steps=DEFAULT_PATH_STEPS, tol=DIRECT_TOL, angle=np.pi):
    """Error measure of pulse trains for every pulse count in ``n_values``.

    ``residual`` is the distance between ``U`` and the factor product built
    with the independently integrated error evolution.
    """
    n_values = sorted({int(n) for n in n_values})
    if not n_values:
        raise InvariantError("pulse-count range is empty")
    quad = QuadratureSpec() if quad is None else quad
    tasks = [(CpScenario(theta, n, phi_0, phi_t, angle=angle), quad, steps)
             for n in n_values]
    rows = _run(_cp_point, tasks, jobs)
    return _merge(rows, tol, {"scenario": "cp", "theta": theta, "phi_0": phi_0,
                              "phi_t": phi_t, "steps": steps})


def sweep_drive(kinds, n_primes, t_total=1.0, omega=2.0 * np.pi, theta=0.5 * np.pi,
                gamma=GAMMA, quad=None, jobs=None,
                slices_per_period=DEFAULT_SLICES_PER_PERIOD, tol=DIRECT_TOL):
    """Error measure of the continuous drives for every ``kind`` and ``n_prime``."""
    kinds = list(dict.fromkeys(kinds))
    n_primes = sorted({float(x) for x in n_primes})
    if not kinds or not n_primes:
        raise InvariantError("drive sweep needs at least one kind and one n_prime")
    quad = QuadratureSpec() if quad is None else quad
    tasks = [(DriveScenario(k, x, theta, omega, t_total, gamma), quad, slices_per_period)
             for k in kinds for x in n_primes]
    rows = _run(_drive_point, tasks, jobs)
    return _merge(rows, tol, {"scenario": "drive", "theta": theta, "omega": omega,
                              "t_total": t_total, "gamma": gamma})


def modulation_trace(scenario, samples=1001):
    """``F`` between the two levels for a scenario.

    Pulse trains are sampled over the whole path in ``phi``; drives over one
    modulation period, with the abscissa scaled to ``[0, 1]``.  A path of
    zero length yields the single sample ``F = 1``.
    """
    if samples < 2:
        raise InvariantError("need at least two samples")
    if isinstance(scenario, CpScenario):
        if scenario.phi_t == scenario.phi_0:
            return ModulationTrace(np.array([scenario.phi_0]), np.ones(1, dtype=complex))
        _, seq = build_cp(scenario)
        return modulation_trace_pulses(seq, samples=samples)
    if isinstance(scenario, DriveScenario):
        model, path = build_drive(scenario)
        trace = modulation_trace_continuous(model, path, samples=samples,
                                            t_end=scenario.drive_period)
        return ModulationTrace(trace.s / scenario.drive_period, trace.values, trace.pair)
    raise InvariantError(f"unsupported scenario type {type(scenario).__name__}")
