"""State-averaged error deviation and summary reports."""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, InvariantError
from .linalg import check_unitary

DEFAULT_SEED = 0x5EED
CONVERGENCE_RTOL = 1e-6
CONVERGENCE_ATOL = 1e-13


@dataclass(frozen=True)
class QuadratureSpec:
    """How to average over initial pure states.

    ``grid`` is Gauss-Legendre in cos(polar angle) times a uniform
    azimuthal rule on the Bloch sphere (dimension 2 only); ``mc`` draws
    Haar-random states.
    """

    method: str = "grid"
    n_polar: int = 64
    n_azimuth: int = 128
    samples: int = 100_000
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.method not in ("grid", "mc"):
            raise InvariantError(f"unknown quadrature method {self.method!r}")
        if self.method == "grid" and (self.n_polar < 8 or self.n_azimuth < 16):
            raise InvariantError("grid quadrature needs at least 8 x 16 nodes")
        if self.method == "mc" and self.samples < 1000:
            raise InvariantError("Monte Carlo needs at least 1000 samples")

    def refined(self):
        return QuadratureSpec(self.method, 2 * self.n_polar, 2 * self.n_azimuth,
                              self.samples, self.seed)


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float = 0.0
    method: str = "grid"
    nodes: int = 0
    seed: int = DEFAULT_SEED


def bloch_grid(n_polar, n_azimuth):
    """States and weights (summing to 1) of the product rule on the Bloch sphere."""
    x, wx = np.polynomial.legendre.leggauss(n_polar)
    beta = 2.0 * np.pi * np.arange(n_azimuth) / n_azimuth
    cos_half = np.sqrt(0.5 * (1.0 + x))
    sin_half = np.sqrt(0.5 * (1.0 - x))
    states = np.empty((n_polar, n_azimuth, 2), dtype=complex)
    states[..., 0] = cos_half[:, None]
    states[..., 1] = sin_half[:, None] * np.exp(1j * beta)[None, :]
    weights = np.broadcast_to((0.5 * wx)[:, None] / n_azimuth, (n_polar, n_azimuth))
    return states.reshape(-1, 2), weights.ravel()


def haar_states(dim, samples, seed=DEFAULT_SEED):
    """Haar-random pure states from normalized complex Gaussians (Philox stream)."""
    rng = np.random.Generator(np.random.Philox(seed))
    z = rng.standard_normal((samples, dim)) + 1j * rng.standard_normal((samples, dim))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _deviation(u, states):
    m = u - np.eye(u.shape[0])
    return np.abs(np.einsum("si,ij,sj->s", states.conj(), m, states))


def bloch_product_average(u, n_polar, n_azimuth):
    """Product-rule average with the polar axis along the computational basis.

    Converges slowly when ``u`` is close to the identity; kept as an
    independent cross-check of :func:`estimate_delta_u_err`.
    """
    states, weights = bloch_grid(n_polar, n_azimuth)
    return float(np.dot(weights, _deviation(np.asarray(u), states)))


def _abs_linear_mean(a, b, n):
    """(1/2) * integral over [-1, 1] of |a + b x| dx by Gauss-Legendre.

    |a + b x| = |b| sqrt(u^2 + d^2) with u = x - x*; each side of x* is
    mapped by u = d sinh(tau), which turns the near-kink into a smooth
    integrand |b| (u^2 + d^2) in tau.
    """
    nb = abs(b)
    if nb == 0.0:
        return abs(a)
    x_star = -(a * np.conj(b)).real / nb ** 2
    d = np.sqrt(max(abs(a) ** 2 - nb ** 2 * x_star ** 2, 0.0)) / nb
    lo, hi = -1.0 - x_star, 1.0 - x_star
    nodes, weights = np.polynomial.legendre.leggauss(n)
    total = 0.0
    for u0, u1 in ((lo, min(0.0, hi)), (max(0.0, lo), hi)):
        if u1 <= u0:
            continue
        if d == 0.0:
            u = 0.5 * (u1 - u0) * nodes + 0.5 * (u1 + u0)
            total += 0.5 * (u1 - u0) * np.dot(weights, nb * np.abs(u))
            continue
        t0, t1 = np.arcsinh(u0 / d), np.arcsinh(u1 / d)
        tau = 0.5 * (t1 - t0) * nodes + 0.5 * (t1 + t0)
        u = d * np.sinh(tau)
        total += 0.5 * (t1 - t0) * np.dot(weights, nb * (u * u + d * d))
    return 0.5 * total


def _eigenframe_average(u, n_polar):
    # Unitary invariance of the state average: only the eigenvalues of u
    # matter.  With the polar axis on the first eigenvector, cos(polar)
    # = 2p - 1 and the azimuthal rule is exact.
    lam = np.linalg.eigvals(u)
    c1, c2 = lam[0] - 1.0, lam[1] - 1.0
    return float(_abs_linear_mean(0.5 * (c1 + c2), 0.5 * (c1 - c2), n_polar))


def estimate_delta_u_err(u_err, quad=None):
    """Average of ``|<psi|(U_err - I)|psi>|`` over pure states, with metadata.

    In dimension 2 the grid rule runs on the Bloch sphere whose polar axis
    is the eigenbasis of ``U_err``; it is checked against a rule with twice
    the nodes and a relative change above 1e-6 raises
    :class:`ConvergenceError`.  Other cases use Haar Monte Carlo and report
    the standard error.
    """
    quad = QuadratureSpec() if quad is None else quad
    u = check_unitary(u_err)
    dim = u.shape[0]
    if quad.method == "grid" and dim == 2:
        value = _eigenframe_average(u, quad.n_polar)
        check = _eigenframe_average(u, 2 * quad.n_polar)
        if abs(value - check) > CONVERGENCE_RTOL * abs(check) + CONVERGENCE_ATOL:
            raise ConvergenceError(
                f"Bloch-sphere quadrature not converged: {value!r} vs {check!r} "
                "on the refined grid", residual=abs(value - check))
        return Estimate(value, 0.0, "grid", quad.n_polar * quad.n_azimuth, quad.seed)
    samples = quad.samples if quad.method == "mc" else QuadratureSpec("mc").samples
    dev = _deviation(u, haar_states(dim, samples, quad.seed))
    return Estimate(float(dev.mean()), float(dev.std(ddof=1) / np.sqrt(samples)),
                    "mc", samples, quad.seed)


def delta_u_err(u_err, quad=None):
    """State-averaged error deviation (see :func:`estimate_delta_u_err`)."""
    return estimate_delta_u_err(u_err, quad).value


def eigenphases(u):
    """Sorted eigenphases in (-pi, pi]."""
    return np.sort(np.angle(np.linalg.eigvals(u)))


@dataclass
class AdiabaticityReport:
    delta_u_err: float
    delta_u_err_stderr: float
    err_frobenius: float
    reconstruction_residual: float
    direct_residual: object
    geo_eigenphases: np.ndarray
    dynamic_phases: np.ndarray
    quadrature: str
    seed: int
    extra: dict = field(default_factory=dict)

    def lines(self):
        out = [
            f"delta_u_err            {self.delta_u_err:.12g}",
            f"delta_u_err_stderr     {self.delta_u_err_stderr:.3g}",
            f"|U_err - I|_F          {self.err_frobenius:.12g}",
            f"reconstruction_residual {self.reconstruction_residual:.3e}",
        ]
        if self.direct_residual is not None:
            out.append(f"direct_residual        {self.direct_residual:.3e}")
        out.append("geo_eigenphases        " + " ".join(f"{x:.12g}" for x in self.geo_eigenphases))
        out.append("dynamic_phases         " + " ".join(f"{x:.12g}" for x in self.dynamic_phases))
        out.append(f"quadrature             {self.quadrature} seed={self.seed}")
        for key, value in self.extra.items():
            out.append(f"{key:<23}{value}")
        return out


def adiabaticity_report(decomp, quad=None, **extra):
    quad = QuadratureSpec() if quad is None else quad
    est = estimate_delta_u_err(decomp.u_err, quad)
    return AdiabaticityReport(
        delta_u_err=est.value,
        delta_u_err_stderr=est.stderr,
        err_frobenius=float(np.linalg.norm(decomp.u_err - np.eye(decomp.u_err.shape[0]))),
        reconstruction_residual=decomp.reconstruction_residual,
        direct_residual=decomp.direct_residual,
        geo_eigenphases=eigenphases(decomp.u_geo),
        dynamic_phases=np.asarray(decomp.phases_end),
        quadrature=est.method,
        seed=est.seed,
        extra=dict(extra),
    )
