"""Small dense complex linear algebra.

Everything here works on stacks of matrices: an input of shape
``(..., n, n)`` is processed as a batch, which is how the propagators
evaluate thousands of 2x2 exponentials at once.
"""
import numpy as np

from .errors import ConvergenceError, DimensionError, InvariantError

HERMITIAN_TOL = 1e-12
UNITARY_TOL = 1e-10
MAX_SWEEPS = 100


def _square(m):
    m = np.asarray(m)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise DimensionError(f"expected square matrices, got shape {m.shape}")
    return m


def check_hermitian(m, tol=HERMITIAN_TOL):
    """Return ``m`` as a complex array after validating Hermiticity."""
    m = _square(m).astype(complex)
    if not np.all(np.isfinite(m)):
        raise InvariantError("matrix has non-finite entries")
    norm = np.linalg.norm(m, axis=(-2, -1))
    defect = np.linalg.norm(m - np.swapaxes(m.conj(), -1, -2), axis=(-2, -1))
    if np.any(defect > tol * np.maximum(1.0, norm)):
        raise InvariantError(
            f"matrix is not Hermitian (|M - M^H|_F = {np.max(defect):.3e})")
    return m


def check_unitary(u, tol=UNITARY_TOL):
    u = _square(u).astype(complex)
    if not np.all(np.isfinite(u)):
        raise InvariantError("matrix has non-finite entries")
    defect = unitarity_defect(u)
    if np.any(defect > tol):
        raise InvariantError(
            f"matrix is not unitary (|U^H U - I|_F = {np.max(defect):.3e})")
    return u


def unitarity_defect(u):
    u = np.asarray(u)
    eye = np.eye(u.shape[-1])
    return np.linalg.norm(dagger(u) @ u - eye, axis=(-2, -1))


def dagger(m):
    return np.swapaxes(np.conj(m), -1, -2)


def _jacobi_rotate(a, v, p, q):
    # Complex rotation zeroing a[..., p, q] for every matrix in the batch.
    apq = a[:, p, q]
    r = np.abs(apq)
    live = r > 0.0
    phase = np.where(live, apq / np.where(live, r, 1.0), 1.0)
    r_safe = np.where(live, r, 1.0)
    tau = (a[:, q, q].real - a[:, p, p].real) / (2.0 * r_safe)
    sign = np.where(tau >= 0.0, 1.0, -1.0)
    t = np.where(live, sign / (np.abs(tau) + np.hypot(1.0, tau)), 0.0)
    c = 1.0 / np.sqrt(1.0 + t * t)
    s = t * c
    # block = diag(1, conj(phase)) @ [[c, s], [-s, c]]
    b_pp = c.astype(complex)
    b_pq = s.astype(complex)
    b_qp = -s * np.conj(phase)
    b_qq = c * np.conj(phase)

    col_p = a[:, :, p].copy()
    col_q = a[:, :, q]
    a[:, :, p] = col_p * b_pp[:, None] + col_q * b_qp[:, None]
    a[:, :, q] = col_p * b_pq[:, None] + col_q * b_qq[:, None]
    row_p = a[:, p, :].copy()
    row_q = a[:, q, :]
    a[:, p, :] = np.conj(b_pp)[:, None] * row_p + np.conj(b_qp)[:, None] * row_q
    a[:, q, :] = np.conj(b_pq)[:, None] * row_p + np.conj(b_qq)[:, None] * row_q
    a[:, p, q] = 0.0
    a[:, q, p] = 0.0

    vp = v[:, :, p].copy()
    vq = v[:, :, q]
    v[:, :, p] = vp * b_pp[:, None] + vq * b_qp[:, None]
    v[:, :, q] = vp * b_pq[:, None] + vq * b_qq[:, None]


def eig_hermitian(m, tol=1e-14, max_sweeps=MAX_SWEEPS):
    """Diagonalize Hermitian matrices by cyclic Jacobi rotations.

    Parameters
    ----------
    m : array_like, shape (..., n, n)
        Hermitian matrix or stack of Hermitian matrices.
    tol : float
        Sweeps stop once the off-diagonal Frobenius norm of every matrix in
        the batch is below ``tol * max(1, |m|_F)``.
    max_sweeps : int
        Iteration cap; exceeding it raises :class:`ConvergenceError`.

    Returns
    -------
    eigenvalues : ndarray, shape (..., n)
        Real eigenvalues in ascending order.
    eigenvectors : ndarray, shape (..., n, n)
        Orthonormal eigenvectors stored as columns.
    """
    m = check_hermitian(m)
    batch_shape = m.shape[:-2]
    n = m.shape[-1]
    a = m.reshape((-1, n, n)).copy()
    v = np.broadcast_to(np.eye(n, dtype=complex), a.shape).copy()
    scale = np.maximum(1.0, np.linalg.norm(a, axis=(-2, -1)))

    def off_norm():
        off = a - np.einsum("bii->bi", a)[:, :, None] * np.eye(n)
        return np.linalg.norm(off, axis=(-2, -1))

    pairs = [(p, q) for p in range(n - 1) for q in range(p + 1, n)]
    residual = off_norm()
    sweeps = 0
    while np.any(residual > tol * scale):
        if sweeps >= max_sweeps:
            worst = float(np.max(residual / scale))
            raise ConvergenceError(
                f"Jacobi eigensolver did not converge in {max_sweeps} sweeps "
                f"(relative off-diagonal norm {worst:.3e})", residual=worst)
        for p, q in pairs:
            _jacobi_rotate(a, v, p, q)
        residual = off_norm()
        sweeps += 1

    w = np.einsum("bii->bi", a).real
    order = np.argsort(w, axis=-1, kind="stable")
    w = np.take_along_axis(w, order, axis=-1)
    v = np.take_along_axis(v, order[:, None, :], axis=-1)
    return w.reshape(batch_shape + (n,)), v.reshape(batch_shape + (n, n))


def degenerate_groups(eigenvalues, norm=1.0, rel_tol=1e-12):
    """Split sorted eigenvalues into runs closer than ``rel_tol * max(1, norm)``.

    Returns a list of index lists.
    """
    thresh = rel_tol * max(1.0, norm)
    groups = [[0]]
    for k in range(1, len(eigenvalues)):
        if abs(eigenvalues[k] - eigenvalues[k - 1]) < thresh:
            groups[-1].append(k)
        else:
            groups.append([k])
    return groups


def expm_skew(a, scale=1.0):
    """Return ``exp(-1j * scale * a)`` for Hermitian ``a``.

    ``scale`` broadcasts against the batch dimensions of ``a``.
    """
    w, v = eig_hermitian(a)
    scale = np.asarray(scale, dtype=float)[..., None]
    phases = np.exp(-1j * scale * w)
    return (v * phases[..., None, :]) @ dagger(v)


def distance(a, b):
    """Frobenius distance between two matrices of equal shape."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def polar_unitary(m):
    """Unitary factor of the polar decomposition, via the SVD."""
    u, _, vh = np.linalg.svd(m)
    return u @ vh


def commutator(a, b):
    return a @ b - b @ a


def ordered_product(steps):
    """Time-ordered product ``steps[-1] @ ... @ steps[0]`` of a unitary stack.

    Returns the cumulative products as well: ``out[k]`` is the product of
    the first ``k`` steps (``out[0]`` is the identity).
    """
    steps = np.asarray(steps)
    n = steps.shape[-1]
    out = np.empty((len(steps) + 1, n, n), dtype=complex)
    out[0] = np.eye(n)
    for k, step in enumerate(steps):
        out[k + 1] = step @ out[k]
    return out


GAUSS2_NODES = np.array([0.5 - np.sqrt(3.0) / 6.0, 0.5 + np.sqrt(3.0) / 6.0])


def magnus_steps(generators, h, order=4):
    """One-step unitaries for ``i dU/ds = K(s) U``.

    Parameters
    ----------
    generators : ndarray
        Hermitian generator samples.  For ``order=2`` the shape is
        ``(K, n, n)`` (midpoints); for ``order=4`` it is ``(K, 2, n, n)``
        sampled at the two Gauss-Legendre nodes of each step.
    h : float or ndarray, shape (K,)
        Step lengths.
    order : {2, 4}
        2 is the exponential midpoint rule; 4 is the two-node Magnus
        expansion with its commutator correction.
    """
    h = np.broadcast_to(np.asarray(h, dtype=float), (len(generators),))
    if order == 2:
        heff = generators
    elif order == 4:
        k1 = generators[:, 0]
        k2 = generators[:, 1]
        heff = 0.5 * (k1 + k2) - 1j * (np.sqrt(3.0) / 12.0) * h[:, None, None] * commutator(k2, k1)
        heff = 0.5 * (heff + dagger(heff))
    else:
        raise ValueError(f"unsupported integrator order {order}")
    return expm_skew(heff, h)


def step_nodes(knots, order=4):
    """Sample positions inside each interval of ``knots`` for :func:`magnus_steps`."""
    knots = np.asarray(knots, dtype=float)
    h = np.diff(knots)
    if order == 2:
        return knots[:-1] + 0.5 * h
    if order == 4:
        return knots[:-1, None] + GAUSS2_NODES[None, :] * h[:, None]
    raise ValueError(f"unsupported integrator order {order}")
