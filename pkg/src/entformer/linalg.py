"""Complex linear algebra for bipartite density matrices.

Matrices are numpy ``complex128`` arrays. Most routines also accept a
stack of matrices with shape ``(..., n, n)`` and operate on each one, which
is how the samplers test thousands of states at once.
"""

import numpy as np

from . import config


class NonHermitianInput(ValueError):
    pass


class NoConvergence(RuntimeError):
    pass


class DegenerateInput(ValueError):
    pass


class EmptyBatch(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


def as_complex(a):
    return np.asarray(a, dtype=np.complex128)


def kron(a, b):
    """Kronecker product; entry ``(i*m + k, j*m + l)`` is ``a[i, j] * b[k, l]``."""
    a = as_complex(a)
    b = as_complex(b)
    n, m = a.shape[-1], b.shape[-1]
    out = a[..., :, None, :, None] * b[..., None, :, None, :]
    return out.reshape(a.shape[:-2] + (n * m, n * m))


def dagger(a):
    return np.conj(np.swapaxes(as_complex(a), -1, -2))


def frobenius_norm(a):
    a = as_complex(a)
    return np.sqrt(np.sum(a.real ** 2 + a.imag ** 2, axis=(-2, -1)))


def partial_transpose(rho, dims, subsystem="B"):
    """Transpose the indices of one tensor factor of a bipartite operator.

    With row index ``(i, k)`` and column index ``(j, l)``, subsystem ``"B"``
    swaps ``k`` and ``l`` and subsystem ``"A"`` swaps ``i`` and ``j``.
    """
    rho = as_complex(rho)
    d1, d2 = dims
    n = d1 * d2
    if rho.shape[-2:] != (n, n):
        raise DimensionMismatch(
            f"matrix side {rho.shape[-1]} does not match dims {d1}x{d2}")
    lead = rho.shape[:-2]
    t = rho.reshape(lead + (d1, d2, d1, d2))
    k = len(lead)
    if subsystem == "B":
        axes = (k, k + 3, k + 2, k + 1)
    elif subsystem == "A":
        axes = (k + 2, k + 1, k, k + 3)
    else:
        raise ValueError(f"subsystem must be 'A' or 'B', got {subsystem!r}")
    t = np.transpose(t, tuple(range(k)) + axes)
    return np.ascontiguousarray(t).reshape(lead + (n, n))


def _off_norm2(a):
    n = a.shape[-1]
    mask = ~np.eye(n, dtype=bool)
    off = a[..., mask]
    return np.sum(off.real ** 2 + off.imag ** 2, axis=-1)


def hermitian_eigenvalues(a, tol=None, max_sweeps=None, hermitian_tol=None):
    """Eigenvalues of a Hermitian matrix (or stack), ascending.

    Cyclic Jacobi: each sweep visits every pair ``(p, q)`` and applies the
    unitary rotation that zeroes ``a[p, q]``. A stack is processed in
    lockstep with one rotation per matrix per pair.
    """
    tol = config.JACOBI_REL_TOL if tol is None else tol
    max_sweeps = config.JACOBI_MAX_SWEEPS if max_sweeps is None else max_sweeps
    hermitian_tol = (config.HERMITIAN_INPUT_TOL if hermitian_tol is None
                     else hermitian_tol)

    a = as_complex(a)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    asym = frobenius_norm(a - dagger(a))
    if np.any(asym > hermitian_tol):
        raise NonHermitianInput(
            f"||A - A^H||_F = {np.max(asym):.3e} exceeds {hermitian_tol:.1e}")

    lead = a.shape[:-2]
    n = a.shape[-1]
    work = (0.5 * (a + dagger(a))).reshape((-1, n, n)).copy()
    threshold = (tol * frobenius_norm(work)) ** 2

    for _ in range(max_sweeps):
        pending = np.flatnonzero(_off_norm2(work) > threshold)
        if pending.size == 0:
            break
        sub = work[pending]
        for p in range(n - 1):
            for q in range(p + 1, n):
                _rotate(sub, p, q)
        work[pending] = sub
    else:
        if np.any(_off_norm2(work) > threshold):
            raise NoConvergence(f"Jacobi did not converge in {max_sweeps} sweeps")

    vals = np.sort(work.real[:, np.arange(n), np.arange(n)], axis=-1)
    return vals.reshape(lead + (n,))


def _rotate(a, p, q):
    # Phase-rotate a[p, q] onto the real axis, then apply the real Jacobi
    # rotation; column update by G and row update by G^H in place.
    apq = a[:, p, q]
    mag = np.abs(apq)
    active = mag > 0.0
    safe = np.where(active, mag, 1.0)
    phase = np.where(active, apq / safe, 1.0)
    app = a[:, p, p].real
    aqq = a[:, q, q].real
    theta = (aqq - app) / (2.0 * safe)
    big = np.abs(theta) > 1e100
    th = np.where(big, 1.0, theta)
    t = np.sign(th) / (np.abs(th) + np.sqrt(th * th + 1.0))
    t = np.where(theta == 0.0, 1.0, t)
    t = np.where(big, 0.5 / np.where(big, theta, 1.0), t)
    t = np.where(active, t, 0.0)
    c = 1.0 / np.sqrt(t * t + 1.0)
    s = t * c

    ph = np.conj(phase)
    g00 = c
    g01 = s
    g10 = -s * ph
    g11 = c * ph

    col_p = a[:, :, p].copy()
    col_q = a[:, :, q]
    a[:, :, p] = col_p * g00[:, None] + col_q * g10[:, None]
    a[:, :, q] = col_p * g01[:, None] + col_q * g11[:, None]
    row_p = a[:, p, :].copy()
    row_q = a[:, q, :]
    a[:, p, :] = row_p * np.conj(g00)[:, None] + row_q * np.conj(g10)[:, None]
    a[:, q, :] = row_p * np.conj(g01)[:, None] + row_q * np.conj(g11)[:, None]
    a[:, p, q] = 0.0
    a[:, q, p] = 0.0
    a[:, p, p] = a[:, p, p].real
    a[:, q, q] = a[:, q, q].real


def min_pt_eigenvalue(rho, dims, subsystem="B"):
    return hermitian_eigenvalues(partial_transpose(rho, dims, subsystem))[..., 0]


def is_npt(rho, dims, tol=None):
    """Peres-Horodecki test: ``(npt, min_pt_eigenvalue)``.

    ``npt`` is true iff the smallest eigenvalue of the partial transpose on
    subsystem B is below ``-tol``. Works elementwise on a stack.
    """
    tol = config.PPT_TOL if tol is None else tol
    lam = min_pt_eigenvalue(rho, dims)
    return lam < -tol, lam


def householder_qr(g):
    """Householder QR of a square matrix or stack; returns ``(q, r)``."""
    g = as_complex(g)
    single = g.ndim == 2
    r = g.reshape((-1,) + g.shape[-2:]).copy()
    b, n, _ = r.shape
    q = np.broadcast_to(np.eye(n, dtype=np.complex128), (b, n, n)).copy()
    for k in range(n):
        x = r[:, k:, k]
        norm_x = np.sqrt(np.sum(np.abs(x) ** 2, axis=-1))
        x0 = x[:, 0]
        mag0 = np.abs(x0)
        phase0 = np.where(mag0 > 0.0, x0 / np.where(mag0 > 0.0, mag0, 1.0), 1.0)
        alpha = -phase0 * norm_x
        v = x.copy()
        v[:, 0] -= alpha
        vnorm = np.sqrt(np.sum(np.abs(v) ** 2, axis=-1))
        ok = vnorm > 0.0
        v = np.where(ok[:, None], v / np.where(ok, vnorm, 1.0)[:, None], 0.0)
        # H = I - 2 v v^H, applied to the trailing rows of R and columns of Q
        r[:, k:, :] -= 2.0 * v[:, :, None] * np.einsum("bi,bij->bj", np.conj(v), r[:, k:, :])[:, None, :]
        q[:, :, k:] -= 2.0 * np.einsum("bij,bj->bi", q[:, :, k:], v)[:, :, None] * np.conj(v)[:, None, :]
    r = np.triu(r)
    if single:
        return q[0], r[0]
    return q.reshape(g.shape), r.reshape(g.shape)


def qr_unitary(g, degenerate_tol=None):
    """Unitary from the QR factors of ``g`` with the diagonal phases of R
    moved into Q, so a Ginibre input gives a Haar-distributed output."""
    degenerate_tol = (config.QR_DEGENERATE_TOL if degenerate_tol is None
                      else degenerate_tol)
    g = as_complex(g)
    if not np.all(np.isfinite(g)):
        raise ValueError("matrix has non-finite entries")
    q, r = householder_qr(g)
    diag = np.diagonal(r, axis1=-2, axis2=-1)
    mag = np.abs(diag)
    if np.any(mag < degenerate_tol):
        raise DegenerateInput("R has a vanishing diagonal entry")
    return q * (diag / mag)[..., None, :]


def hermitian_distance(batch):
    """Batch mean of ``sqrt(||A - A^H||_F)``.

    Note the square root of the norm, not the norm itself. ``batch`` is a
    list of square matrices or an ``(b, n, n)`` array.
    """
    if len(batch) == 0:
        raise EmptyBatch("hermitian_distance needs at least one matrix")
    if isinstance(batch, (list, tuple)):
        dist = []
        for m in batch:
            m = as_complex(m)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError(f"expected square matrix, got shape {m.shape}")
            dist.append(np.sqrt(frobenius_norm(m - dagger(m))))
        return float(np.mean(dist))
    mats = as_complex(batch)
    if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
        raise ValueError(f"expected (b, n, n) stack, got shape {mats.shape}")
    return float(np.mean(np.sqrt(frobenius_norm(mats - dagger(mats)))))


def check_density_matrix(rho, tol=None):
    """Raise ``ValueError`` unless ``rho`` is Hermitian, unit-trace and PSD."""
    tol = config.STATE_TOL if tol is None else tol
    rho = as_complex(rho)
    herm = frobenius_norm(rho - dagger(rho))
    if np.any(herm > tol):
        raise ValueError(f"not Hermitian: {np.max(herm):.3e}")
    tr = np.trace(rho, axis1=-2, axis2=-1)
    if np.any(np.abs(tr - 1.0) > tol):
        raise ValueError("trace differs from 1")
    lam = hermitian_eigenvalues(rho)[..., 0]
    if np.any(lam < -tol):
        raise ValueError(f"not PSD: min eigenvalue {np.min(lam):.3e}")
