"""Small dense complex linear algebra.

Matrices and state vectors are plain ``numpy`` arrays of ``complex128``.
Subsystem 0 is always the leftmost tensor factor, i.e. the most significant
index in row-major addressing: for two qubits ``|ab>`` sits at index ``2*a + b``.
"""
from dataclasses import dataclass
from functools import reduce

import numpy as np

from rotlab.errors import DimensionError, NotPSDError, ValidationError

ATOL = 1e-9
CLAMP = 1e-9
NOISE_FLOOR = 1e-12


def as_matrix(m):
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-d matrix, got shape {m.shape}")
    return m


def _square(m):
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {m.shape}")
    return m


def ket(*amplitudes):
    return np.array(amplitudes, dtype=complex)


def projector(v):
    v = np.asarray(v, dtype=complex)
    return np.outer(v, v.conj())


def dagger(m):
    return np.conj(np.transpose(m))


def tensor(*factors):
    """Kronecker product; the first factor is the leftmost subsystem."""
    return reduce(np.kron, [np.asarray(f, dtype=complex) for f in factors])


def partial_trace(m, dims, keep):
    """Reduce ``m`` onto the subsystems listed in ``keep``.

    ``dims`` gives the dimension of every subsystem; their product must equal
    the side length of ``m``. The kept subsystems stay in their original order.
    """
    m = _square(m)
    dims = [int(d) for d in dims]
    if int(np.prod(dims)) != m.shape[0]:
        raise DimensionError(f"subsystem dims {dims} do not match matrix side {m.shape[0]}")
    keep = sorted({int(k) for k in keep})
    if any(k < 0 or k >= len(dims) for k in keep):
        raise DimensionError(f"keep={keep} out of range for {len(dims)} subsystems")
    n = len(dims)
    t = m.reshape(dims + dims)
    traced = [i for i in range(n) if i not in keep]
    # trace out from the highest axis down so earlier axis numbers stay valid
    for count, i in enumerate(sorted(traced, reverse=True)):
        width = n - count
        t = np.trace(t, axis1=i, axis2=i + width)
    side = int(np.prod([dims[k] for k in keep])) if keep else 1
    return t.reshape(side, side)


@dataclass(frozen=True)
class HermEig:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns, index-aligned with eigenvalues

    def vector(self, i):
        return self.eigenvectors[:, i]


def hermiticity_violation(m):
    m = _square(m)
    return float(np.max(np.abs(m - dagger(m)))) if m.size else 0.0


def herm_eig(m, atol=ATOL):
    m = _square(m)
    violation = hermiticity_violation(m)
    if violation > atol:
        raise ValidationError(f"matrix is not Hermitian (max violation {violation:.3g})")
    w, v = np.linalg.eigh((m + dagger(m)) / 2)
    order = np.argsort(w)[::-1]
    return HermEig(w[order], v[:, order])


def _psd_eig(m):
    eig = herm_eig(m)
    w = eig.eigenvalues
    if w.size and w.min() < -CLAMP:
        raise NotPSDError(f"matrix has eigenvalue {w.min():.3g} below -{CLAMP:g}")
    # roundoff-level eigenvalues are zeroed so sqrt() does not amplify them to ~1e-8
    w = np.where(w < NOISE_FLOOR, 0.0, w)
    return w, eig.eigenvectors


def sqrt_psd(m):
    """Principal square root of a PSD matrix."""
    w, v = _psd_eig(m)
    return (v * np.sqrt(w)) @ dagger(v)


def pinv_psd(m, tol=ATOL):
    """Moore-Penrose pseudo-inverse of a PSD matrix; eigenvalues <= ``tol`` map to 0."""
    w, v = _psd_eig(m)
    inv = np.zeros_like(w)
    mask = w > tol
    inv[mask] = 1.0 / w[mask]
    return (v * inv) @ dagger(v)


def trace_norm(m):
    m = _square(m)
    if not m.size:
        return 0.0
    return float(np.sum(np.linalg.svd(m, compute_uv=False)))


@dataclass(frozen=True)
class OperatorReport:
    hermitian: bool
    psd: bool
    max_violation: float


def validate_operator(m, tol=ATOL):
    """Report Hermiticity and positivity of ``m``.

    ``max_violation`` is the larger of the Hermiticity defect and the most
    negative eigenvalue of the Hermitian part (0 if none).
    """
    m = _square(m)
    herm_defect = hermiticity_violation(m)
    w = np.linalg.eigvalsh((m + dagger(m)) / 2)
    neg = float(max(0.0, -w.min())) if w.size else 0.0
    hermitian = herm_defect <= tol
    return OperatorReport(hermitian, hermitian and neg <= tol, max(herm_defect, neg))


def fidelity(u, v):
    """|<u|v>|^2 for normalized pure states; insensitive to global phase."""
    return float(abs(np.vdot(u, v)) ** 2)


def is_normalized(v, atol=ATOL):
    return abs(np.vdot(v, v).real - 1.0) <= atol
