"""Dense complex tensor primitives.

Tensors are plain ``numpy.ndarray`` objects in C (row-major) order; leg ``k``
is axis ``k``.  Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import numpy as np

DEFAULT_RANK_TOL = 1e-10


class TensorError(ValueError):
    """Raised for malformed tensor operations (bad legs, bad shapes)."""


class RankDeficientError(np.linalg.LinAlgError):
    """A factorization needed full rank but the input was singular."""


class DegenerateSpectrumError(np.linalg.LinAlgError):
    """The dominant eigenvalue of a transfer matrix is not unique.

    ``eigenvalues`` holds every eigenvalue whose modulus ties with the
    spectral radius.
    """

    def __init__(self, message: str, eigenvalues: np.ndarray):
        super().__init__(message)
        self.eigenvalues = eigenvalues


def as_tensor(data, shape=None) -> np.ndarray:
    """Return a complex copy of ``data``, optionally reshaped, with validated legs."""
    arr = np.array(data, dtype=complex)
    if shape is not None:
        arr = arr.reshape(shape)
    if any(dim < 1 for dim in arr.shape):
        raise TensorError(f"leg dimensions must be positive, got {arr.shape}")
    return arr


def contract(a: np.ndarray, b: np.ndarray, pairs) -> np.ndarray:
    """Contract legs of ``a`` with legs of ``b``.

    ``pairs`` is a sequence of ``(leg_of_a, leg_of_b)``.  The result carries
    the unpaired legs of ``a`` (in order) followed by the unpaired legs of
    ``b``.
    """
    pairs = [(int(i), int(j)) for i, j in pairs]
    legs_a = [i for i, _ in pairs]
    legs_b = [j for _, j in pairs]
    if len(set(legs_a)) != len(legs_a) or len(set(legs_b)) != len(legs_b):
        raise TensorError(f"repeated leg in contraction pairs {pairs}")
    for i, j in pairs:
        if not (0 <= i < a.ndim and 0 <= j < b.ndim):
            raise TensorError(f"leg pair {(i, j)} out of range for ranks {a.ndim}, {b.ndim}")
        if a.shape[i] != b.shape[j]:
            raise TensorError(
                f"dimension mismatch on legs {(i, j)}: {a.shape[i]} != {b.shape[j]}"
            )
    return np.tensordot(a, b, axes=(legs_a, legs_b))


def singular_values(m: np.ndarray) -> np.ndarray:
    return np.linalg.svd(np.asarray(m), compute_uv=False)


def svd_rank(m: np.ndarray, rel_tol: float = DEFAULT_RANK_TOL) -> int:
    """Number of singular values above ``rel_tol * sigma_max``; 0 for a zero matrix."""
    if not 0 < rel_tol < 1:
        raise ValueError(f"rel_tol must lie in (0, 1), got {rel_tol}")
    m = np.asarray(m)
    if m.size == 0:
        return 0
    s = singular_values(m)
    if s[0] == 0:
        return 0
    return int(np.count_nonzero(s > rel_tol * s[0]))


def qr_positive(m: np.ndarray, tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """QR decomposition with the diagonal of ``R`` made real and positive.

    The phase of each diagonal entry of ``R`` is moved into the matching
    column of ``Q``, which makes the factorization unique.
    """
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise TensorError(f"qr_positive needs a square matrix, got shape {m.shape}")
    q, r = np.linalg.qr(m)
    diag = np.diag(r)
    scale = np.abs(diag)
    if np.any(scale <= tol * max(1.0, np.abs(m).max())):
        raise RankDeficientError("matrix is rank deficient: zero on the diagonal of R")
    phases = diag / scale
    return q * phases, phases.conj()[:, None] * r


def _fix_phase(vec: np.ndarray) -> np.ndarray:
    # Make the trace of the reshaped D x D matrix real positive when it is
    # (up to a phase) Hermitian; otherwise make the largest entry real positive.
    dim = int(round(np.sqrt(vec.size)))
    if dim * dim == vec.size:
        tr = np.trace(vec.reshape(dim, dim))
        if abs(tr) > 1e-12 * np.abs(vec).max() * dim:
            return vec * (abs(tr) / tr)
    k = np.argmax(np.abs(vec))
    return vec * (abs(vec[k]) / vec[k])


def dominant_eigenpairs(e: np.ndarray, degeneracy_tol: float = 1e-8):
    """Spectral radius and dominant left/right eigenvectors of ``e``.

    Uses a dense eigensolve.  Returns ``(rho, l, r)`` with ``l @ e = rho l``,
    ``e @ r = rho r`` and ``l @ r = 1`` (bilinear, no conjugation).  Phases
    are chosen so that the reshaped fixed points have positive trace, and
    the two vectors are given equal 2-norm.

    Raises DegenerateSpectrumError when several eigenvalues share the
    spectral radius.
    """
    e = np.asarray(e, dtype=complex)
    if e.ndim != 2 or e.shape[0] != e.shape[1]:
        raise TensorError(f"transfer matrix must be square, got {e.shape}")
    vals, right = np.linalg.eig(e)
    mods = np.abs(vals)
    rho = float(mods.max())
    if rho == 0:
        raise DegenerateSpectrumError("transfer matrix is nilpotent", vals)
    top = np.flatnonzero(mods > rho * (1 - degeneracy_tol))
    if top.size > 1:
        raise DegenerateSpectrumError(
            f"{top.size} eigenvalues share the spectral radius {rho:.6g}", vals[top]
        )
    lam = vals[top[0]]
    if abs(lam.imag) > degeneracy_tol * rho or lam.real < 0:
        raise DegenerateSpectrumError(
            f"dominant eigenvalue {lam:.6g} is not real positive", vals[top]
        )
    r = _fix_phase(right[:, top[0]])
    lvals, left = np.linalg.eig(e.T)
    l = _fix_phase(left[:, np.argmin(np.abs(lvals - lam))])
    # eig loses accuracy next to large defective blocks; a few power steps
    # shrink the error by |lambda_2 / lambda| each
    for _ in range(3):
        r = e @ r / lam
        l = l @ e / lam
    overlap = l @ r
    if abs(overlap) < 1e-14:
        raise DegenerateSpectrumError("left and right fixed points are orthogonal", vals[top])
    r = r / overlap
    balance = np.sqrt(np.linalg.norm(l) / np.linalg.norm(r))
    return rho, l / balance, r * balance


def chain_log_norm(first_rows: np.ndarray, sites) -> float:
    """Natural log of the Frobenius norm of a chain of site tensors, via a QR sweep.

    ``first_rows`` is the (rows x bond) matrix that starts the chain; each
    entry of ``sites`` is either a ``(bond, phys, bond')`` tensor or a plain
    ``(bond, bond')`` matrix.  Only a small triangular factor is carried, so
    the norm of a difference of nearly equal networks is resolved to
    round-off instead of losing half the digits to cancellation.  The factor
    is rescaled at every step, so long chains do not overflow.
    """
    r = np.linalg.qr(np.asarray(first_rows), mode="r")
    log_norm = 0.0
    for site in sites:
        site = np.asarray(site)
        rows = r @ site if site.ndim == 2 else np.tensordot(r, site, axes=(1, 0)).reshape(-1, site.shape[-1])
        r = np.linalg.qr(rows, mode="r")
        scale = np.linalg.norm(r)
        if scale == 0:
            return -np.inf
        r = r / scale
        log_norm += np.log(scale)
    return float(log_norm + np.log(np.linalg.norm(r)))


def frobenius_chain_norm(first_rows: np.ndarray, sites) -> float:
    """Frobenius norm of a chain of site tensors; see ``chain_log_norm``."""
    return float(np.exp(chain_log_norm(first_rows, sites)))
