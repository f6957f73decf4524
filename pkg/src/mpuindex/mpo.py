"""Matrix product operators on periodic chains.

Leg convention for every local tensor, fixed throughout the package::

    M[left, in, out, right]

so that the operator on a ring of ``N`` sites is

    O[j1..jN, i1..iN] = Tr( M[:, i1, j1, :] @ M[:, i2, j2, :] @ ... )

with the row index of ``O`` running over outputs.  Multi-site physical
indices are grouped with the first (leftmost) site as the most significant
digit, matching ``numpy.kron`` ordering.

Two containers are used.  ``MpoTensor`` is a single translation-invariant
tensor.  ``PeriodicMpo`` is a unit cell of several site tensors repeated
around the ring; it is needed for brick-wall circuits, which do not commute
with a one-site translation and so have no one-site invariant form.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from functools import reduce

import numpy as np

from .tensor_core import (
    DEFAULT_RANK_TOL,
    TensorError,
    as_tensor,
    dominant_eigenpairs,
    svd_rank,
)

#: default bound on d**N for dense assembly; override with MPUINDEX_DENSE_CAP
DEFAULT_DENSE_CAP = 4096
# number of complex entries allowed in an intermediate dense object
_ENTRY_BUDGET = 2**27


class CapExceededError(MemoryError):
    """A dense object would exceed the configured size cap."""


class InjectivityError(RuntimeError):
    """reduce_to_injective could not reach an injective tensor."""


def dense_cap() -> int:
    return int(os.environ.get("MPUINDEX_DENSE_CAP", DEFAULT_DENSE_CAP))


@dataclass(frozen=True)
class MpoTensor:
    """One MPO site tensor with legs ``(left, in, out, right)``."""

    tensor: np.ndarray

    def __post_init__(self):
        t = as_tensor(self.tensor)
        if t.ndim != 4:
            raise TensorError(f"MPO tensor needs 4 legs, got shape {t.shape}")
        t.setflags(write=False)
        object.__setattr__(self, "tensor", t)

    @property
    def shape(self):
        return self.tensor.shape

    @property
    def bond_left(self) -> int:
        return self.tensor.shape[0]

    @property
    def bond_right(self) -> int:
        return self.tensor.shape[3]

    @property
    def bond_dim(self) -> int:
        if self.bond_left != self.bond_right:
            raise TensorError(
                f"open segment with bonds {self.bond_left} != {self.bond_right} has no single bond dimension"
            )
        return self.bond_left

    @property
    def phys_in(self) -> int:
        return self.tensor.shape[1]

    @property
    def phys_out(self) -> int:
        return self.tensor.shape[2]

    @property
    def period(self) -> int:
        return 1

    @property
    def sites(self) -> tuple[MpoTensor, ...]:
        return (self,)

    def __eq__(self, other):
        return isinstance(other, MpoTensor) and self.shape == other.shape and np.array_equal(
            self.tensor, other.tensor
        )

    def __hash__(self):
        return hash((self.shape, self.tensor.tobytes()))


@dataclass(frozen=True)
class PeriodicMpo:
    """A unit cell of site tensors repeated around a ring.

    Bond ``k`` (between ``sites[k-1]`` and ``sites[k]``) must match, with the
    last site closing onto the first.
    """

    sites: tuple[MpoTensor, ...]

    def __post_init__(self):
        sites = tuple(s if isinstance(s, MpoTensor) else MpoTensor(s) for s in self.sites)
        if not sites:
            raise TensorError("a unit cell needs at least one site")
        for k, site in enumerate(sites):
            nxt = sites[(k + 1) % len(sites)]
            if site.bond_right != nxt.bond_left:
                raise TensorError(
                    f"bond mismatch between cell sites {k} and {(k + 1) % len(sites)}: "
                    f"{site.bond_right} != {nxt.bond_left}"
                )
        object.__setattr__(self, "sites", sites)

    @property
    def period(self) -> int:
        return len(self.sites)

    @property
    def phys_in(self) -> int:
        return self.sites[0].phys_in

    @property
    def phys_out(self) -> int:
        return self.sites[0].phys_out

    def bonds(self) -> list[int]:
        """Bond dimension on the cut to the left of each cell site."""
        return [s.bond_left for s in self.sites]


@dataclass(frozen=True)
class DenseOperator:
    """A dense ``d**N x d**N`` operator, rows indexing outputs."""

    matrix: np.ndarray
    n_sites: int
    local_dim: int

    def __post_init__(self):
        side = self.local_dim**self.n_sites
        if self.matrix.shape != (side, side):
            raise TensorError(f"operator shape {self.matrix.shape} does not match {self.local_dim}^{self.n_sites}")

    def dagger(self) -> DenseOperator:
        return DenseOperator(self.matrix.conj().T, self.n_sites, self.local_dim)

    def __matmul__(self, other: DenseOperator) -> DenseOperator:
        return DenseOperator(self.matrix @ other.matrix, self.n_sites, self.local_dim)


@dataclass(frozen=True)
class TransferData:
    """Normalized transfer matrix with its dominant eigenpair.

    ``e_matrix`` is ``E / scale`` where ``scale`` is the spectral radius of
    the raw transfer matrix, so ``rho`` is 1.  For an operator that is
    unitary at every size ``scale`` equals ``d`` per site.  Rescaling the
    transfer matrix instead of ``M`` keeps the dense operator unitary.

    ``l`` and ``r`` are vectors on the doubled bond space, ordered
    ``(ket, bra) = (M leg, conj(M) leg)``, normalized so that ``l @ r == 1``.
    """

    e_matrix: np.ndarray
    rho: float
    l: np.ndarray
    r: np.ndarray
    scale: float = 1.0

    @property
    def bond_dim(self) -> int:
        return int(round(math.sqrt(self.l.size)))

    @property
    def l_matrix(self) -> np.ndarray:
        return self.l.reshape(self.bond_dim, self.bond_dim)

    @property
    def r_matrix(self) -> np.ndarray:
        return self.r.reshape(self.bond_dim, self.bond_dim)

    @property
    def raw_matrix(self) -> np.ndarray:
        return self.e_matrix * self.scale


def sites_of(m) -> tuple[MpoTensor, ...]:
    if isinstance(m, (MpoTensor, PeriodicMpo)):
        return m.sites
    return (MpoTensor(m),)


def _merge(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Join two 4-leg tensors along a bond, grouping physical legs (a first)."""
    joined = np.tensordot(a, b, axes=(3, 0))  # l, i1, j1, i2, j2, r
    joined = joined.transpose(0, 1, 3, 2, 4, 5)
    return joined.reshape(a.shape[0], a.shape[1] * b.shape[1], a.shape[2] * b.shape[2], b.shape[3])


def segment(m, start: int, length: int) -> MpoTensor:
    """Open tensor for ``length`` consecutive sites starting at cell site ``start``."""
    if length < 1:
        raise ValueError("segment length must be positive")
    cell = sites_of(m)
    p = len(cell)
    phys = cell[0].phys_in ** length * cell[0].phys_out ** length
    left = cell[start % p].bond_left
    right = cell[(start + length - 1) % p].bond_right
    if phys * left * right > _ENTRY_BUDGET:
        raise CapExceededError(f"segment of {length} sites would hold {phys * left * right} entries")
    out = cell[start % p].tensor
    for k in range(1, length):
        out = _merge(out, cell[(start + k) % p].tensor)
    return MpoTensor(out)


def block(m, n: int) -> MpoTensor:
    """Block ``n`` copies of a translation-invariant tensor into one.

    For a ``PeriodicMpo`` the block counts whole cells, so the result is
    again translation invariant.
    """
    if n < 1:
        raise ValueError("block length must be positive")
    p = len(sites_of(m))
    cap = dense_cap()
    d = sites_of(m)[0].phys_in
    if d ** (n * p) > cap * cap:
        raise CapExceededError(f"blocked physical dimension {d}^{n * p} exceeds cap")
    return segment(m, 0, n * p)


def cell_tensor(m) -> MpoTensor:
    """The translation-invariant tensor of one full unit cell."""
    if isinstance(m, MpoTensor):
        return m
    return segment(m, 0, len(sites_of(m)))


def assemble_dense(m, n_sites: int, cap: int | None = None) -> DenseOperator:
    """Dense operator of ``m`` on a periodic ring of ``n_sites`` sites."""
    cell = sites_of(m)
    p = len(cell)
    if n_sites < 1 or n_sites % p:
        raise ValueError(f"ring size {n_sites} must be a positive multiple of the cell period {p}")
    d_in, d_out = cell[0].phys_in, cell[0].phys_out
    if d_in != d_out:
        raise TensorError("dense assembly needs equal input and output dimensions")
    cap = dense_cap() if cap is None else cap
    if d_in**n_sites > cap:
        raise CapExceededError(f"{d_in}^{n_sites} exceeds dense cap {cap}")
    if n_sites == 1:
        return DenseOperator(np.trace(cell[0].tensor, axis1=0, axis2=3).T, 1, d_in)
    # two half rings, closed on both bonds by a single matrix product
    half = n_sites // 2
    left = segment(m, 0, half).tensor
    right = segment(m, half, n_sites - half).tensor
    a, b = left.shape[0], left.shape[3]
    dl_in, dl_out = left.shape[1], left.shape[2]
    dr_in, dr_out = right.shape[1], right.shape[2]
    lhs = left.transpose(2, 1, 3, 0).reshape(dl_out * dl_in, b * a)
    rhs = right.transpose(0, 3, 2, 1).reshape(b * a, dr_out * dr_in)
    total = (lhs @ rhs).reshape(dl_out, dl_in, dr_out, dr_in)
    total = total.transpose(0, 2, 1, 3).reshape(dl_out * dr_out, dl_in * dr_in)
    return DenseOperator(total, n_sites, d_in)


def _map_sites(m, fn):
    if isinstance(m, PeriodicMpo):
        return PeriodicMpo(tuple(MpoTensor(fn(s.tensor)) for s in m.sites))
    return MpoTensor(fn(sites_of(m)[0].tensor))


def dagger(m):
    """Tensor of the adjoint operator: conjugate entries, swap in/out legs."""
    return _map_sites(m, lambda t: t.conj().transpose(0, 2, 1, 3))


def compose_t(m) -> MpoTensor:
    """Composite tensor of ``m`` with its dagger, the MPO of ``O^dagger O``.

    Virtual legs are ``(M leg, conj(M) leg)`` grouped into ``D**2``; the
    physical legs are ``(in, out)`` of ``O^dagger O``.  With this ordering
    the trace over the physical legs is exactly the transfer matrix.
    """
    t = cell_tensor(m).tensor
    dl, d_in, _, dr = t.shape
    comp = np.einsum("abcd,efcg->aebfdg", t, t.conj())
    return MpoTensor(comp.reshape(dl * dl, d_in, d_in, dr * dr))


def transfer_matrix(m) -> np.ndarray:
    t = cell_tensor(m).tensor
    dl, _, _, dr = t.shape
    return np.einsum("aijb,cijd->acbd", t, t.conj()).reshape(dl * dl, dr * dr)


def transfer(m) -> TransferData:
    """Transfer matrix and its normalized dominant fixed points."""
    m = cell_tensor(m)
    m.bond_dim  # noqa: B018 - raises on open segments
    e = transfer_matrix(m)
    scale, l, r = dominant_eigenpairs(e)
    return TransferData(e / scale, 1.0, l, r, scale)


def stack(m1, m2):
    """Compose two MPOs site by site, ``m2`` applied after ``m1``.

    The assembled operator is ``O2 @ O1``; the new bond is ``(m1 bond, m2 bond)``.
    Unit cells of different periods are extended to their least common multiple.
    """
    c1, c2 = sites_of(m1), sites_of(m2)
    if c1[0].phys_out != c2[0].phys_in:
        raise TensorError(f"cannot stack: output dim {c1[0].phys_out} != input dim {c2[0].phys_in}")
    p = math.lcm(len(c1), len(c2))
    out = []
    for k in range(p):
        a, b = c1[k % len(c1)].tensor, c2[k % len(c2)].tensor
        s = np.einsum("aikb,ckjd->acijbd", a, b)
        out.append(
            MpoTensor(s.reshape(a.shape[0] * b.shape[0], a.shape[1], b.shape[2], a.shape[3] * b.shape[3]))
        )
    if p == 1:
        return out[0]
    return PeriodicMpo(tuple(out))


def stack_all(layers):
    """Stack a sequence of MPOs in application order."""
    return reduce(stack, layers)


def identity_mpo(d: int) -> MpoTensor:
    return MpoTensor(np.eye(d, dtype=complex).reshape(1, d, d, 1))


def is_injective(t: TransferData, rel_tol: float = DEFAULT_RANK_TOL) -> bool:
    """True when both reshaped fixed points have full rank."""
    dim = t.bond_dim
    return svd_rank(t.l_matrix, rel_tol) == dim and svd_rank(t.r_matrix, rel_tol) == dim


def _is_nilpotent(e: np.ndarray, scale: float, tol: float = 1e-9) -> bool:
    # every eigenvalue zero <=> e^(dim) == 0; Jordan blocks make eigvals unreliable
    dim = e.shape[0]
    if dim == 0:
        return True
    power = e / max(scale, 1e-300)
    steps = 1
    while steps < dim:
        power = power @ power
        steps *= 2
        norm = np.abs(power).max()
        if norm < tol:
            return True
        power = power / max(norm, 1.0)
    return np.abs(power).max() < tol


def _invariant_split(t: np.ndarray, td: TransferData, rel_tol: float):
    """Orthonormal bases (inside, outside) of a subspace left invariant by all M^{ij}."""
    dim = t.shape[0]
    r_mat = td.r_matrix
    r_mat = (r_mat + r_mat.conj().T) / 2
    w, v = np.linalg.eigh(r_mat)
    keep = np.abs(w) > rel_tol * np.abs(w).max()
    if keep.sum() < dim:
        return v[:, keep], v[:, ~keep]
    l_mat = td.l_matrix.conj()
    l_mat = (l_mat + l_mat.conj().T) / 2
    w, v = np.linalg.eigh(l_mat)
    keep = np.abs(w) > rel_tol * np.abs(w).max()
    # the kernel of conj(l) is invariant under every M^{ij}
    return v[:, ~keep], v[:, keep]


def _restrict(t: np.ndarray, basis: np.ndarray) -> np.ndarray:
    return np.einsum("xa,xijy,yb->aijb", basis.conj(), t, basis)


def reduce_to_injective(m, rel_tol: float = DEFAULT_RANK_TOL) -> MpoTensor:
    """Remove redundant bond dimensions until the fixed points have full rank.

    Each pass finds a subspace left invariant by every ``M^{ij}`` from the
    support of a rank-deficient fixed point, which puts the tensor in block
    upper-triangular form.  Off-diagonal blocks never reach the periodic
    trace, and a diagonal block whose own transfer matrix is nilpotent
    contributes zero at every ring size.  Such blocks are discarded, so the
    assembled operator is unchanged.  At most ``D`` passes are made.
    """
    current = cell_tensor(m)
    for _ in range(current.bond_dim + 1):
        td = transfer(current)
        if is_injective(td, rel_tol):
            return current
        t = current.tensor
        inside, outside = _invariant_split(t, td, rel_tol)
        blocks = [_restrict(t, basis) for basis in (inside, outside) if basis.shape[1]]
        alive = [b for b in blocks if not _is_nilpotent(transfer_matrix(MpoTensor(b)), td.scale)]
        if len(alive) != 1:
            raise InjectivityError(
                f"{len(alive)} non-nilpotent diagonal blocks; tensor is not reducible to injective form"
            )
        current = MpoTensor(alive[0])
    raise InjectivityError("iteration limit reached before injectivity")


# Serialization.
#
# Text format (``.mpo``)::
#
#     mpuindex-mpo 1
#     sites <p>
#     shape <Dl> <din> <dout> <Dr>
#     <real> <imag>          one line per entry, row-major over the 4 legs
#     shape ...              next cell site, if any
#
# Binary format (``.mpob``): the magic bytes b"MPOB", a little-endian uint32
# site count, then per site four little-endian uint64 leg dimensions
# followed by the row-major entries as little-endian complex128.

TEXT_MAGIC = "mpuindex-mpo 1"
BINARY_MAGIC = b"MPOB"


class FormatError(ValueError):
    """A serialized tensor file is malformed."""


def dumps_text(m) -> str:
    cell = sites_of(m)
    lines = [TEXT_MAGIC, f"sites {len(cell)}"]
    for site in cell:
        lines.append("shape " + " ".join(str(n) for n in site.shape))
        lines.extend(f"{z.real:.17e} {z.imag:.17e}" for z in site.tensor.ravel())
    return "\n".join(lines) + "\n"


def loads_text(text: str):
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines or lines[0] != TEXT_MAGIC:
        raise FormatError("missing text header")
    try:
        key, count = lines[1].split()
        if key != "sites":
            raise FormatError("expected 'sites <p>'")
        pos = 2
        cell = []
        for _ in range(int(count)):
            words = lines[pos].split()
            if words[0] != "shape" or len(words) != 5:
                raise FormatError(f"bad shape line: {lines[pos]!r}")
            shape = tuple(int(w) for w in words[1:])
            size = math.prod(shape)
            rows = [ln.split() for ln in lines[pos + 1 : pos + 1 + size]]
            if len(rows) != size or any(len(r) != 2 for r in rows):
                raise FormatError("entry count does not match shape")
            vals = np.array([complex(float(a), float(b)) for a, b in rows])
            cell.append(MpoTensor(vals.reshape(shape)))
            pos += 1 + size
    except (IndexError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(str(exc)) from exc
    if pos != len(lines):
        raise FormatError("trailing data after last site")
    return cell[0] if len(cell) == 1 else PeriodicMpo(tuple(cell))


def dumps_binary(m) -> bytes:
    cell = sites_of(m)
    parts = [BINARY_MAGIC, np.array([len(cell)], dtype="<u4").tobytes()]
    for site in cell:
        parts.append(np.array(site.shape, dtype="<u8").tobytes())
        parts.append(np.ascontiguousarray(site.tensor, dtype="<c16").tobytes())
    return b"".join(parts)


def loads_binary(data: bytes):
    if data[:4] != BINARY_MAGIC:
        raise FormatError("missing binary magic")
    try:
        (count,) = np.frombuffer(data, dtype="<u4", count=1, offset=4)
        pos = 8
        cell = []
        for _ in range(int(count)):
            shape = tuple(int(n) for n in np.frombuffer(data, dtype="<u8", count=4, offset=pos))
            pos += 32
            size = math.prod(shape)
            vals = np.frombuffer(data, dtype="<c16", count=size, offset=pos)
            pos += 16 * size
            cell.append(MpoTensor(vals.reshape(shape)))
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    if pos != len(data):
        raise FormatError("trailing bytes after last site")
    return cell[0] if len(cell) == 1 else PeriodicMpo(tuple(cell))


def save(m, path) -> None:
    """Write ``m`` as text, or as binary when the suffix is ``.mpob``."""
    path = os.fspath(path)
    if path.endswith(".mpob"):
        with open(path, "wb") as fh:
            fh.write(dumps_binary(m))
    else:
        with open(path, "w") as fh:
            fh.write(dumps_text(m))


def load(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] == BINARY_MAGIC:
        return loads_binary(data)
    return loads_text(data.decode())
