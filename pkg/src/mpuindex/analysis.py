"""Unitarity, blocked fixed-point equations and locality under conjugation.

The fixed-point equations compare networks built from ``T``, the tensor of
``O^dagger O`` (see ``mpo.compose_t``), blocked over ``n`` sites into
``Tn``.  With ``l`` and ``r`` the dominant fixed points of the transfer
matrix (``l @ r == 1``):

* separation: ``Tn Tn == Tn |r><l| Tn``
* isometry: ``<l| Tn |r> == identity``
* pulling through, left: ``<l| Tn Tn == identity (x) <l| Tn``
* pulling through, right: ``Tn Tn |r> == Tn |r> (x) identity``

Residuals are relative Frobenius norms ``||lhs - rhs|| / max(||lhs||, ||rhs||)``.
Each difference is written as one chain of site tensors and its norm is
computed by a QR sweep, so no blocked tensor is ever formed and round-off
stays at machine precision for long blocks.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .mpo import (
    _ENTRY_BUDGET,
    CapExceededError,
    DenseOperator,
    assemble_dense,
    compose_t,
    sites_of,
    transfer,
)
from .tensor_core import DegenerateSpectrumError, chain_log_norm

DEFAULT_FP_TOL = 1e-9
# largest cell bond for which the dense transfer eigensolve is attempted
MAX_TRANSFER_BOND = 64


@dataclass(frozen=True)
class UnitarityResult:
    n_sites: int
    max_error: float
    unitary: bool


def check_unitary_dense(m, sizes, tol: float = 1e-10) -> list[UnitarityResult]:
    """``max |O^dag O - I|`` for the dense assembly at each ring size."""
    out = []
    for n in sizes:
        mat = assemble_dense(m, n).matrix
        err = float(np.abs(mat.conj().T @ mat - np.eye(mat.shape[0])).max())
        out.append(UnitarityResult(n, err, err <= tol))
    return out


@dataclass
class FixedPointReport:
    block_length: int
    separation_residual: float
    isometry_residual: float
    pull_left_residual: float
    pull_right_residual: float
    tol: float = DEFAULT_FP_TOL

    @property
    def residuals(self) -> dict[str, float]:
        return {
            "separation": self.separation_residual,
            "isometry": self.isometry_residual,
            "pull_left": self.pull_left_residual,
            "pull_right": self.pull_right_residual,
        }

    @property
    def passed(self) -> bool:
        return all(v <= self.tol for v in self.residuals.values())

    def to_dict(self) -> dict:
        return {**asdict(self), "passed": self.passed}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _with_identity(t: np.ndarray) -> np.ndarray:
    """Block sum of a T site tensor with the physical identity on one extra bond value."""
    bl, di, do, br = t.shape
    s = np.zeros((bl + 1, di, do, br + 1), dtype=complex)
    s[:bl, :, :, :br] = t
    s[bl, :, :, br] = np.eye(di, do)
    return s


def _flat(t: np.ndarray) -> np.ndarray:
    return t.reshape(t.shape[0], -1, t.shape[-1])


def _rel(diff: float, a: float, b: float) -> float:
    # all arguments are log norms
    top = max(a, b)
    if top == -np.inf:
        return 0.0
    return float(math.exp(diff - top))


def t_chain(m, block_length: int) -> list[np.ndarray]:
    """Site tensors of ``T`` over one block, as ``(bond, in*out, bond)`` arrays."""
    cell = sites_of(m)
    return [_flat(compose_t(cell[k % len(cell)]).tensor) for k in range(block_length)]


def check_fixed_point(m, block_length: int, tol: float = DEFAULT_FP_TOL, transfer_data=None) -> FixedPointReport:
    """Residuals of the four fixed-point equations for blocks of ``block_length`` sites.

    ``block_length`` must be a multiple of the unit-cell period.
    """
    cell = sites_of(m)
    p = len(cell)
    if block_length < 1 or block_length % p:
        raise ValueError(f"block length {block_length} is not a positive multiple of the period {p}")
    for site in cell:
        t_entries = (site.bond_left**2 + 1) * (site.bond_right**2 + 1) * site.phys_in**2
        if 4 * t_entries > _ENTRY_BUDGET:
            raise CapExceededError(f"T site tensor with {t_entries} entries is over the size cap")
    td = transfer(m) if transfer_data is None else transfer_data
    l, r = td.l, td.r
    bond = l.size
    eye = np.eye(bond)
    t4 = [compose_t(cell[k % p]).tensor for k in range(block_length)]
    ts = [_flat(t) for t in t4]
    ts_id = [_flat(_with_identity(t)) for t in t4]
    log_id = 0.5 * block_length * math.log(cell[0].phys_in)  # log ||identity|| on the block

    # separation
    proj = eye - np.outer(r, l)
    lhs = chain_log_norm(eye, ts + ts)
    rhs = chain_log_norm(eye, ts + [np.outer(r, l)] + ts)
    sep = _rel(chain_log_norm(eye, ts + [proj] + ts), lhs, rhs)

    # isometry
    lhs_iso = chain_log_norm(l[None, :], ts + [r[:, None]])
    start = np.concatenate([l, [-1.0]])[None, :]
    end = np.concatenate([r, [1.0]])[:, None]
    iso = _rel(chain_log_norm(start, ts_id + [end]), lhs_iso, log_id)

    # pulling through from the left
    lhs_pl = chain_log_norm(l[None, :], ts + ts)
    rhs_pl = log_id + chain_log_norm(l[None, :], ts)
    hand_off = np.vstack([eye, l[None, :]])
    pl = _rel(chain_log_norm(start, ts_id + [hand_off] + ts), lhs_pl, rhs_pl)

    # pulling through from the right
    lhs_pr = chain_log_norm(eye, ts + ts + [r[:, None]])
    rhs_pr = log_id + chain_log_norm(eye, ts + [r[:, None]])
    hand_on = np.hstack([eye, r[:, None]])
    end_pr = np.concatenate([r, [-1.0]])[:, None]
    pr = _rel(chain_log_norm(eye, ts + [hand_on] + ts_id + [end_pr]), lhs_pr, rhs_pr)

    return FixedPointReport(block_length, sep, iso, pl, pr, tol)


def _dense_t(m, block_length: int) -> np.ndarray:
    cell = sites_of(m)
    out = None
    for k in range(block_length):
        t = compose_t(cell[k % len(cell)]).tensor
        if out is None:
            out = t
        else:
            j = np.tensordot(out, t, axes=(3, 0)).transpose(0, 1, 3, 2, 4, 5)
            out = j.reshape(out.shape[0], out.shape[1] * t.shape[1], out.shape[2] * t.shape[2], t.shape[3])
    return out


def check_fixed_point_dense(m, block_length: int, tol: float = DEFAULT_FP_TOL) -> FixedPointReport:
    """Same equations with the blocked ``T`` formed explicitly; max-norm residuals.

    Each residual is ``max|lhs - rhs|`` divided by the larger of the two
    sides' max entries.  Only for small blocks.
    """
    td = transfer(m)
    l, r = td.l, td.r
    cell = sites_of(m)
    side = cell[0].phys_in**block_length
    if (cell[0].bond_left ** 2) ** 2 * side**4 > _ENTRY_BUDGET:
        raise CapExceededError(f"dense T for {block_length} sites is over the size cap")
    big = _dense_t(m, block_length)  # (B, P, P, B)
    b, p = big.shape[0], big.shape[1]
    two = np.einsum("aijb,bklc->aikjlc", big, big).reshape(b, p * p, p * p, b)

    def rel(x, y):
        top = max(np.abs(x).max(), np.abs(y).max())
        return float(np.abs(x - y).max() / top) if top > 0 else 0.0

    tr_rl = np.einsum("aijb,b,c,cklf->aikjlf", big, r, l, big).reshape(two.shape)
    sep = rel(two, tr_rl)
    iso = rel(np.einsum("a,aijb,b->ij", l, big, r), np.eye(p))
    left_two = np.einsum("a,aijb->ijb", l, two)
    left_one = np.einsum("ij,a,aklb->ikjlb", np.eye(p), l, big).reshape(left_two.shape)
    pl = rel(left_two, left_one)
    right_two = np.einsum("aijb,b->aij", two, r)
    right_one = np.einsum("aijb,b,kl->aikjl", big, r, np.eye(p)).reshape(right_two.shape)
    pr = rel(right_two, right_one)
    return FixedPointReport(block_length, sep, iso, pl, pr, tol)


@dataclass
class FixedPointSearch:
    """Outcome of ``find_fixed_point``.

    ``status`` is ``found``, ``not_found`` (every length up to the bound
    failed) or ``cap_exceeded`` (the search stopped at the size cap first).
    """

    status: str
    block_length: int | None
    reports: list[FixedPointReport] = field(default_factory=list)
    message: str = ""

    @property
    def found(self) -> bool:
        return self.status == "found"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "block_length": self.block_length,
            "message": self.message,
            "reports": [r.to_dict() for r in self.reports],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def find_fixed_point(m, max_block: int | None = None, tol: float = DEFAULT_FP_TOL) -> FixedPointSearch:
    """Smallest block length (a multiple of the period) passing every fixed-point equation.

    Lengths ``p, 2p, ...`` are tried in order up to ``max_block`` sites,
    by default ``p * D**2`` with ``D`` the bond at a cell boundary.
    """
    cell = sites_of(m)
    p = len(cell)
    bond = cell[0].bond_left
    if max_block is None:
        max_block = p * bond * bond
    if bond > MAX_TRANSFER_BOND:
        return FixedPointSearch("cap_exceeded", None, message=f"cell bond {bond} exceeds {MAX_TRANSFER_BOND}")
    try:
        td = transfer(m)
    except DegenerateSpectrumError as exc:
        return FixedPointSearch("not_found", None, message=f"degenerate transfer spectrum: {exc}")
    reports = []
    for n in range(p, max_block + 1, p):
        try:
            rep = check_fixed_point(m, n, tol, td)
        except CapExceededError as exc:
            return FixedPointSearch("cap_exceeded", None, reports, str(exc))
        reports.append(rep)
        if rep.passed:
            return FixedPointSearch("found", n, reports)
    return FixedPointSearch("not_found", None, reports, f"no block length up to {max_block} passed")


# Locality under conjugation.


@dataclass(frozen=True)
class LocalityReport:
    """Supports (in sites, smallest cyclic window) before and after conjugation.

    ``growth`` is ``max(0, support_after - operator_support_before)``.
    """

    operator_support_before: int
    support_after: int
    window_start: int | None
    n_sites: int

    @property
    def growth(self) -> int:
        return max(0, self.support_after - self.operator_support_before)

    def to_dict(self) -> dict:
        return {**asdict(self), "growth": self.growth}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def acts_on_site(x: np.ndarray, site: int, n: int, d: int, tol: float) -> bool:
    """False when ``x`` is the identity on ``site`` tensored with something else."""
    t = x.reshape([d] * (2 * n))
    t = np.moveaxis(t, [site, n + site], [0, 1])
    t = t.reshape(d, d, -1)
    reduced = np.einsum("iik->k", t) / d
    trivial = np.einsum("ij,k->ijk", np.eye(d), reduced)
    scale = max(np.abs(x).max(), 1e-300)
    return np.abs(t - trivial).max() > tol * scale


def cyclic_support(x: np.ndarray, n: int, d: int, tol: float = 1e-10) -> tuple[int, int | None]:
    """Length and start of the smallest cyclic window outside which ``x`` is the identity."""
    active = [s for s in range(n) if acts_on_site(x, s, n, d, tol)]
    if not active:
        return 0, None
    if len(active) == n:
        return n, 0
    # the window is the complement of the largest cyclic gap between active sites
    best_gap, best_start = -1, 0
    for a, b in zip(active, active[1:] + [active[0] + n]):
        if b - a - 1 > best_gap:
            best_gap, best_start = b - a - 1, b % n
    return n - best_gap, best_start


def embed(op: np.ndarray, sites, n: int, d: int) -> np.ndarray:
    """``op`` acting on ``sites`` (in the given order), identity elsewhere."""
    k = len(sites)
    op = np.asarray(op, dtype=complex)
    if op.shape != (d**k, d**k):
        raise ValueError(f"operator of shape {op.shape} does not act on {k} sites of dimension {d}")
    x = np.eye(d**n, dtype=complex).reshape([d] * n + [-1])
    g = op.reshape([d] * (2 * k))
    x = np.tensordot(g, x, axes=(list(range(k, 2 * k)), list(sites)))
    return np.moveaxis(x, list(range(k)), list(sites)).reshape(d**n, d**n)


def conjugate_local(m, op, sites, n_sites: int, tol: float = 1e-10):
    """``O^dag (op (x) I) O`` on a ring and the support before and after.

    ``m`` may be an MPO or an already assembled ``DenseOperator``.
    """
    o = m if isinstance(m, DenseOperator) else assemble_dense(m, n_sites)
    if o.n_sites != n_sites:
        raise ValueError("dense operator size does not match n_sites")
    d = o.local_dim
    sites = [s % n_sites for s in sites]
    x = embed(op, sites, n_sites, d)
    before, _ = cyclic_support(x, n_sites, d, tol)
    y = o.matrix.conj().T @ x @ o.matrix
    after, start = cyclic_support(y, n_sites, d, tol)
    return DenseOperator(y, n_sites, d), LocalityReport(before, after, start, n_sites)


__all__ = [
    "CapExceededError",
    "FixedPointReport",
    "FixedPointSearch",
    "LocalityReport",
    "UnitarityResult",
    "check_fixed_point",
    "check_fixed_point_dense",
    "check_unitary_dense",
    "conjugate_local",
    "cyclic_support",
    "find_fixed_point",
]
