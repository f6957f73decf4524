"""Rank-ratio index of MPO tensors and an independent overlap-index oracle.

Matricizations use the global leg order ``(left, in, out, right)``:

* left rank: ``(left, in) | (out, right)``
* right rank: ``(left, out) | (in, right)``

For a right translation the left rank is ``d**2`` and the right rank 1.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .mpo import (
    _ENTRY_BUDGET,
    CapExceededError,
    DenseOperator,
    MpoTensor,
    assemble_dense,
    cell_tensor,
    dense_cap,
    sites_of,
    stack,
    transfer,
)
from .tensor_core import DEFAULT_RANK_TOL, svd_rank

DEFAULT_STABLE_ROWS = 3
CSV_COLUMNS = ("block_length", "left_rank", "right_rank", "rank_ratio")


class NotStabilizedError(RuntimeError):
    """An index scan ended before the ratio stabilized."""


def left_matrix(t: np.ndarray) -> np.ndarray:
    dl, di, do, dr = t.shape
    return t.reshape(dl * di, do * dr)


def right_matrix(t: np.ndarray) -> np.ndarray:
    dl, di, do, dr = t.shape
    return t.transpose(0, 2, 1, 3).reshape(dl * do, di * dr)


def rank_ratio(m, rel_tol: float = DEFAULT_RANK_TOL) -> tuple[int, int, Fraction]:
    """``(left_rank, right_rank, left_rank / right_rank)`` of one tensor."""
    t = sites_of(m)[0].tensor if isinstance(m, MpoTensor) else cell_tensor(m).tensor
    left = svd_rank(left_matrix(t), rel_tol)
    right = svd_rank(right_matrix(t), rel_tol)
    return left, right, Fraction(left, right)


def _growing_ranks(tensors, rel_tol: float) -> list[int]:
    """Left-grouping ranks of the first ``n`` tensors merged, for every ``n``.

    The row space of the merged tensor is carried as ``S V^dagger`` from a
    thin SVD.  Dropping the orthonormal ``U`` leaves the singular values
    untouched, so each step only decomposes a matrix with ``rank * d``
    rows instead of ``D * d**n``.
    """
    ranks, w = [], None
    for t in tensors:
        if w is None:
            y = left_matrix(t)
        else:
            rows, bond = w.shape[0], t.shape[0]
            if w.size * t.shape[1] * t.shape[2] * t.shape[3] // bond > _ENTRY_BUDGET:
                raise CapExceededError(f"rank scan stopped after {len(ranks)} sites by the size cap")
            y = np.einsum("rJc,cijb->riJjb", w.reshape(rows, -1, bond), t)
            y = y.reshape(rows * t.shape[1], -1)
        _, s, vh = np.linalg.svd(y, full_matrices=False)
        keep = int(np.count_nonzero(s > rel_tol * s[0])) if s.size and s[0] > 0 else 0
        ranks.append(keep)
        if keep == 0:
            ranks.extend([0] * (len(tensors) - len(ranks)))
            break
        w = s[:keep, None] * vh[:keep]
    return ranks


def segment_ranks(m, start: int, max_block: int, rel_tol: float = DEFAULT_RANK_TOL):
    """Left and right ranks of the segments ``start .. start+n-1`` for ``n = 1..max_block``."""
    cell = sites_of(m)
    p = len(cell)
    tensors = [cell[(start + k) % p].tensor for k in range(max_block)]
    left = _growing_ranks(tensors, rel_tol)
    right = _growing_ranks([t.transpose(0, 2, 1, 3) for t in tensors], rel_tol)
    return left, right


@dataclass(frozen=True)
class IndexRow:
    block_length: int
    left_rank: int
    right_rank: int

    @property
    def rank_ratio(self) -> Fraction:
        return Fraction(self.left_rank, self.right_rank)


@dataclass
class IndexReport:
    """Rank table of a block scan.

    ``stabilized_value`` is set when the last ``stable_rows`` rows share
    one ratio and both ranks grow by exactly ``d`` from row to row.
    ``outside_hypotheses`` marks operators that failed a unitarity check
    at some ring size, for which the ratio is not the square of an index.
    """

    rows: list[IndexRow]
    local_dim: int
    stable_rows: int = DEFAULT_STABLE_ROWS
    start: int = 0
    outside_hypotheses: bool = False
    cap_exceeded: bool = False
    notes: list[str] = field(default_factory=list)

    @property
    def stabilized_value(self) -> Fraction | None:
        s = self.stable_rows
        if len(self.rows) < s:
            return None
        tail = self.rows[-s:]
        if len({r.rank_ratio for r in tail}) != 1:
            return None
        d = self.local_dim
        for a, b in zip(tail, tail[1:]):
            if b.left_rank != d * a.left_rank or b.right_rank != d * a.right_rank:
                return None
        return tail[0].rank_ratio

    @property
    def stabilized_at(self) -> int | None:
        """Smallest block length from which every later row repeats the stabilized ratio."""
        value = self.stabilized_value
        if value is None:
            return None
        n = len(self.rows)
        while n > 1 and self.rows[n - 2].rank_ratio == value:
            n -= 1
        return self.rows[n - 1].block_length

    @property
    def gnvw(self) -> float | None:
        value = self.stabilized_value
        return None if value is None else math.sqrt(value)

    def to_dict(self) -> dict:
        value = self.stabilized_value
        return {
            "rows": [
                {**asdict(r), "rank_ratio": str(r.rank_ratio)} for r in self.rows
            ],
            "local_dim": self.local_dim,
            "start": self.start,
            "stable_rows": self.stable_rows,
            "stabilized_value": None if value is None else str(value),
            "stabilized_at": self.stabilized_at,
            "gnvw": self.gnvw,
            "outside_hypotheses": self.outside_hypotheses,
            "cap_exceeded": self.cap_exceeded,
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            writer.writerow([r.block_length, r.left_rank, r.right_rank, str(r.rank_ratio)])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{'length':>6}  {'left rank':>10}  {'right rank':>10}  {'RR index':>8}"]
        for r in self.rows:
            lines.append(f"{r.block_length:>6}  {r.left_rank:>10}  {r.right_rank:>10}  {str(r.rank_ratio):>8}")
        value = self.stabilized_value
        if value is None:
            lines.append("not stabilized")
        else:
            lines.append(f"stabilized ratio {value} from n={self.stabilized_at}; index {self.gnvw:.6g}")
        if self.outside_hypotheses:
            lines.append("warning: not unitary at every tested size; ratio is not a squared index")
        lines.extend(self.notes)
        return "\n".join(lines)


def _unitary_failure(m, max_side: int = 256, tol: float = 1e-10) -> int | None:
    """Smallest tested ring size at which ``m`` is not unitary, or None."""
    cell = sites_of(m)
    p, d = len(cell), cell[0].phys_in
    n = p
    while d**n <= max_side:
        try:
            o = assemble_dense(m, n).matrix
        except CapExceededError:
            break
        if np.abs(o.conj().T @ o - np.eye(o.shape[0])).max() > tol:
            return n
        n += p
    return None


def index_scan(
    m,
    max_block: int,
    rel_tol: float = DEFAULT_RANK_TOL,
    start: int = 0,
    stable_rows: int = DEFAULT_STABLE_ROWS,
    check_hypotheses: bool = True,
) -> IndexReport:
    """Rank ratio of consecutive-site blocks of length ``1 .. max_block``.

    Blocks grow one site at a time from cell site ``start``.  When the
    requested length would exceed the dense cap, the rows computed so far
    are returned with ``cap_exceeded`` set.
    """
    if max_block < 1:
        raise ValueError("max_block must be positive")
    cell = sites_of(m)
    d = cell[0].phys_in
    limit = max_block
    cap_hit = False
    # blocks up to d**n <= cap**2 keep the matricizations under the entry budget
    while limit > 0 and d**limit > dense_cap() ** 2:
        limit -= 1
        cap_hit = True
    while True:
        try:
            left, right = segment_ranks(m, start, limit, rel_tol)
            break
        except CapExceededError:
            limit -= 1
            cap_hit = True
    rows = [IndexRow(n + 1, a, b) for n, (a, b) in enumerate(zip(left, right))]
    report = IndexReport(rows, d, stable_rows, start, cap_exceeded=cap_hit)
    if cap_hit:
        report.notes.append(f"stopped at block length {limit} by the size cap")
    if check_hypotheses:
        bad = _unitary_failure(m)
        if bad is not None:
            report.outside_hypotheses = True
            report.notes.append(f"not unitary on a ring of {bad} sites")
    return report


def stabilized_ratio(m, max_block: int = 8, rel_tol: float = DEFAULT_RANK_TOL, start: int = 0) -> Fraction:
    report = index_scan(m, max_block, rel_tol, start, check_hypotheses=False)
    value = report.stabilized_value
    if value is None:
        raise NotStabilizedError(f"no stabilization within {len(report.rows)} sites")
    return value


def verify_multiplicativity(m1, m2, rel_tol: float = DEFAULT_RANK_TOL, max_block: int = 8) -> bool:
    """Whether the stacked stabilized ratio is the product of the factors' ratios."""
    r1 = stabilized_ratio(m1, max_block, rel_tol)
    r2 = stabilized_ratio(m2, max_block, rel_tol)
    r12 = stabilized_ratio(stack(m1, m2), max_block, rel_tol)
    return r12 == r1 * r2


# Overlap index on dense operators.


def _eta(u: np.ndarray, conj_sites, plain_sites, n: int, d: int) -> float:
    """Overlap of ``U A U^dag`` (A the full algebra on ``conj_sites``) with ``plain_sites``.

    Traced over the whole ring; the region size cancels in the normalization.
    Summing ``|tr(U e_ij^dag U^dag f_kl)|**2`` over matrix units ``e``, ``f``
    equals the squared Frobenius norm of one Gram matrix.
    """
    pa, pb = d ** len(conj_sites), d ** len(plain_sites)
    out_rest = [s for s in range(n) if s not in plain_sites]
    in_rest = [s for s in range(n) if s not in conj_sites]
    t = u.reshape([d] * (2 * n))
    axes = [n + s for s in conj_sites] + list(plain_sites) + out_rest + [n + s for s in in_rest]
    a = t.transpose(axes).reshape(pa * pb, -1)
    gram = a @ a.conj().T
    return math.sqrt(pa * pb) / d**n * float(np.linalg.norm(gram))


def gnvw_overlap_index(o: DenseOperator, cut: int, l0: int, tol: float = 1e-10) -> float:
    """Overlap index of a dense unitary across the bond left of site ``cut``.

    ``A_L`` and ``A_R`` are the full algebras on the ``l0`` sites left and
    right of the cut.  Returns ``eta(O A_L O^dag, A_R) / eta(A_L, O A_R O^dag)``,
    which is ``d`` for a unit right shift.
    """
    n, d = o.n_sites, o.local_dim
    if l0 < 1 or 2 * l0 >= n:
        raise ValueError(f"two regions of {l0} sites do not fit with slack on a ring of {n}")
    mat = o.matrix
    if np.abs(mat.conj().T @ mat - np.eye(mat.shape[0])).max() > tol:
        raise ValueError("overlap index needs a unitary operator")
    left = [(cut - l0 + k) % n for k in range(l0)]
    right = [(cut + k) % n for k in range(l0)]
    # eta(O A_L O^dag, A_R): conjugate the left algebra, trace against the right
    forward = _eta(mat, left, right, n, d)
    # eta(A_L, O A_R O^dag) equals eta(O^dag A_L O, A_R) by cyclicity of the trace
    backward = _eta(mat.conj().T, left, right, n, d)
    return forward / backward


# Singular-value squaring between a tensor and its composite with the dagger.


def sqrt_psd(mat: np.ndarray) -> np.ndarray:
    h = (mat + mat.conj().T) / 2
    w, v = np.linalg.eigh(h)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T


def squaring_check(m, side: str = "r", grouping: str = "left", rel_tol: float = 1e-12) -> float:
    """Largest mismatch in the singular-value squaring relation.

    With ``side="r"``, ``sqrt(r)`` is attached to the right bond of ``M``.
    The chosen matricization of that tensor is compared with the composite
    of ``M``, ``r`` and ``conj(M)`` contracted over the right bonds and the
    opposite physical leg.  The composite's singular values must be the
    squares of the first.  ``side="l"`` attaches ``sqrt(l)`` on the left
    bond.  ``grouping="right"`` swaps the roles of the physical legs.

    Returns the maximal deviation relative to the largest squared value.
    """
    m = cell_tensor(m)
    td = transfer(m)
    t = m.tensor if grouping == "left" else m.tensor.transpose(0, 2, 1, 3)
    dl, di, do, dr = t.shape
    if side == "r":
        x = np.tensordot(t, sqrt_psd(td.r_matrix), axes=(3, 0))
        comp = np.einsum("aijb,bc,dkjc->aidk", t, td.r_matrix, t.conj())
    elif side == "l":
        x = np.tensordot(sqrt_psd(td.l_matrix).T, t, axes=(1, 0))
        comp = np.einsum("ac,aijb,cikd->jbkd", td.l_matrix, t, t.conj())
    else:
        raise ValueError("side must be 'l' or 'r'")
    s_x = np.linalg.svd(x.reshape(dl * di, do * dr), compute_uv=False)
    rows = comp.shape[0] * comp.shape[1]
    s_c = np.linalg.svd(comp.reshape(rows, rows), compute_uv=False)
    k = min(s_x.size, s_c.size)
    return float(np.abs(s_x[:k] ** 2 - s_c[:k]).max() / s_c[0])


# Overlap index of a brick circuit from its causal cones.


def _brick_layers(spec):
    """Brick layers with every translation moved past them, plus the net shift.

    Returns ``([(gate, k, offset), ...], shift)`` in application order, with
    offsets referring to absolute site positions on an infinite chain.
    """
    from .builders import NAMED_MATRICES, random_local_unitary

    layers, shift = [], 0
    for layer in spec.layers:
        if layer.kind == "right":
            shift += 1
        elif layer.kind == "left":
            shift -= 1
        elif layer.kind == "cp":
            cp = NAMED_MATRICES["cp"](2)
            layers += [(cp, 2, (0 - shift) % 2), (cp, 2, (1 - shift) % 2)]
        elif layer.kind in ("random", "fixed"):
            u = random_local_unitary(spec.local_dim, layer.k, layer.seed) if layer.kind == "random" else layer.matrix
            # T^-s G_x T^s = G_{x-s}: bricks applied after a shift s move left by s
            layers.append((np.asarray(u, dtype=complex), layer.k, (layer.offset - shift) % layer.k))
        else:
            raise ValueError(f"layer kind {layer.kind!r} has no brick form")
    return layers, shift


def _cone(layers, lo: int, hi: int):
    """Bricks reached when conjugating an operator on ``[lo, hi)``, innermost layer first."""
    used = []
    for u, k, off in layers:
        starts = [s for s in range(lo - k + 1, hi) if (s - off) % k == 0]
        if k > 1 and starts:
            lo, hi = min(lo, starts[0]), max(hi, starts[-1] + k)
        used.append((u, k, starts))
    return used, lo, hi


def _cone_eta(layers, conj_region, plain_region, d: int, cap: int) -> float:
    from .builders import _apply_gate

    used, lo, hi = _cone(layers, *conj_region)
    # plain sites outside the cone factor out of eta exactly, so the cone is the whole window
    n = hi - lo
    if d**n > cap:
        raise CapExceededError(f"causal cone of {n} sites exceeds dense cap {cap}")
    u_cone = np.eye(d**n, dtype=complex)
    for gate, k, starts in used:
        if k == 1:
            starts = range(lo, hi)
        for s in starts:
            u_cone = _apply_gate(u_cone, gate, [s + q - lo for q in range(k)], n, d)
    conj_sites = [s - lo for s in range(*conj_region)]
    plain_sites = [s - lo for s in range(*plain_region) if lo <= s < hi]
    return _eta(u_cone, conj_sites, plain_sites, n, d)


def light_cone_radius(spec) -> int:
    """Largest distance a single-site operator spreads to either side under the circuit or its inverse."""
    layers, m = _brick_layers(spec)
    adjoint = [(u.conj().T, k, off) for u, k, off in reversed(layers)]
    radius = 0
    for seq, shift in ((layers, m), (adjoint, -m)):
        for s in range(spec.period):
            _, lo, hi = _cone(seq, s, s + 1)
            radius = max(radius, s - lo - shift, hi - s - 1 + shift)
    return radius


def circuit_overlap_index(spec, l0: int | None = None, cut: int = 0, cap: int | None = None) -> float:
    """Overlap index of a brick-and-shift circuit on an unbounded chain.

    With the net shift ``m`` moved to the end, ``O = T^m C`` for a brick
    circuit ``C``.  Both overlaps reduce to conjugation by ``C`` (or its
    adjoint) of a region shifted by ``m``.  Only gates in the causal cone of
    that region are kept, so the dense work is on the cone alone.  The
    region size ``l0`` must be at least the light-cone radius for the
    value to be the index; that radius is the default.
    """
    cap = dense_cap() if cap is None else cap
    layers, m = _brick_layers(spec)
    if l0 is None:
        l0 = max(1, light_cone_radius(spec))
    d = spec.local_dim
    left = (cut - l0, cut)
    right = (cut, cut + l0)
    # eta(O A_L O^dag, A_R) = eta(C A_L C^dag, A_{R-m})
    forward = _cone_eta(layers, left, (right[0] - m, right[1] - m), d, cap)
    # eta(A_L, O A_R O^dag) = eta(C^dag A_{L-m} C, A_R)
    adjoint = [(u.conj().T, k, off) for u, k, off in reversed(layers)]
    backward = _cone_eta(adjoint, (left[0] - m, left[1] - m), right, d, cap)
    return forward / backward
