"""Constructors for example MPOs and layered random circuits.

Brick-wall circuits are returned as ``PeriodicMpo`` unit cells.  A brick
layer of ``k``-site gates whose first brick starts at cell site ``offset``
is periodic with period ``k``; a circuit's cell period is the least common
multiple of its layer localities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mpo import (
    CapExceededError,
    MpoTensor,
    PeriodicMpo,
    cell_tensor,
    dense_cap,
    identity_mpo,
    stack_all,
)
from .tensor_core import TensorError, qr_positive

UNITARY_TOL = 1e-12


class SpecError(ValueError):
    """A circuit description is malformed or inconsistent."""


def _check_unitary(u: np.ndarray, tol: float = UNITARY_TOL) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise TensorError(f"expected a square matrix, got shape {u.shape}")
    err = np.abs(u.conj().T @ u - np.eye(u.shape[0])).max()
    if err > tol:
        raise TensorError(f"matrix is not unitary (max deviation {err:.3g})")
    return u


def product_unitary(u) -> MpoTensor:
    """Bond-dimension-1 tensor assembling to ``u`` on every site."""
    u = _check_unitary(u)
    d = u.shape[0]
    # M[0, i, j, 0] = u[j, i]
    return MpoTensor(u.T.reshape(1, d, d, 1))


def controlled_phase() -> MpoTensor:
    """Qubit tensor for a ring of controlled-phase gates on every bond.

    ``M[a, i, i, b] = delta(b, i) * (-1)**(a * i)``: the bond carries the
    left neighbour's bit and picks up the phase against the current bit.
    """
    m = np.zeros((2, 2, 2, 2), dtype=complex)
    for a in range(2):
        for i in range(2):
            m[a, i, i, i] = (-1) ** (a * i)
    return MpoTensor(m)


def translation_right(d: int) -> MpoTensor:
    """Shift every site's state one step to the right around the ring.

    ``M[a, i, j, b] = delta(j, a) * delta(i, b)``: each input is passed right
    along the bond and emitted as the next site's output.
    """
    if d < 2:
        raise ValueError("translation needs d >= 2")
    m = np.zeros((d, d, d, d), dtype=complex)
    for a in range(d):
        for i in range(d):
            m[a, i, a, i] = 1
    return MpoTensor(m)


def translation_left(d: int) -> MpoTensor:
    """Mirror of ``translation_right``: ``M[a, i, j, b] = delta(i, a) * delta(j, b)``."""
    if d < 2:
        raise ValueError("translation needs d >= 2")
    m = np.zeros((d, d, d, d), dtype=complex)
    for a in range(d):
        for j in range(d):
            m[a, a, j, j] = 1
    return MpoTensor(m)


def split_gate(u, d: int, k: int, tol: float = 1e-12) -> list[np.ndarray]:
    """Split a ``k``-site gate into ``k`` site tensors by sequential SVD.

    Each cut keeps every nonzero singular value and folds its square root
    into both neighbours.  The outer bonds have dimension 1.
    """
    u = np.asarray(u, dtype=complex)
    if u.shape != (d**k, d**k):
        raise TensorError(f"gate of shape {u.shape} does not act on {k} sites of dimension {d}")
    t = u.reshape([d] * (2 * k))  # out_1..out_k, in_1..in_k
    perm = [p for s in range(k) for p in (s + k, s)]
    rest = t.transpose(perm).reshape(1, -1)  # (in_1, out_1, in_2, out_2, ...)
    pieces, left = [], 1
    for _ in range(k - 1):
        rest = rest.reshape(left * d * d, -1)
        uu, s, vh = np.linalg.svd(rest, full_matrices=False)
        keep = int(np.count_nonzero(s > tol * s[0]))
        root = np.sqrt(s[:keep])
        pieces.append((uu[:, :keep] * root).reshape(left, d, d, keep))
        rest = root[:, None] * vh[:keep]
        left = keep
    pieces.append(rest.reshape(left, d, d, 1))
    return pieces


def brick_layer(u, d: int, k: int, offset: int = 0, period: int | None = None):
    """One layer of identical ``k``-site bricks, the first starting at cell site ``offset``.

    Returns a ``PeriodicMpo`` of ``period`` sites (default ``k``), or a
    translation-invariant ``MpoTensor`` when ``k == 1``.
    """
    u = _check_unitary(u)
    period = k if period is None else period
    if k < 1 or period % k:
        raise SpecError(f"cell period {period} is not a multiple of the locality {k}")
    if not 0 <= offset < k:
        raise SpecError(f"offset {offset} outside [0, {k})")
    if k == 1:
        return product_unitary(u)
    pieces = split_gate(u, d, k)
    return PeriodicMpo(tuple(MpoTensor(pieces[(s - offset) % k]) for s in range(period)))


def two_body_layer(u) -> MpoTensor:
    """Translation-invariant tensor of a layer of non-overlapping two-site gates.

    The super-site holds two physical sites with the right half of one brick
    followed by the left half of the next.  On a ring of ``K`` super-sites
    covering sites ``0 .. 2K-1``, the bricks act on ``(2k+1, 2k+2 mod 2K)``.
    The bond is the two-site SVD bond of ``u``.
    """
    u = _check_unitary(u)
    d = math.isqrt(u.shape[0])
    if d * d != u.shape[0]:
        raise TensorError("two-body gate must act on two equal sites")
    return cell_tensor(brick_layer(u, d, 2, offset=1))


def random_local_unitary(d: int, k: int, seed: int, cap: int | None = None) -> np.ndarray:
    """Seeded random ``d**k`` unitary from the positive-diagonal QR of a Gaussian matrix.

    Entries are ``(x + i y) / sqrt(2)`` with ``x``, ``y`` standard normals
    from a Philox counter-based generator keyed by ``seed``; ``x`` fills the
    even and ``y`` the odd positions of the draw.
    """
    n = d**k
    cap = dense_cap() if cap is None else cap
    if n > cap:
        raise CapExceededError(f"gate dimension {n} exceeds cap {cap}")
    rng = np.random.Generator(np.random.Philox(seed))
    z = rng.standard_normal((n, n, 2))
    q, _ = qr_positive((z[..., 0] + 1j * z[..., 1]) / np.sqrt(2))
    return q


# Nonzero entries (left, in, out) of the fractional tensor; the right bond
# always equals the input.  Output follows y_k = -(x_{k-1} + x_k) mod 3
# on states labelled 1, 2, 3 with 3 read as 0.
FRACTIONAL_ENTRIES = (
    (0, 0, 0), (0, 1, 2), (0, 2, 1),
    (1, 0, 2), (1, 1, 1), (1, 2, 0),
    (2, 0, 1), (2, 1, 0), (2, 2, 2),
)  # fmt: skip


def fractional_example() -> MpoTensor:
    """Qutrit MPO unitary on odd rings only, with rank ratio 3.

    Basis index ``b`` stands for the state labelled ``b + 1``.  On two sites
    both ``|12>`` and ``|21>`` go to ``|33>``.
    """
    m = np.zeros((3, 3, 3, 3), dtype=complex)
    for a, i, j in FRACTIONAL_ENTRIES:
        m[a, i, j, i] = 1
    return MpoTensor(m)


NAMED_MATRICES = {
    "cp": lambda d: np.diag([1, 1, 1, -1]).astype(complex) if d == 2 else None,
    "swap": lambda d: np.eye(d * d)[[b * d + a for a in range(d) for b in range(d)]].astype(complex),
    "identity": lambda d: None,
    "hadamard": lambda d: (np.array([[1, 1], [1, -1]]) / np.sqrt(2)).astype(complex) if d == 2 else None,
}


@dataclass(frozen=True)
class Layer:
    """One circuit layer.

    ``kind`` is one of ``right``, ``left``, ``random``, ``fixed``, ``cp`` or
    ``fractional``.  ``random`` layers use ``seed``; ``fixed`` layers carry
    an explicit gate ``matrix`` of size ``d**k``.
    """

    kind: str
    k: int = 1
    offset: int = 0
    seed: int | None = None
    matrix: np.ndarray | None = field(default=None, compare=False)
    name: str | None = None

    def __post_init__(self):
        if self.kind not in ("right", "left", "random", "fixed", "cp", "fractional"):
            raise SpecError(f"unknown layer kind {self.kind!r}")
        if self.k < 1:
            raise SpecError("layer locality k must be >= 1")
        if not 0 <= self.offset < self.k:
            raise SpecError(f"offset {self.offset} outside [0, {self.k})")
        if self.kind == "random" and self.seed is None:
            raise SpecError("random layer needs a seed")
        if self.kind == "fixed" and self.matrix is None:
            raise SpecError("fixed layer needs a matrix")

    @property
    def locality(self) -> int:
        return self.k if self.kind in ("random", "fixed") else 1


@dataclass(frozen=True)
class CircuitSpec:
    """Layers in application order on sites of dimension ``local_dim``.

    ``start`` is the cell site at which index scans begin blocking.
    """

    local_dim: int
    layers: tuple[Layer, ...]
    start: int = 0
    name: str | None = None

    @property
    def period(self) -> int:
        return math.lcm(*(layer.locality for layer in self.layers)) if self.layers else 1


def layer_mpo(layer: Layer, d: int, period: int):
    if layer.kind == "right":
        return translation_right(d)
    if layer.kind == "left":
        return translation_left(d)
    if layer.kind == "cp":
        if d != 2:
            raise SpecError("cp layer needs d = 2")
        return controlled_phase()
    if layer.kind == "fractional":
        if d != 3:
            raise SpecError("fractional layer needs d = 3")
        return fractional_example()
    if layer.kind == "random":
        u = random_local_unitary(d, layer.k, layer.seed)
    else:
        u = np.asarray(layer.matrix, dtype=complex)
        if u.shape != (d**layer.k, d**layer.k):
            raise SpecError(f"fixed gate of shape {u.shape} does not act on {layer.k} sites of dimension {d}")
    return brick_layer(u, d, layer.k, layer.offset, period)


def build_circuit(spec: CircuitSpec):
    """Stack the layers of ``spec`` in order; the first listed acts first."""
    if not spec.layers:
        return identity_mpo(spec.local_dim)
    return stack_all([layer_mpo(layer, spec.local_dim, spec.period) for layer in spec.layers])


# Circuit text format, one directive per line, '#' starts a comment:
#
#   d <local dimension>
#   start <cell site where scans begin>          (optional, default 0)
#   layer right | left | cp | fractional
#   layer random k=<k> offset=<o> seed=<s>
#   layer fixed k=<k> offset=<o> matrix=<name or .npy path>


def _parse_options(words, lineno):
    opts = {}
    for w in words:
        if "=" not in w:
            raise SpecError(f"line {lineno}: expected key=value, got {w!r}")
        key, val = w.split("=", 1)
        opts[key] = val
    return opts


def _int_opt(opts, key, lineno, default=None):
    if key not in opts:
        if default is None:
            raise SpecError(f"line {lineno}: missing {key}=")
        return default
    try:
        return int(opts.pop(key))
    except ValueError as exc:
        raise SpecError(f"line {lineno}: {key} must be an integer") from exc


def _resolve_matrix(ref, d, k, base: Path | None, lineno):
    if ref in NAMED_MATRICES:
        mat = NAMED_MATRICES[ref](d)
        if ref == "identity":
            mat = np.eye(d**k, dtype=complex)
        if mat is None or mat.shape != (d**k, d**k):
            raise SpecError(f"line {lineno}: named matrix {ref!r} does not fit d={d}, k={k}")
        return mat
    path = Path(ref)
    if base is not None and not path.is_absolute():
        path = base / path
    if not path.exists():
        raise SpecError(f"line {lineno}: unknown matrix {ref!r}")
    return np.load(path)


def parse_circuit(text: str, base: Path | None = None, name: str | None = None) -> CircuitSpec:
    d, start, layers = None, 0, []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        words = line.split()
        head = words[0]
        try:
            if head == "d":
                d = int(words[1])
                if d < 1:
                    raise ValueError
            elif head == "start":
                start = int(words[1])
            elif head == "layer":
                kind = words[1]
                opts = _parse_options(words[2:], lineno)
                if kind in ("random", "fixed"):
                    k = _int_opt(opts, "k", lineno)
                    offset = _int_opt(opts, "offset", lineno, 0)
                    if kind == "random":
                        seed = _int_opt(opts, "seed", lineno)
                        layer = Layer("random", k, offset, seed=seed)
                    else:
                        if d is None:
                            raise SpecError(f"line {lineno}: 'd' must precede fixed layers")
                        ref = opts.pop("matrix", None)
                        if ref is None:
                            raise SpecError(f"line {lineno}: missing matrix=")
                        mat = _resolve_matrix(ref, d, k, base, lineno)
                        layer = Layer("fixed", k, offset, matrix=mat, name=ref)
                else:
                    layer = Layer(kind)
                if opts:
                    raise SpecError(f"line {lineno}: unexpected options {sorted(opts)}")
                layers.append(layer)
            else:
                raise SpecError(f"line {lineno}: unknown directive {head!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, SpecError):
                raise
            raise SpecError(f"line {lineno}: cannot parse {raw.strip()!r}") from exc
    if d is None:
        raise SpecError("missing 'd <local dimension>' line")
    return CircuitSpec(d, tuple(layers), start, name)


def load_circuit(path) -> CircuitSpec:
    path = Path(path)
    return parse_circuit(path.read_text(), base=path.parent, name=path.stem)


FIXTURE_DIR = Path(__file__).parent / "fixtures"


def fixture_path(name: str) -> Path:
    return FIXTURE_DIR / f"{name}.circ"


def load_fixture(name: str) -> CircuitSpec:
    """Load one of the bundled circuits (``table1``, ``table2``, ``table3``, ...)."""
    path = fixture_path(name)
    if not path.exists():
        raise FileNotFoundError(f"no bundled circuit {name!r}; have {sorted(list_fixtures())}")
    return load_circuit(path)


def list_fixtures() -> list[str]:
    return sorted(p.stem for p in FIXTURE_DIR.glob("*.circ"))



def _apply_gate(x: np.ndarray, gate: np.ndarray, sites, n: int, d: int) -> np.ndarray:
    """Left-multiply the operator ``x`` by ``gate`` acting on ``sites`` (in order)."""
    k = len(sites)
    t = x.reshape([d] * n + [-1])
    g = gate.reshape([d] * (2 * k))
    t = np.tensordot(g, t, axes=(list(range(k, 2 * k)), list(sites)))
    # gate outputs land in front; move them back to their sites
    return np.moveaxis(t, list(range(k)), list(sites)).reshape(x.shape)


def _shift_rows(x: np.ndarray, n: int, d: int, step: int) -> np.ndarray:
    """Left-multiply by the translation moving site ``k`` to site ``k + step``."""
    t = x.reshape([d] * n + [-1])
    # output site k holds input site k - step
    return np.moveaxis(t, list(range(n)), [(k + step) % n for k in range(n)]).reshape(x.shape)


def circuit_dense(spec: CircuitSpec, n_sites: int, cap: int | None = None):
    """Dense operator of a circuit built gate by gate, without any MPO.

    Serves as an independent oracle for ``build_circuit``.
    """
    from .mpo import DenseOperator, assemble_dense

    d, p = spec.local_dim, spec.period
    if n_sites % p:
        raise SpecError(f"ring size {n_sites} is not a multiple of the circuit period {p}")
    cap = dense_cap() if cap is None else cap
    if d**n_sites > cap:
        raise CapExceededError(f"{d}^{n_sites} exceeds dense cap {cap}")
    x = np.eye(d**n_sites, dtype=complex)
    for layer in spec.layers:
        if layer.kind == "right":
            x = _shift_rows(x, n_sites, d, 1)
        elif layer.kind == "left":
            x = _shift_rows(x, n_sites, d, -1)
        elif layer.kind in ("cp", "fractional"):
            x = assemble_dense(layer_mpo(layer, d, p), n_sites, cap).matrix @ x
        else:
            u = random_local_unitary(d, layer.k, layer.seed) if layer.kind == "random" else layer.matrix
            for s in range(layer.offset, n_sites, layer.k):
                x = _apply_gate(x, u, [(s + q) % n_sites for q in range(layer.k)], n_sites, d)
    return DenseOperator(x, n_sites, d)
