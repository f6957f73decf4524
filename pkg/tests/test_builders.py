import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import builder_mpuos
from mpuindex.builders import (
    FIXTURE_DIR,
    CircuitSpec,
    Layer,
    SpecError,
    brick_layer,
    build_circuit,
    circuit_dense,
    controlled_phase,
    fractional_example,
    layer_mpo,
    list_fixtures,
    load_circuit,
    load_fixture,
    parse_circuit,
    product_unitary,
    random_local_unitary,
    split_gate,
    translation_left,
    translation_right,
    two_body_layer,
)
from mpuindex.mpo import CapExceededError, assemble_dense, sites_of
from mpuindex.tensor_core import TensorError


def permute_sites(n, d, dest):
    """Permutation matrix sending the state on site k to site dest[k]."""
    p = np.zeros((d**n, d**n))
    for col in range(d**n):
        digits = np.unravel_index(col, (d,) * n)
        out = [0] * n
        for k in range(n):
            out[dest[k]] = digits[k]
        p[np.ravel_multi_index(out, (d,) * n), col] = 1
    return p


def brick_oracle(u, d, k, offset, n):
    """Bricks on sites offset + j*k, built from kron and a cyclic relabelling."""
    full = u
    for _ in range(n // k - 1):
        full = np.kron(full, u)
    # kron acts on sites 0..n-1; rotate so that brick starts sit at offset
    rot = permute_sites(n, d, [(s + offset) % n for s in range(n)])
    return rot @ full @ rot.T


# elementary builders


def test_product_unitary():
    u = random_local_unitary(3, 1, 2)
    o = assemble_dense(product_unitary(u), 3).matrix
    np.testing.assert_allclose(o, np.kron(np.kron(u, u), u), atol=1e-12)
    with pytest.raises(TensorError, match="not unitary"):
        product_unitary(np.array([[1, 1], [0, 1]]))


@pytest.mark.parametrize("d,n", [(2, 2), (2, 5), (3, 3)])
def test_translations_are_site_permutations(d, n):
    right = assemble_dense(translation_right(d), n).matrix
    left = assemble_dense(translation_left(d), n).matrix
    np.testing.assert_array_equal(right, permute_sites(n, d, [(k + 1) % n for k in range(n)]))
    np.testing.assert_array_equal(left, permute_sites(n, d, [(k - 1) % n for k in range(n)]))


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_controlled_phase_ring(n):
    o = assemble_dense(controlled_phase(), n).matrix
    diag = []
    for col in range(2**n):
        bits = np.unravel_index(col, (2,) * n)
        diag.append((-1) ** sum(bits[k] * bits[(k + 1) % n] for k in range(n)))
    np.testing.assert_allclose(o, np.diag(diag), atol=1e-12)


@settings(max_examples=20)
@given(k=st.integers(2, 3), seed=st.integers(0, 10**6))
def test_split_gate_reconstructs(k, seed):
    u = random_local_unitary(2, k, seed)
    pieces = split_gate(u, 2, k)
    assert pieces[0].shape[0] == pieces[-1].shape[-1] == 1
    acc = pieces[0]
    for p in pieces[1:]:
        acc = np.tensordot(acc, p, axes=(acc.ndim - 1, 0))
    # legs: 1, (in_s, out_s) per site, 1
    t = acc.reshape([2, 2] * k)
    back = t.transpose(list(range(1, 2 * k, 2)) + list(range(0, 2 * k, 2))).reshape(2**k, 2**k)
    np.testing.assert_allclose(back, u, atol=1e-12)


@pytest.mark.parametrize("k,offset,n", [(2, 0, 4), (2, 1, 4), (2, 1, 6), (3, 0, 6), (3, 1, 6), (3, 2, 6)])
def test_brick_layer_matches_kron(k, offset, n):
    u = random_local_unitary(2, k, 40 + offset)
    m = brick_layer(u, 2, k, offset)
    np.testing.assert_allclose(assemble_dense(m, n).matrix, brick_oracle(u, 2, k, offset, n), atol=1e-12)


def test_brick_layer_validation():
    u = random_local_unitary(2, 2, 1)
    with pytest.raises(SpecError):
        brick_layer(u, 2, 2, offset=2)
    with pytest.raises(SpecError):
        brick_layer(u, 2, 2, period=3)
    assert brick_layer(u, 2, 2, period=6).period == 6


def test_two_body_layer_bricks():
    u = random_local_unitary(2, 2, 8)
    m = two_body_layer(u)
    assert m.phys_in == 4
    o = assemble_dense(m, 3).matrix  # 6 sites
    np.testing.assert_allclose(o, brick_oracle(u, 2, 2, 1, 6), atol=1e-12)


# random unitaries


def test_random_local_unitary_is_seeded_and_unitary():
    a, b = random_local_unitary(2, 3, 17), random_local_unitary(2, 3, 17)
    assert np.array_equal(a, b)
    np.testing.assert_allclose(a.conj().T @ a, np.eye(8), atol=1e-12)
    assert not np.allclose(a, random_local_unitary(2, 3, 18))
    assert np.all(np.diag(np.linalg.qr(a)[1]) != 0)
    with pytest.raises(CapExceededError):
        random_local_unitary(2, 13, 0)


def test_random_unitary_haar_second_moment():
    # E |tr U|^2 = 1 for Haar unitaries; diagnostic sanity check
    vals = np.array([abs(np.trace(random_local_unitary(2, 2, s))) ** 2 for s in range(200)])
    err = vals.std(ddof=1) / np.sqrt(len(vals))
    assert abs(vals.mean() - 1) < 3 * err


# fractional example


def test_fractional_two_site_collision():
    o = assemble_dense(fractional_example(), 2).matrix
    idx = lambda a, b: 3 * (a - 1) + (b - 1)  # noqa: E731 - labels 1..3
    target = np.zeros(9)
    target[idx(3, 3)] = 1
    np.testing.assert_allclose(o[:, idx(1, 2)], target)
    np.testing.assert_allclose(o[:, idx(2, 1)], target)


# unitarity of every builder


@pytest.mark.parametrize("name", sorted(builder_mpuos()))
def test_builders_unitary_at_small_sizes(name):
    m, _ = builder_mpuos()[name]
    p, d = len(sites_of(m)), sites_of(m)[0].phys_in
    sizes = [n for n in range(2, 7) if n % p == 0] if d <= 3 else [1, 2, 3]
    for n in sizes:
        if d**n > 4096:
            continue
        o = assemble_dense(m, n).matrix
        assert np.abs(o.conj().T @ o - np.eye(d**n)).max() < 1e-10


# circuits


@pytest.mark.parametrize("name", ["table1", "table2", "table3", "cp", "translation"])
def test_circuit_is_ordered_product_of_layers(name):
    spec = load_fixture(name)
    n = 6 if spec.period > 1 else 3
    expect = np.eye(2**n, dtype=complex)
    for layer in spec.layers:
        expect = assemble_dense(layer_mpo(layer, spec.local_dim, spec.period), n).matrix @ expect
    np.testing.assert_allclose(assemble_dense(build_circuit(spec), n).matrix, expect, atol=1e-10)


@pytest.mark.parametrize("name", ["table1", "table2", "table3", "cp", "translation", "fractional"])
def test_circuit_matches_gate_by_gate_oracle(name):
    spec = load_fixture(name)
    n = {"fractional": 3, "cp": 5, "translation": 5}.get(name, 6)
    o = assemble_dense(build_circuit(spec), n).matrix
    np.testing.assert_allclose(o, circuit_dense(spec, n).matrix, atol=1e-10)


def test_periods_of_fixtures():
    assert [load_fixture(f"table{k}").period for k in (1, 2, 3)] == [2, 6, 6]


def test_empty_circuit_is_identity():
    m = build_circuit(CircuitSpec(2, ()))
    np.testing.assert_allclose(assemble_dense(m, 3).matrix, np.eye(8))


# grammar


def test_parse_full_grammar(tmp_path):
    np.save(tmp_path / "g.npy", random_local_unitary(2, 2, 3))
    text = """
    # comment line
    d 2
    start 1
    layer random k=2 offset=1 seed=5   # trailing comment
    layer right
    layer left
    layer cp
    layer fixed k=2 offset=0 matrix=swap
    layer fixed k=2 matrix=g.npy
    """
    spec = parse_circuit(text, base=tmp_path)
    assert spec.local_dim == 2 and spec.start == 1
    assert [layer.kind for layer in spec.layers] == ["random", "right", "left", "cp", "fixed", "fixed"]
    assert spec.layers[0] == Layer("random", 2, 1, seed=5)
    np.testing.assert_allclose(spec.layers[5].matrix, random_local_unitary(2, 2, 3))


def test_parse_fixed_layer_builds_swap_bricks():
    spec = parse_circuit("d 2\nlayer fixed k=2 offset=0 matrix=swap\n")
    o = assemble_dense(build_circuit(spec), 4).matrix
    np.testing.assert_array_equal(o.real, permute_sites(4, 2, [1, 0, 3, 2]))


@pytest.mark.parametrize(
    "text, message",
    [
        ("layer right\n", "missing 'd"),
        ("d 2\nlayer sideways\n", "unknown layer kind"),
        ("d 2\nlayer random k=2\n", "seed"),
        ("d 2\nlayer random k=2 offset=2 seed=1\n", "offset"),
        ("d 2\nlayer random k=x seed=1\n", "line 2"),
        ("d 2\nfoo 3\n", "unknown directive"),
        ("d 2\nlayer right extra=1\n", "unexpected options"),
        ("d 2\nlayer fixed k=2 matrix=nosuch\n", "unknown matrix"),
        ("d 2\nlayer fixed k=2\n", "missing matrix"),
        ("d 3\nlayer fixed k=1 matrix=hadamard\n", "does not fit"),
        ("d two\n", "line 1"),
    ],
)
def test_parse_errors(text, message):
    with pytest.raises(SpecError, match=message):
        parse_circuit(text)


def test_layer_kind_constraints():
    with pytest.raises(SpecError):
        layer_mpo(Layer("cp"), 3, 1)
    with pytest.raises(SpecError):
        layer_mpo(Layer("fractional"), 2, 1)


def test_fixtures_are_bundled():
    assert {"table1", "table2", "table3", "translation", "cp", "fractional"} <= set(list_fixtures())
    assert load_circuit(FIXTURE_DIR / "table1.circ") == load_fixture("table1")
    with pytest.raises(FileNotFoundError):
        load_fixture("nope")
