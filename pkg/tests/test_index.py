from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import builder_mpuos
from mpuindex.builders import (
    build_circuit,
    controlled_phase,
    fractional_example,
    load_fixture,
    product_unitary,
    random_local_unitary,
    translation_left,
    translation_right,
    two_body_layer,
)
from mpuindex.index import (
    CSV_COLUMNS,
    IndexReport,
    IndexRow,
    NotStabilizedError,
    circuit_overlap_index,
    gnvw_overlap_index,
    index_scan,
    left_matrix,
    light_cone_radius,
    rank_ratio,
    right_matrix,
    segment_ranks,
    squaring_check,
    stabilized_ratio,
    verify_multiplicativity,
)
from mpuindex.mpo import (
    DenseOperator,
    MpoTensor,
    assemble_dense,
    block,
    reduce_to_injective,
    segment,
    sites_of,
    stack,
)
from mpuindex.tensor_core import svd_rank

BUILDERS = builder_mpuos()


def test_matricizations_group_legs():
    t = np.arange(2 * 3 * 4 * 5).reshape(2, 3, 4, 5)
    assert left_matrix(t)[1 * 3 + 2, 3 * 5 + 4] == t[1, 2, 3, 4]
    assert right_matrix(t)[1 * 4 + 3, 2 * 5 + 4] == t[1, 2, 3, 4]


def test_rank_ratio_of_translation():
    assert rank_ratio(translation_right(2)) == (4, 1, Fraction(4))
    assert rank_ratio(translation_left(3)) == (1, 9, Fraction(1, 9))


@pytest.mark.parametrize("name,start", [("table1", 0), ("table2", 1), ("table3", 3)])
def test_growing_ranks_match_direct_svd(name, start):
    m = build_circuit(load_fixture(name))
    left, right = segment_ranks(m, start, 5)
    for n in range(1, 6):
        t = segment(m, start, n).tensor
        assert left[n - 1] == svd_rank(left_matrix(t))
        assert right[n - 1] == svd_rank(right_matrix(t))


def test_stabilization_rules():
    rows = lambda pairs: [IndexRow(k + 1, a, b) for k, (a, b) in enumerate(pairs)]  # noqa: E731
    good = IndexReport(rows([(64, 16), (8, 8), (16, 4), (32, 8), (64, 16)]), 2)
    assert good.stabilized_value == 4 and good.stabilized_at == 3 and good.gnvw == 2
    # equal ratios without growth by d do not count
    flat = IndexReport(rows([(16, 4), (16, 4), (16, 4)]), 2)
    assert flat.stabilized_value is None and flat.gnvw is None
    short = IndexReport(rows([(4, 1), (8, 2)]), 2)
    assert short.stabilized_value is None


def test_report_formats():
    report = index_scan(translation_right(2), 4)
    csv_text = report.to_csv()
    lines = csv_text.splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS) == "block_length,left_rank,right_rank,rank_ratio"
    assert lines[1:] == ["1,4,1,4", "2,8,2,4", "3,16,4,4", "4,32,8,4"]
    data = report.to_dict()
    assert data["stabilized_value"] == "4" and data["rows"][0]["rank_ratio"] == "4"
    assert "stabilized ratio 4" in report.to_text()


def test_csv_is_deterministic():
    a = index_scan(build_circuit(load_fixture("table1")), 6).to_csv()
    b = index_scan(build_circuit(load_fixture("table1")), 6).to_csv()
    assert a == b


def test_scan_stops_at_cap(monkeypatch):
    monkeypatch.setenv("MPUINDEX_DENSE_CAP", "16")
    report = index_scan(translation_right(2), 10)
    assert report.cap_exceeded and len(report.rows) == 8
    assert any("size cap" in note for note in report.notes)


def test_hypothesis_flag():
    assert index_scan(fractional_example(), 2).outside_hypotheses
    assert not index_scan(translation_right(2), 2).outside_hypotheses
    assert "not unitary" in index_scan(fractional_example(), 2).to_text()


def test_stabilized_ratio_raises_when_short():
    with pytest.raises(NotStabilizedError):
        stabilized_ratio(translation_right(2), max_block=2)
    with pytest.raises(ValueError):
        index_scan(translation_right(2), 0)


def test_verify_multiplicativity():
    assert verify_multiplicativity(translation_right(2), controlled_phase(), max_block=6)
    assert verify_multiplicativity(translation_left(2), translation_left(2), max_block=6)


# invariants


@pytest.mark.parametrize("name", sorted(BUILDERS))
def test_ratio_invariant_under_blocking(name):
    m, _ = BUILDERS[name]
    p, d = len(sites_of(m)), sites_of(m)[0].phys_in
    value = stabilized_ratio(m, 8 if d == 2 else 4)
    for k in (1, 2):
        if d ** (p * k * 3) > 2**9:
            break
        assert stabilized_ratio(block(m, k), 3) == value


@pytest.mark.parametrize("name", ["table1", "table2", "table3"])
def test_rows_constant_after_stabilization(name):
    spec = load_fixture(name)
    report = index_scan(build_circuit(spec), 7, start=spec.start)
    n_star = report.stabilized_at
    assert all(r.rank_ratio == report.stabilized_value for r in report.rows[n_star - 1 :])


PERIOD_ONE = {
    "right": lambda: translation_right(2),
    "left": lambda: translation_left(2),
    "cp": controlled_phase,
    "product": lambda: product_unitary(random_local_unitary(2, 1, 9)),
}


@settings(max_examples=15)
@given(names=st.lists(st.sampled_from(sorted(PERIOD_ONE)), min_size=2, max_size=3))
def test_reduction_keeps_ratio_on_random_stacks(names):
    m = PERIOD_ONE[names[0]]()
    for name in names[1:]:
        m = stack(m, PERIOD_ONE[name]())
    red = reduce_to_injective(m)
    assert stabilized_ratio(red, 6) == stabilized_ratio(m, 6)


@pytest.mark.parametrize("name", sorted(BUILDERS))
def test_ratio_is_eta_squared_at_six_sites(name):
    m, radius = BUILDERS[name]
    if name == "two_body":
        o, l0 = assemble_dense(m, 3), 1  # three super-sites of two qubits
    else:
        o, l0 = assemble_dense(m, 6), max(1, radius)
    ratio = stabilized_ratio(m, 8 if o.local_dim == 2 else 4)
    eta = gnvw_overlap_index(o, 0, l0)
    assert abs(float(ratio) - eta**2) < 1e-8


# overlap index


@pytest.mark.parametrize(
    "mpo, n, expect",
    [(translation_right(2), 6, 2.0), (translation_left(2), 6, 0.5), (translation_right(3), 5, 3.0),
     (controlled_phase(), 6, 1.0), (product_unitary(random_local_unitary(2, 1, 1)), 4, 1.0)],
)  # fmt: skip
def test_known_overlap_indices(mpo, n, expect):
    for cut in range(n):
        assert gnvw_overlap_index(assemble_dense(mpo, n), cut, 1) == pytest.approx(expect, abs=1e-12)


def test_overlap_index_validation():
    o = assemble_dense(translation_right(2), 4)
    with pytest.raises(ValueError, match="fit"):
        gnvw_overlap_index(o, 0, 2)
    bad = DenseOperator(np.diag(np.arange(16.0)), 4, 2)
    with pytest.raises(ValueError, match="unitary"):
        gnvw_overlap_index(bad, 0, 1)


def test_light_cone_radii():
    radii = {name: light_cone_radius(load_fixture(name)) for name in ("table1", "table2", "table3", "cp", "translation")}
    assert radii == {"table1": 4, "table2": 5, "table3": 4, "cp": 2, "translation": 1}


@pytest.mark.parametrize("name, expect", [("table1", 2), ("table2", 4), ("table3", 2), ("cp", 1), ("translation", 2)])
def test_cone_overlap_index(name, expect):
    assert circuit_overlap_index(load_fixture(name)) == pytest.approx(expect, abs=1e-10)


def test_cone_matches_ring_when_ring_is_long_enough():
    # the cone route and the dense ring route agree for the same region size
    spec = load_fixture("table1")
    o = assemble_dense(build_circuit(spec), 12)
    assert circuit_overlap_index(spec, l0=1) == pytest.approx(gnvw_overlap_index(o, 0, 1), abs=1e-10)


def test_cone_rejects_fractional():
    with pytest.raises(ValueError):
        circuit_overlap_index(load_fixture("fractional"))


# singular-value squaring


@pytest.mark.parametrize("mpo", [two_body_layer(random_local_unitary(2, 2, 6)), translation_left(3)])
def test_squaring_on_other_injective_tensors(mpo):
    for side in ("r", "l"):
        for grouping in ("left", "right"):
            assert squaring_check(mpo, side, grouping) < 1e-9


def test_squaring_bad_side():
    with pytest.raises(ValueError):
        squaring_check(translation_right(2), side="x")


def test_squaring_on_random_tensor_against_direct_eig():
    # r from a plain eig of the transfer matrix, then sigma(X)^2 == sigma(X X^dag)
    rng = np.random.default_rng(11)
    t = rng.standard_normal((3, 2, 2, 3)) + 1j * rng.standard_normal((3, 2, 2, 3))
    e = np.einsum("aijb,cijd->acbd", t, t.conj()).reshape(9, 9)
    w, v = np.linalg.eig(e)
    r = v[:, np.argmax(np.abs(w))].reshape(3, 3)
    r = r / np.trace(r)
    r = (r + r.conj().T) / 2
    vals, vecs = np.linalg.eigh(r)
    root = (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.conj().T
    x = np.tensordot(t, root, axes=(3, 0)).reshape(6, 6)
    s = np.linalg.svd(x, compute_uv=False)
    s2 = np.linalg.svd(x @ x.conj().T, compute_uv=False)
    np.testing.assert_allclose(s**2, s2, atol=1e-10 * s2[0])
    assert squaring_check(MpoTensor(t)) < 1e-9
