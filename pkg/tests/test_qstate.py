import numpy as np
import pytest

from cavitylink.qstate import (
    TOLERANCES, CompositeSpace, FactorLabel, Operator, QStateError,
    StateVector, embed, enumerate_branches, equal_up_to_global_phase,
    make_rng, measure_factor, state_fidelity, tensor, tensor_operators)


def two_qubits():
    return CompositeSpace([FactorLabel("a", 2), FactorLabel("b", 2)])


def test_factor_label_validation():
    with pytest.raises(QStateError, match="dim >= 2"):
        FactorLabel("x", 1)
    with pytest.raises(QStateError, match="non-empty"):
        FactorLabel("", 2)


def test_space_rejects_duplicates_and_empty():
    with pytest.raises(QStateError, match="duplicate"):
        CompositeSpace([FactorLabel("a", 2), FactorLabel("a", 3)])
    with pytest.raises(QStateError, match="at least one"):
        CompositeSpace([])


def test_index_row_major_layout():
    space = CompositeSpace([FactorLabel("a", 2), FactorLabel("b", 3)])
    assert space.index({"a": 0, "b": 0}) == 0
    assert space.index({"a": 0, "b": 2}) == 2
    assert space.index({"a": 1, "b": 0}) == 3
    assert space.index({"a": 1, "b": 2}) == 5
    with pytest.raises(QStateError, match="out of range"):
        space.index({"a": 0, "b": 3})
    with pytest.raises(QStateError, match="assignment keys"):
        space.index({"a": 0})


def test_state_norm_enforced():
    space = two_qubits()
    with pytest.raises(QStateError, match="norm"):
        StateVector(space, np.array([1.0, 1.0, 0.0, 0.0]))
    st = StateVector(space, np.array([1.0, 1.0, 0.0, 0.0]) / np.sqrt(2))
    assert abs(st.norm() - 1.0) < TOLERANCES.norm


def test_amplitudes_read_only():
    st = two_qubits().basis_state({"a": 0, "b": 1})
    with pytest.raises(ValueError):
        st.amplitudes[0] = 1.0


def test_tensor_product_and_amplitude_lookup():
    a = CompositeSpace([FactorLabel("a", 2)]).basis_state({"a": 1})
    b = StateVector(CompositeSpace([FactorLabel("b", 2)]),
                    np.array([1.0, 1.0j]) / np.sqrt(2))
    st = tensor([a, b])
    assert st.space.names == ("a", "b")
    np.testing.assert_allclose(st.amplitude({"a": 1, "b": 1}), 1.0j / np.sqrt(2))
    np.testing.assert_allclose(st.amplitude({"a": 0, "b": 0}), 0.0)


def test_tensor_rejects_duplicate_factor_names():
    a = CompositeSpace([FactorLabel("a", 2)]).basis_state({"a": 0})
    with pytest.raises(QStateError, match="collision"):
        tensor([a, a])


def test_operator_intent_flags():
    space = CompositeSpace([FactorLabel("a", 2)])
    with pytest.raises(QStateError, match="unitary intent"):
        Operator(space, np.array([[1.0, 1.0], [0.0, 1.0]]), unitary=True)
    with pytest.raises(QStateError, match="hermitian intent"):
        Operator(space, np.array([[0.0, 1.0j], [1.0j, 0.0]]), hermitian=True)
    Operator(space, np.array([[0.0, 1.0], [1.0, 0.0]]), hermitian=True, unitary=True)


def test_embed_acts_on_named_factor_only():
    space = CompositeSpace([FactorLabel("a", 2), FactorLabel("b", 2),
                            FactorLabel("c", 3)])
    x = Operator(CompositeSpace([FactorLabel("b", 2)]),
                 np.array([[0.0, 1.0], [1.0, 0.0]]), unitary=True)
    big = embed(x, space)
    st = space.basis_state({"a": 1, "b": 0, "c": 2})
    out = big.apply(st)
    np.testing.assert_allclose(out.amplitude({"a": 1, "b": 1, "c": 2}), 1.0)


def test_embed_multi_factor_block_matches_kron():
    # embedding a two-factor operator must respect the space's axis order
    sub = CompositeSpace([FactorLabel("b", 2), FactorLabel("a", 2)])
    rng = make_rng(3)
    h = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    u = np.linalg.qr(h)[0]
    op = Operator(sub, u, unitary=True)
    space = CompositeSpace([FactorLabel("a", 2), FactorLabel("b", 2)])
    big = embed(op, space)
    # |a=1, b=0> in sub order is |b=0, a=1>
    st = space.basis_state({"a": 1, "b": 0})
    out = big.apply(st)
    expect = np.zeros(4, dtype=complex)
    for bb in range(2):
        for aa in range(2):
            expect[space.index({"a": aa, "b": bb})] = u[bb * 2 + aa, 0 * 2 + 1]
    np.testing.assert_allclose(out.amplitudes, expect, atol=1e-12)


def test_tensor_operators_parallel_application():
    xa = Operator(CompositeSpace([FactorLabel("a", 2)]),
                  np.array([[0.0, 1.0], [1.0, 0.0]]), unitary=True)
    zb = Operator(CompositeSpace([FactorLabel("b", 2)]),
                  np.diag([1.0, -1.0]), unitary=True)
    both = tensor_operators([xa, zb])
    st = StateVector(both.space, np.array([0.0, 1.0, 0.0, 0.0]))  # |a0 b1>
    out = both.apply(st)
    np.testing.assert_allclose(out.amplitude({"a": 1, "b": 1}), -1.0)


def test_enumerate_branches_completeness():
    rng = make_rng(11)
    space = CompositeSpace([FactorLabel("a", 2), FactorLabel("b", 3)])
    for _ in range(20):
        v = rng.normal(size=space.dim) + 1j * rng.normal(size=space.dim)
        st = StateVector(space, v / np.linalg.norm(v))
        branches = enumerate_branches(st, "b")
        assert [label for label, _, _ in branches] == ["0", "1", "2"]
        total = sum(p for _, _, p in branches)
        np.testing.assert_allclose(total, 1.0, atol=1e-10)
        for _, collapsed, p in branches:
            if collapsed is not None:
                assert abs(collapsed.norm() - 1.0) < 1e-9


def test_enumerate_branches_custom_basis():
    space = CompositeSpace([FactorLabel("a", 2)])
    plus = np.array([1.0, 1.0]) / np.sqrt(2)
    minus = np.array([1.0, -1.0]) / np.sqrt(2)
    st = StateVector(space, plus)
    branches = enumerate_branches(st, "a", basis=[("+", plus), ("-", minus)])
    assert branches[0][0] == "+"
    np.testing.assert_allclose(branches[0][2], 1.0, atol=1e-12)
    assert branches[1][1] is None and branches[1][2] == 0.0


def test_enumerate_branches_rejects_bad_basis():
    space = CompositeSpace([FactorLabel("a", 2)])
    st = space.basis_state({"a": 0})
    with pytest.raises(QStateError, match="orthonormal"):
        enumerate_branches(st, "a", basis=[("0", [1.0, 0.0]), ("1", [1.0, 1.0])])


def test_measure_factor_seeded_reproducibility():
    space = two_qubits()
    st = StateVector(space, np.array([1.0, 0.0, 0.0, 1.0]) / np.sqrt(2))
    runs = [measure_factor(st, "a", rng_seed=5)[0] for _ in range(4)]
    assert len(set(runs)) == 1
    outcome, collapsed, prob = measure_factor(st, "a", rng_seed=5)
    np.testing.assert_allclose(prob, 0.5, atol=1e-12)
    # collapse keeps the measured factor in a definite level
    keep = {"0": 0, "1": 1}[outcome]
    np.testing.assert_allclose(
        abs(collapsed.amplitude({"a": keep, "b": keep})), 1.0, atol=1e-12)


def test_measurement_statistics_match_born_rule():
    rng = make_rng(2)
    space = CompositeSpace([FactorLabel("a", 2)])
    st = StateVector(space, np.array([0.6, 0.8]))
    hits = sum(measure_factor(st, "a", rng=rng)[0] == "1" for _ in range(2000))
    assert abs(hits / 2000 - 0.64) < 0.04


def test_state_fidelity_and_global_phase():
    space = two_qubits()
    rng = make_rng(9)
    v = rng.normal(size=4) + 1j * rng.normal(size=4)
    v /= np.linalg.norm(v)
    st = StateVector(space, v)
    rotated = StateVector(space, np.exp(0.7j) * v)
    np.testing.assert_allclose(state_fidelity(st, rotated), 1.0, atol=1e-12)
    assert equal_up_to_global_phase(st.amplitudes, rotated.amplitudes)
    assert not equal_up_to_global_phase(st.amplitudes, np.roll(v, 1))


def test_make_rng_determinism():
    a = make_rng(123).normal(size=5)
    b = make_rng(123).normal(size=5)
    np.testing.assert_allclose(a, b)
