import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from battmdp.markov_chain import NO_OP_ACTION, PeakThresholds, TransitionMatrix, action_rate, action_rates, \
    build_chain, closed_classes, compose_basic, compose_peak, estimate_demand_transitions, joint_transitions, \
    peak_destinations, peak_transition, soc_transition, time_transition
from reference import PUBLISHED_QUANTILE_MATRIX, normalized_quantile_matrix, sample_chain


def test_action_grid():
    rates = action_rates()
    assert rates.size == 21
    assert rates[0] == -1.0 and rates[-1] == 1.0
    assert action_rate(NO_OP_ACTION) == 0.0
    assert action_rate(15) == pytest.approx(0.4)


def test_transition_matrix_validation():
    with pytest.raises(ValueError):
        TransitionMatrix(np.array([[0.5, 0.4], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        TransitionMatrix(np.ones((2, 3)) / 3)
    with pytest.raises(ValueError):
        TransitionMatrix(np.array([[1.5, -0.5], [0.0, 1.0]]))


def test_published_rows_are_rounded_probabilities():
    sums = PUBLISHED_QUANTILE_MATRIX.sum(axis=1)
    assert np.all(np.abs(sums - 1) <= 0.011)
    TransitionMatrix(normalized_quantile_matrix())


def test_constant_sequence_gives_self_loops():
    m = estimate_demand_transitions(np.full(100, 3))
    np.testing.assert_array_equal(m.rows, np.eye(9))


def test_estimate_counts_pairs():
    m = estimate_demand_transitions([1, 2, 1, 2, 2], n_states=2)
    # from 1: 1->2 twice; from 2: 2->1 once, 2->2 once
    np.testing.assert_allclose(m.rows, [[0.0, 1.0], [0.5, 0.5]])


def test_estimate_rejects_out_of_range():
    with pytest.raises(ValueError):
        estimate_demand_transitions([0, 1, 2])


def test_planted_matrix_recovery_small_sample():
    P = normalized_quantile_matrix()
    hits = 0
    for seed in range(20):
        est = estimate_demand_transitions(sample_chain(P, 10_000, seed)).rows
        hits += np.abs(est - P).max() <= 0.05
    assert hits >= 19


def _near_diagonal_mass(m):
    return np.array([m[q, max(q - 1, 0):q + 2].sum() for q in range(m.shape[0])])


def test_planted_near_diagonal_mass_is_recovered():
    P = normalized_quantile_matrix()
    est = estimate_demand_transitions(sample_chain(P, 50_000, 0)).rows
    np.testing.assert_allclose(_near_diagonal_mass(est), _near_diagonal_mass(P), atol=0.03)
    # most rows keep 70% of their mass within one level; the 0.6 row is the exception
    assert (_near_diagonal_mass(P) >= 0.70).sum() == 8


def test_time_chain():
    T = time_transition().rows
    assert T[0, 1] == 1.0
    assert T[23, 0] == 1.0
    np.testing.assert_array_equal(np.linalg.matrix_power(T, 24), np.eye(24))


def test_soc_examples():
    s10 = soc_transition(10)  # u = -0.1
    assert s10.matrix[1, 0] == 1.0 and not s10.infeasible[1]
    assert s10.matrix[0, 0] == 1.0 and s10.infeasible[0]
    s9 = soc_transition(9)  # u = -0.2
    assert s9.matrix[2, 0] == 1.0 and not s9.infeasible[2]
    assert s9.matrix[1, 0] == 1.0 and s9.infeasible[1]
    s11 = soc_transition(11)
    np.testing.assert_array_equal(s11.matrix.rows, np.eye(11))
    assert not s11.infeasible.any()
    s21 = soc_transition(21)
    assert np.all(s21.matrix.rows[:, 10] == 1.0)
    np.testing.assert_array_equal(s21.infeasible, np.arange(11) > 0)
    with pytest.raises(ValueError):
        soc_transition(22)


@pytest.mark.parametrize("k", range(1, 22))
def test_soc_charge_discharge_symmetry(k):
    a, b = soc_transition(k), soc_transition(22 - k)
    step = abs(k - 11)
    interior = np.arange(step, 11 - step)
    sub_a = a.matrix.rows[np.ix_(interior, interior)] if interior.size else np.zeros((0, 0))
    sub_b = b.matrix.rows[np.ix_(interior, interior)] if interior.size else np.zeros((0, 0))
    np.testing.assert_array_equal(sub_a, sub_b.T)


def test_thresholds():
    th = PeakThresholds()
    assert th.count == 6
    np.testing.assert_array_equal(th.representative, [0, 100, 200, 300, 400, 500])
    assert th.bucket(0.0) == 1 and th.bucket(99.9) == 1 and th.bucket(100.0) == 2 and th.bucket(650) == 6
    assert PeakThresholds.uniform(6, 100.0) == th
    for r in range(1, 7):
        assert th.bucket(th.representative[r - 1]) == r
    with pytest.raises(ValueError):
        PeakThresholds((200.0, 100.0))


def _table(value):
    return np.full((24, 1), float(value))


def test_peak_keeps_larger_value():
    th = PeakThresholds()
    m = peak_transition(5, 1, 1, th, _table(150.0), np.array([0.0]))
    assert m[4, 4] == 1.0  # r=5 (rep 400) stays


def test_peak_rises_with_grid_energy():
    th = PeakThresholds()
    m = peak_transition(5, 1, 1, th, _table(250.0), np.array([0.0]))
    assert m[0, 2] == 1.0  # r=1 -> r=3 ("Peak >= 200")


def test_peak_resets_after_last_hour():
    th = PeakThresholds()
    m = peak_transition(24, 1, 1, th, _table(450.0), np.array([0.0]))
    assert np.all(m.rows[:, 0] == 1.0)


def test_peak_destination_shapes():
    th = PeakThresholds()
    raw, dest = peak_destinations(th, np.full((24, 9), 120.0), np.linspace(-50, 50, 21))
    assert raw.shape == dest.shape == (24, 9, 21, 6)
    assert np.all(dest[-1] == 0)
    assert np.all(raw >= np.arange(6))


@pytest.fixture(scope="module")
def fig4_chain():
    return build_chain(normalized_quantile_matrix())


def test_compose_reads_fig4(fig4_chain):
    P = compose_basic(fig4_chain, NO_OP_ACTION)
    src = np.ravel_multi_index((2, 5, 3), (24, 11, 9))
    dst = np.ravel_multi_index((3, 5, 4), (24, 11, 9))
    expected = PUBLISHED_QUANTILE_MATRIX[3, 4] / PUBLISHED_QUANTILE_MATRIX[3].sum()
    assert P[src, dst] == pytest.approx(expected)
    assert PUBLISHED_QUANTILE_MATRIX[3, 4] == 0.19


def test_compose_structure(fig4_chain):
    for P in joint_transitions(fig4_chain):
        np.testing.assert_allclose(np.asarray(P.sum(axis=1)).ravel(), 1.0, atol=1e-12)
        assert np.diff(P.indptr).max() <= 9


def test_deterministic_factors_single_destination():
    chain = build_chain(np.eye(9))
    for P in joint_transitions(chain):
        assert np.all(np.diff(P.indptr) == 1)
        assert np.all(P.data == 1.0)


def test_peak_compose_rows_and_sparsity(fig4_chain):
    th = PeakThresholds()
    table = np.linspace(50, 450, 9)[None, :] + np.zeros((24, 1))
    raw, dest = peak_destinations(th, table, np.linspace(-460, 543, 21))
    chain = build_chain(normalized_quantile_matrix(), peak_dest=dest, peak_raw=raw)
    assert chain.n_states == 24 * 11 * 9 * 6
    for k in (1, 11, 21):
        P = compose_peak(chain, k)
        np.testing.assert_allclose(np.asarray(P.sum(axis=1)).ravel(), 1.0, atol=1e-12)
        assert np.diff(P.indptr).max() <= 9


def test_single_threshold_reduces_to_basic(fig4_chain):
    th = PeakThresholds(())
    raw, dest = peak_destinations(th, np.full((24, 9), 300.0), np.zeros(21))
    chain = build_chain(normalized_quantile_matrix(), peak_dest=dest, peak_raw=raw)
    for k in (1, 11, 21):
        assert (compose_peak(chain, k) != compose_basic(fig4_chain, k)).nnz == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_random_chains_are_stochastic(seed):
    rng = np.random.default_rng(seed)
    D = rng.dirichlet(np.ones(3), size=3)
    chain = build_chain(D, levels=2, n_hours=3)
    for P in joint_transitions(chain):
        assert P.shape == (3 * 3 * 3,) * 2
        np.testing.assert_allclose(np.asarray(P.sum(axis=1)).ravel(), 1.0, atol=1e-12)
        assert P.min() >= 0


def test_transition_csv(tmp_path):
    m = TransitionMatrix(normalized_quantile_matrix())
    m.to_csv(tmp_path / "m.csv")
    back = np.loadtxt(tmp_path / "m.csv", delimiter=",")
    np.testing.assert_allclose(back, m.rows, rtol=1e-14)


def test_closed_classes_of_identity_and_irreducible_chains():
    np.testing.assert_array_equal(closed_classes(np.eye(3)), [0, 1, 2])
    assert (closed_classes(TransitionMatrix(normalized_quantile_matrix())) == 0).all()


def test_closed_classes_marks_transient_states():
    P = np.array([[0.5, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.3, 0.7]])
    np.testing.assert_array_equal(closed_classes(P), [-1, 0, -1])
