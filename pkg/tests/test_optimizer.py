import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from conftest import buffered_instance, injected_v_sequence, make_views, random_chunk, small_state
from omvfs import graph, optimizer
from omvfs.types import (
    DivergenceError,
    HyperParams,
    MultiViewChunk,
    ValidationError,
    check_state,
    new_state,
)


def buffer_m(state):
    xs = [oracles.to_lists(x) for x in state.buffer.x_buf]
    laps = [oracles.laplacian(oracles.kernel_matrix(x, s)) for x, s in zip(xs, state.sigmas)]
    return xs, laps, oracles.combined(laps, state.params.alpha)


# init_chunk

def test_init_cold_start(rng):
    state = small_state(dims=(3,), k=2, kernel_bandwidth=0.8)
    chunk = random_chunk(rng, 4, (3,))
    optimizer.init_chunk(state, chunk)
    assert state.buffer.chunk_sizes == [4]
    np.testing.assert_array_equal(state.buffer.w_buf[0], graph.self_block(chunk.per_view[0], 0.8))
    u = state.buffer.u_buf
    assert u.shape == (4, 2) and np.all(u > 0) and np.all(u <= 1)


def test_init_evicts_oldest_chunk(rng):
    state = small_state(dims=(3, 2), k=2, buffer_chunks=2)
    chunks = [random_chunk(rng, m, (3, 2), t=i + 1) for i, m in enumerate([3, 4, 2])]
    optimizer.init_chunk(state, chunks[0])
    optimizer.init_chunk(state, chunks[1])
    u_chunk2 = state.buffer.u_buf[3:].copy()
    optimizer.init_chunk(state, chunks[2])
    buf = state.buffer
    assert buf.chunk_sizes == [4, 2] and buf.chunk_boundaries == [0, 4]
    for v in range(2):
        np.testing.assert_array_equal(buf.x_buf[v], np.vstack([chunks[1].per_view[v], chunks[2].per_view[v]]))
        assert buf.w_buf[v].shape == (6, 6)
    np.testing.assert_array_equal(buf.u_buf[:4], u_chunk2)


def test_init_is_deterministic(rng):
    chunk = random_chunk(rng, 5, (3,))
    a, b = small_state(dims=(3,), seed=4), small_state(dims=(3,), seed=4)
    optimizer.init_chunk(a, chunk)
    optimizer.init_chunk(b, chunk)
    np.testing.assert_array_equal(a.buffer.u_buf, b.buffer.u_buf)


def test_init_rejects_dimension_mismatch(rng):
    state = small_state(dims=(3,))
    with pytest.raises(ValidationError, match="features"):
        optimizer.init_chunk(state, random_chunk(rng, 2, (4,)))


def test_median_sigma_frozen_after_first_chunk(rng):
    state = new_state(HyperParams.uniform(1, 2), make_views([3]))
    optimizer.process_chunk(state, random_chunk(rng, 6, (3,)))
    sigma = state.sigmas[0]
    optimizer.process_chunk(state, MultiViewChunk(t=2, per_view=[10 * rng.random((6, 3))]))
    assert state.sigmas == [sigma]


# update_u

def test_update_u_preserves_zero(rng):
    state = small_state(dims=(3,), k=2)
    optimizer.init_chunk(state, random_chunk(rng, 4, (3,)))
    state.buffer.u_buf[1, 0] = 0.0
    optimizer.update_u(state)
    assert state.buffer.u_buf[1, 0] == 0.0


def test_update_u_fixed_point():
    # X = U V' with alpha = gamma = 0 makes numerator and denominator equal
    u = np.array([[1.0, 2.0], [3.0, 1.0]])
    v = np.array([[1.0, 0.0], [2.0, 1.0], [0.0, 3.0]])
    state = small_state(dims=(3,), k=2, alpha=0.0, gamma=0.0)
    optimizer.init_chunk(state, MultiViewChunk(t=1, per_view=[u @ v.T]))
    state.buffer.u_buf = u.copy()
    state.v_mats = [v]
    optimizer.update_u(state)
    np.testing.assert_array_equal(state.buffer.u_buf, u)


def test_update_u_two_row_scalar():
    x = np.array([[1.0, 2.0], [0.5, 0.0]])
    v = np.array([[0.3], [0.7]])
    u = np.array([[0.4], [0.9]])
    state = small_state(dims=(2,), k=1, alpha=0.0, gamma=0.0)
    optimizer.init_chunk(state, MultiViewChunk(t=1, per_view=[x]))
    state.buffer.u_buf = u.copy()
    state.v_mats = [v]
    optimizer.update_u(state)
    vtv = 0.3**2 + 0.7**2
    expect = [0.4 * np.sqrt((1.0 * 0.3 + 2.0 * 0.7) / (0.4 * vtv)),
              0.9 * np.sqrt((0.5 * 0.3) / (0.9 * vtv))]
    np.testing.assert_allclose(state.buffer.u_buf.ravel(), expect, rtol=0, atol=1e-15)


@given(seed=st.integers(0, 2**31))
def test_update_u_matches_scalar_oracle(seed):
    state = buffered_instance(seed)
    p = state.params
    xs, _, m = buffer_m(state)
    expect = oracles.u_step(xs, state.buffer.u_buf.tolist(), [v.tolist() for v in state.v_mats],
                            p.gamma, m, p.norm_eps)
    optimizer.update_u(state)
    np.testing.assert_allclose(state.buffer.u_buf, expect, rtol=0, atol=1e-12)


def test_update_u_divergence():
    state = small_state(dims=(2,), k=1)
    optimizer.init_chunk(state, MultiViewChunk(t=1, per_view=[np.ones((2, 2))]))
    state.v_mats[0][0, 0] = np.inf
    with pytest.raises(DivergenceError):
        optimizer.update_u(state)


# update_v

def test_update_v_preserves_zero(rng):
    state = small_state(dims=(3,), k=2)
    optimizer.init_chunk(state, random_chunk(rng, 4, (3,)))
    state.v_mats[0][2, 1] = 0.0
    optimizer.update_v(state, 0)
    assert state.v_mats[0][2, 1] == 0.0


def test_update_v_fixed_point():
    x = np.array([[1.0, 2.0, 0.0], [3.0, 1.0, 4.0]])
    state = small_state(dims=(3,), k=2, beta=0.0)
    optimizer.init_chunk(state, MultiViewChunk(t=1, per_view=[x]))
    state.buffer.u_buf = np.eye(2)
    state.v_mats = [x.T.copy()]
    optimizer.update_v(state, 0)
    np.testing.assert_array_equal(state.v_mats[0], x.T)


def test_update_v_three_feature_oracle():
    x = np.array([[0.2, 0.0, 0.9], [0.5, 0.3, 0.1]])
    u = np.array([[0.6, 0.2], [0.1, 0.8]])
    v = np.array([[0.5, 0.4], [0.0, 0.7], [0.9, 0.1]])
    state = small_state(dims=(3,), k=2, beta=0.7)
    optimizer.init_chunk(state, MultiViewChunk(t=1, per_view=[x]))
    state.buffer.u_buf = u.copy()
    state.v_mats = [v.copy()]
    expect = oracles.v_step(x.tolist(), u.tolist(), v.tolist(), np.zeros((2, 2)).tolist(),
                            np.zeros((3, 2)).tolist(), 0.7, 1e-10)
    optimizer.update_v(state, 0)
    np.testing.assert_allclose(state.v_mats[0], expect, rtol=0, atol=1e-12)
    assert state.v_mats[0][1, 0] == 0.0


@given(seed=st.integers(0, 2**31))
def test_update_v_matches_scalar_oracle(seed):
    state = buffered_instance(seed)
    p = state.params
    rows = optimizer.current_rows(state)
    u_t = state.buffer.u_buf[rows].tolist()
    for view in range(state.n_views):
        x_t = state.buffer.x_buf[view][rows].tolist()
        expect = oracles.v_step(x_t, u_t, state.v_mats[view].tolist(), state.agg.a.tolist(),
                                state.agg.b[view].tolist(), p.beta[view], p.norm_eps)
        optimizer.update_v(state, view)
        np.testing.assert_allclose(state.v_mats[view], expect, rtol=0, atol=1e-12)


# buffered_objective

def test_objective_perfect_factorization():
    u = np.eye(2)
    v = np.array([[1.0, 2.0], [0.0, 3.0], [4.0, 1.0]])
    state = small_state(dims=(3,), k=2, alpha=0.0, beta=0.0)
    optimizer.init_chunk(state, MultiViewChunk(t=1, per_view=[u @ v.T]))
    state.buffer.u_buf = u
    state.v_mats = [v]
    assert optimizer.buffered_objective(state) == 0.0


def test_l21_of_345_rows():
    assert optimizer.l21_norm(np.array([[3.0, 4.0], [0.0, 0.0]])) == 5.0


def test_objective_beta_term_alone():
    u = np.eye(2)
    v = np.array([[3.0, 4.0], [0.0, 0.0]])
    base = dict(dims=(2,), k=2, alpha=0.0)
    with_beta, without = small_state(**base, beta=2.0), small_state(**base, beta=0.0)
    for s in (with_beta, without):
        optimizer.init_chunk(s, MultiViewChunk(t=1, per_view=[u @ v.T]))
        s.buffer.u_buf = u
        s.v_mats = [v]
    assert optimizer.buffered_objective(with_beta) - optimizer.buffered_objective(without) == 2.0 * 5


@given(seed=st.integers(0, 2**31))
def test_objective_matches_term_oracle(seed):
    state = buffered_instance(seed)
    p = state.params
    xs, laps, _ = buffer_m(state)
    expect = oracles.objective(xs, state.buffer.u_buf.tolist(), [v.tolist() for v in state.v_mats],
                               p.alpha, p.beta, p.gamma, laps)
    assert optimizer.buffered_objective(state) == pytest.approx(expect, rel=1e-9, abs=1e-9)


# process_chunk

def test_chunk_iterations_capped(rng):
    state = small_state(dims=(8, 5), k=3)
    for t in range(3):
        report = optimizer.process_chunk(state, random_chunk(rng, 20, (8, 5), t=t + 1))
        assert 1 <= report.iters <= 200
        assert len(report.trace) == report.iters + 1
    assert state.t == 3


def test_zero_row_chunk_is_noop(rng):
    state = small_state(dims=(3,), k=2)
    optimizer.process_chunk(state, random_chunk(rng, 4, (3,)))
    before = [v.copy() for v in state.v_mats]
    report = optimizer.process_chunk(state, MultiViewChunk(t=2, per_view=[np.zeros((0, 3))]))
    assert state.t == 1 and report.iters == 0
    for a, b in zip(before, state.v_mats):
        np.testing.assert_array_equal(a, b)


def test_identical_runs_identical_traces(rng):
    chunks = [random_chunk(rng, 10, (6, 4), t=t + 1) for t in range(4)]

    def run():
        state = small_state(dims=(6, 4), k=3, seed=11, max_inner_iters=40)
        for c in chunks:
            optimizer.process_chunk(state, c)
        return state

    a, b = run(), run()
    assert a.objective_trace == b.objective_trace
    for x, y in zip(a.v_mats, b.v_mats):
        np.testing.assert_array_equal(x, y)


def test_threads_do_not_change_results(rng):
    chunks = [random_chunk(rng, 8, (5, 4, 3), t=t + 1) for t in range(3)]
    states = []
    for threads in (1, 3):
        s = small_state(dims=(5, 4, 3), k=2, max_inner_iters=15)
        for c in chunks:
            optimizer.process_chunk(s, c, threads=threads)
        states.append(s)
    assert states[0].objective_trace == states[1].objective_trace


def test_report_json_fields(rng):
    state = small_state(dims=(3,), k=2, max_inner_iters=5)
    report = optimizer.process_chunk(state, random_chunk(rng, 4, (3,)))
    assert set(report.to_json_dict()) == {"t", "iters", "objective", "millis"}


@given(seed=st.integers(0, 2**31))
def test_first_chunk_monotone(seed):
    # with no history in A and B both steps descend the buffered objective itself
    rng = np.random.default_rng(seed)
    dims = (int(rng.integers(2, 9)), int(rng.integers(2, 9)))
    state = small_state(dims=dims, k=int(rng.integers(1, 4)), seed=seed, alpha=float(rng.uniform(0, 2)),
                        beta=float(rng.uniform(0, 2)), max_inner_iters=30)
    report = optimizer.process_chunk(state, random_chunk(rng, int(rng.integers(2, 10)), dims))
    tr = np.array(report.trace)
    assert np.all(tr[1:] <= tr[:-1] * (1 + 1e-8))
    check_state(state)


def history_objective(state, view):
    """V-dependent part of sum_i ||X_i - U_i V'||^2 + beta ||V||_{2,1} over every chunk seen."""
    rows = optimizer.current_rows(state)
    u_t = state.buffer.u_buf[rows]
    x_t = state.buffer.x_buf[view][rows]
    a = state.agg.a + u_t.T @ u_t
    b = state.agg.b[view] + x_t.T @ u_t
    v = state.v_mats[view]
    return np.sum((v @ a) * v) - 2 * np.sum(v * b) + state.params.beta[view] * optimizer.l21_norm(v)


@given(seed=st.integers(0, 2**31))
def test_v_step_descends_history_objective(seed):
    state = buffered_instance(seed)
    for view in range(state.n_views):
        before = history_objective(state, view)
        optimizer.update_v(state, view)
        assert history_objective(state, view) <= before + 1e-10 * max(abs(before), 1.0)


@given(seed=st.integers(0, 2**31))
def test_zero_preservation(seed):
    state = buffered_instance(seed)
    rng = np.random.default_rng(seed + 1)
    zu = rng.random(state.buffer.u_buf.shape) < 0.3
    state.buffer.u_buf[zu] = 0.0
    zv = [rng.random(v.shape) < 0.3 for v in state.v_mats]
    for v, z in zip(state.v_mats, zv):
        v[z] = 0.0
    optimizer.update_u(state)
    for view in range(state.n_views):
        optimizer.update_v(state, view)
    assert np.all(state.buffer.u_buf[zu] == 0.0)
    for v, z in zip(state.v_mats, zv):
        assert np.all(v[z] == 0.0)
        assert np.all(v >= 0)


# aggregate

def test_aggregate_first_chunk(rng):
    state = small_state(dims=(3,), k=2)
    chunk = random_chunk(rng, 4, (3,))
    u = rng.random((4, 2))
    optimizer.aggregate(state, u, chunk)
    np.testing.assert_array_equal(state.agg.a, u.T @ u)
    np.testing.assert_array_equal(state.agg.b[0], chunk.per_view[0].T @ u)


def test_aggregate_zero_increment(rng):
    state = small_state(dims=(3,), k=2)
    optimizer.aggregate(state, rng.random((2, 2)), random_chunk(rng, 2, (3,)))
    a, b = state.agg.a.copy(), state.agg.b[0].copy()
    optimizer.aggregate(state, np.zeros((5, 2)), random_chunk(rng, 5, (3,)))
    np.testing.assert_array_equal(state.agg.a, a)
    np.testing.assert_array_equal(state.agg.b[0], b)


def test_aggregate_shape_mismatch(rng):
    state = small_state(dims=(3,), k=2)
    with pytest.raises(ValidationError):
        optimizer.aggregate(state, np.ones((3, 2)), random_chunk(rng, 4, (3,)))


def test_aggregate_brute_force_after_five_chunks(rng):
    state = small_state(dims=(4, 3), k=2, max_inner_iters=10)
    us, xs = [], []
    for t in range(5):
        chunk = random_chunk(rng, 6, (4, 3), t=t + 1)
        optimizer.process_chunk(state, chunk)
        us.append(optimizer.current_u(state).copy())
        xs.append(chunk.per_view)
    np.testing.assert_allclose(state.agg.a, sum(u.T @ u for u in us), rtol=0, atol=1e-10)
    for v in range(2):
        np.testing.assert_allclose(state.agg.b[v], sum(x[v].T @ u for x, u in zip(xs, us)), rtol=0, atol=1e-10)
    assert np.allclose(state.agg.a, state.agg.a.T)
    assert np.linalg.eigvalsh(state.agg.a).min() >= -1e-10


# rank_features

def test_rank_hand_norms():
    r = optimizer.ranking_from_matrix(np.array([[3.0, 4.0], [0.0, 0.0], [1.0, 0.0]]))
    assert r.order.tolist() == [0, 2, 1]
    assert r.scores.tolist() == [5.0, 1.0, 0.0]


def test_rank_ties_by_index():
    assert optimizer.ranking_from_matrix(np.ones((5, 2))).order.tolist() == [0, 1, 2, 3, 4]


@given(seed=st.integers(0, 2**31), d=st.integers(1, 40))
def test_rank_matches_naive_sort(seed, d):
    rng = np.random.default_rng(seed)
    # coarse values force ties
    v = rng.integers(0, 3, (d, 2)).astype(float)
    r = optimizer.ranking_from_matrix(v, view_id=1)
    norms = [float(np.sqrt(sum(c * c for c in row))) for row in v.tolist()]
    naive = sorted(range(d), key=lambda j: (-norms[j], j))
    assert r.order.tolist() == naive
    assert sorted(r.order.tolist()) == list(range(d))
    assert np.all(np.diff(r.scores) <= 0)


# structural properties

def test_buffer_size_does_not_affect_v(rng):
    chunks = [random_chunk(rng, int(rng.integers(3, 8)), (5, 3), t=t + 1) for t in range(6)]
    us = [rng.random((c.rows, 2)) for c in chunks]
    one, four = injected_v_sequence(chunks, us, 1), injected_v_sequence(chunks, us, 4)
    for a, b in zip(one, four):
        for x, y in zip(a, b):
            np.testing.assert_allclose(x, y, rtol=0, atol=1e-12)


def test_footprint_bounded_by_buffer(rng):
    state = small_state(dims=(20, 10), k=3, buffer_chunks=2, max_inner_iters=3)
    sizes = []
    for t in range(8):
        optimizer.process_chunk(state, random_chunk(rng, 10, (20, 10), t=t + 1))
        sizes.append(optimizer.state_footprint(state))
    assert all(s == sizes[1] for s in sizes[1:])
    assert sizes[-1]["buffer_rows"] == 20
