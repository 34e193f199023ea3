import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sparse_diffusion.diffusion import (
    DivergenceError,
    Measurement,
    NodeState,
    SimulationConfig,
    SystemModel,
    adapt,
    combine,
    derive_seed,
    draw_measurement,
    draw_stream,
    node_generator,
    run_cells,
    run_realization,
    sparse_system,
)
from sparse_diffusion.experiment import run_ensemble
from sparse_diffusion.network import (
    CombinationMatrix,
    SparsityProfile,
    build_metropolis,
    generate_geometric_topology,
    topology_from_edges,
)

from conftest import complete

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def reference_run(model, cmat, rho_vector, mu, iterations, run_seed):
    """Step-by-step recursion through adapt/combine on the same stream as the kernel."""
    n = cmat.n
    u, v = draw_stream(model, n, iterations, run_seed)
    states = [NodeState(np.zeros(model.taps)) for _ in range(n)]
    msd = [float(model.w0 @ model.w0)]
    for t in range(iterations):
        meas = [Measurement(float(u[t, k] @ model.w0) + v[t, k], u[t, k], v[t, k]) for k in range(n)]
        states = [adapt(s, m, mu, r) for s, m, r in zip(states, meas, rho_vector)]
        states = combine(states, cmat)
        msd.append(np.mean([np.sum((model.w0 - s.w) ** 2) for s in states]))
    return np.array(msd)


# -- measurements ---------------------------------------------------------------------------


def test_measurement_degenerate_cases():
    rng = np.random.default_rng(0)
    m = draw_measurement(SystemModel(np.zeros(4), 1.0, 0.0), rng)
    assert m.d == 0.0 and m.v == 0.0

    w0 = np.zeros(5)
    w0[0] = 1.0
    for _ in range(10):
        m = draw_measurement(SystemModel(w0, 2.0, 0.0), rng)
        assert m.d == m.u[0]


def test_measurement_sample_moments():
    model = SystemModel(np.zeros(3), 2.0, 0.5)
    rng = np.random.default_rng(1)
    draws = [draw_measurement(model, rng) for _ in range(100_000)]
    u = np.array([d.u for d in draws])
    v = np.array([d.v for d in draws])
    se = np.sqrt(2.0 / u.shape[0])
    assert np.all(np.abs(u.mean(axis=0)) < 3 * se)
    np.testing.assert_allclose(u.var(axis=0), 2.0, rtol=0.05)
    assert abs(v.var() - 0.5) < 0.025


def test_stream_matches_per_node_generators():
    model = SystemModel(np.ones(3), 4.0, 0.25)
    u, v = draw_stream(model, 2, 5, run_seed=99)
    g = node_generator(99, 1)
    np.testing.assert_array_equal(u[:, 1, :], 2.0 * g.standard_normal((5, 3)))
    np.testing.assert_array_equal(v[:, 1], 0.5 * g.standard_normal(5))


def test_sparse_system_support():
    model = sparse_system(128, seed=3, value=1.0, nonzeros=1)
    assert model.taps == 128 and model.nonzeros == 1
    assert float(model.w0 @ model.w0) == 1.0
    np.testing.assert_array_equal(model.w0, sparse_system(128, seed=3).w0)


def test_model_rejects_bad_statistics():
    with pytest.raises(ValueError):
        SystemModel(np.ones(2), 0.0, 1.0)
    with pytest.raises(ValueError):
        SystemModel(np.ones(2), 1.0, -1.0)
    with pytest.raises(ValueError):
        SystemModel(np.array([]))


def test_derive_seed_distinct_and_stable():
    seeds = {derive_seed(7, r) for r in range(1000)}
    assert len(seeds) == 1000
    assert derive_seed(7, 3) == derive_seed(7, 3)
    assert derive_seed(7, 3) != derive_seed(8, 3)


# -- adapt ------------------------------------------------------------------------------------


def test_adapt_sign_of_zero_is_zero():
    u = np.array([1.0, -2.0, 0.5])
    out = adapt(NodeState(np.zeros(3)), Measurement(0.7, u, 0.0), 0.1, rho_k=0.3)
    np.testing.assert_array_equal(out.intermediate, 0.1 * 0.7 * u)


def test_adapt_zero_error_fixed_point():
    out = adapt(NodeState(np.array([0.5])), Measurement(1.0, np.array([2.0]), 0.0), 0.1, 0.0)
    assert out.intermediate.tolist() == [0.5]


def test_adapt_hand_evaluated_step():
    out = adapt(NodeState(np.array([1.0, -1.0])), Measurement(2.0, np.array([1.0, 0.0]), 0.0), 0.1, 0.01)
    np.testing.assert_allclose(out.intermediate, [1.09, -0.99], rtol=0, atol=1e-15)
    assert out.w.tolist() == [1.0, -1.0]


@settings(max_examples=100, deadline=None)
@given(w=arrays(float, 4, elements=finite), u=arrays(float, 4, elements=finite), d=finite,
       mu=st.floats(1e-4, 1.0))
def test_adapt_without_attraction_is_textbook_lms(w, u, d, mu):
    out = adapt(NodeState(w), Measurement(d, u, 0.0), mu, 0.0)
    e = d - sum(wi * ui for wi, ui in zip(w, u))
    expected = np.array([wi + mu * ui * e for wi, ui in zip(w, u)])
    np.testing.assert_allclose(out.intermediate, expected, rtol=1e-12, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(w=arrays(float, 5, elements=finite), rho=st.floats(0, 1))
def test_attraction_term_is_odd_sign(w, rho):
    u = np.zeros(5)
    plus = adapt(NodeState(w), Measurement(0.0, u, 0.0), 0.1, rho).intermediate - w
    minus = adapt(NodeState(-w), Measurement(0.0, u, 0.0), 0.1, rho).intermediate + w
    np.testing.assert_array_equal(plus, -minus)
    if rho > 0:
        assert set(np.unique(np.round(-plus / rho, 12))) <= {-1.0, 0.0, 1.0}


# -- combine ----------------------------------------------------------------------------------


def test_combine_consensus_identity_and_average(ring8):
    x = np.array([0.3, -1.7, 2.5])
    cm = build_metropolis(ring8)
    out = combine([NodeState(np.zeros(3), x.copy()) for _ in range(8)], cm)
    for s in out:
        np.testing.assert_allclose(s.w, x, rtol=0, atol=4e-16)
        assert s.intermediate is None

    ident = CombinationMatrix(np.eye(3), "metropolis", True)
    xs = [np.array([float(k), -k]) for k in range(3)]
    out = combine([NodeState(np.zeros(2), xi) for xi in xs], ident)
    for s, xi in zip(out, xs):
        np.testing.assert_array_equal(s.w, xi)

    pair = build_metropolis(complete(2))
    x1, x2 = np.array([1.0, 4.0]), np.array([3.0, -2.0])
    out = combine([NodeState(np.zeros(2), x1), NodeState(np.zeros(2), x2)], pair)
    for s in out:
        np.testing.assert_array_equal(s.w, (x1 + x2) / 2)


def test_combine_fails_fast_on_mismatch(path3):
    cm = build_metropolis(path3)
    good = NodeState(np.zeros(2), np.ones(2))
    with pytest.raises(ValueError):
        combine([good, good], cm)
    with pytest.raises(ValueError):
        combine([good, good, NodeState(np.zeros(2))], cm)
    with pytest.raises(ValueError):
        combine([good, good, NodeState(np.zeros(3), np.ones(3))], cm)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32), n=st.integers(2, 12))
def test_doubly_stochastic_combine_preserves_average(seed, n):
    t = generate_geometric_topology(n, 0.6, seed)
    cm = build_metropolis(t)
    rng = np.random.default_rng(seed)
    inter = rng.standard_normal((n, 4))
    out = combine([NodeState(np.zeros(4), x) for x in inter], cm)
    np.testing.assert_allclose(np.mean([s.w for s in out], axis=0), inter.mean(axis=0), atol=1e-13)


# -- realizations -----------------------------------------------------------------------------


def test_zero_iterations_gives_initial_msd(path3):
    model = SystemModel(np.array([1.0, -2.0, 0.0]))
    cm = build_metropolis(path3)
    tr = run_realization(model, path3, cm, SparsityProfile.for_set(cm, (0,), 1e-3),
                         SimulationConfig(iterations=0, steady_window=0))
    assert tr.values.tolist() == [5.0]


def test_same_seed_bit_identical(ring8):
    model = sparse_system(16, seed=2, nonzeros=2)
    cm = build_metropolis(ring8)
    prof = SparsityProfile.for_set(cm, (1, 5), 1e-4)
    cfg = SimulationConfig(mu=0.01, iterations=300, seed=5, steady_window=50)
    a = run_realization(model, ring8, cm, prof, cfg)
    b = run_realization(model, ring8, cm, prof, cfg)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.run_seed == 5


def test_kernel_matches_adapt_combine_reference(path3):
    model = sparse_system(6, seed=1, nonzeros=2, sigma_v_sq=1e-2)
    cm = build_metropolis(path3)
    rho = np.array([2e-3, 0.0, 5e-3])
    msd, _ = run_cells(model, cm, rho, 0.05, 200, run_seed=17)
    ref = reference_run(model, cm, rho, 0.05, 200, 17)
    np.testing.assert_allclose(msd[0], ref, rtol=1e-11, atol=0)


def test_snapshots_hold_final_state(path3):
    model = sparse_system(4, seed=0)
    cm = build_metropolis(path3)
    msd, snaps = run_cells(model, cm, np.zeros((1, 3)), 0.05, 30, 4, record_window=10, record_stride=5)
    assert snaps.shape == (1, 2, 3, 4)
    final = np.mean(np.sum((model.w0 - snaps[0, -1]) ** 2, axis=1))
    assert final == pytest.approx(msd[0, -1], rel=1e-12)


def test_noiseless_single_node_converges():
    t = topology_from_edges(1, [])
    cm = build_metropolis(t)
    for seed in range(20):
        model = sparse_system(128, seed=seed, sigma_v_sq=0.0)
        msd, _ = run_cells(model, cm, np.zeros((1, 1)), 6e-3, 3000, run_seed=seed)
        assert msd[0, -1] < 1e-6 * msd[0, 0]
        # block means decrease even though single steps may not
        blocks = msd[0, 1:].reshape(30, 100).mean(axis=1)
        assert np.all(np.diff(blocks) < 0)


def test_divergence_reports_seed(path3):
    model = sparse_system(32, seed=0)
    cm = build_metropolis(path3)
    with pytest.raises(DivergenceError) as info:
        run_cells(model, cm, np.zeros((1, 3)), 1.5, 2000, run_seed=123)
    assert info.value.run_seed == 123
    assert info.value.iteration > 0


def test_unstable_step_warns():
    with pytest.warns(RuntimeWarning):
        SimulationConfig(mu=3.0).check_stability(1.0)


def test_doubling_noise_raises_steady_msd(ring8):
    cm = build_metropolis(ring8)
    prof = SparsityProfile.for_set(cm, (), 0.0)
    cfg = SimulationConfig(mu=0.02, iterations=800, seed=8, steady_window=200)
    lo = run_ensemble(sparse_system(16, 1, sigma_v_sq=1e-3), ring8, cm, prof, cfg, runs=20)
    hi = run_ensemble(sparse_system(16, 1, sigma_v_sq=2e-3), ring8, cm, prof, cfg, runs=20)
    assert hi.steady_msd - hi.confidence_halfwidth > lo.steady_msd + lo.confidence_halfwidth


def test_common_random_numbers_across_cells(ring8):
    model = sparse_system(16, seed=4, sigma_v_sq=1e-3)
    cm = build_metropolis(ring8)
    rows = np.array([np.zeros(8), np.full(8, 1e-4), np.zeros(8)])
    msd, _ = run_cells(model, cm, rows, 0.02, 400, run_seed=11)
    np.testing.assert_array_equal(msd[0], msd[2])
    single, _ = run_cells(model, cm, rows[1], 0.02, 400, run_seed=11)
    np.testing.assert_array_equal(msd[1], single[0])
