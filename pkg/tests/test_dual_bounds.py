import json
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fixtures import named_fixtures, one_step_square, random_small_problems, two_step_square
from oracles import all_paths, dual_by_enumeration
from snellkit import (
    PathCapExceeded,
    PayoffSpec,
    ValidationError,
    build_random_walk,
    controlled_trajectory,
    decompose,
    dual_bound_exact,
    dual_bound_mc,
    enumerate_paths,
    martingale_from_function,
    payoff_from_function,
    solve_snell,
)
from snellkit.dual_bounds import path_uniforms


def test_constant_f_has_zero_increments():
    chain, _ = two_step_square()
    m = martingale_from_function(chain, np.full(chain.n_states, 3.0))
    assert np.all(m.dMf == 0.0)


def test_f_equals_g_one_step():
    chain, payoff = one_step_square()
    m = martingale_from_function(chain, payoff.g)
    c = chain.center
    assert m.dMf[0, c, 0] == 0.0 and m.dMf[0, c, 2] == 0.0


def test_value_martingale_is_doob_meyer_martingale():
    for chain, payoff in list(named_fixtures().values()) + random_small_problems(20):
        sol = solve_snell(chain, payoff)
        m = martingale_from_function(chain, sol.S)
        dec = decompose(chain, payoff, sol)
        disc = chain.discount ** np.arange(chain.horizon)[:, None, None]
        np.testing.assert_allclose(m.dMf, disc * dec.dM, atol=1e-12, rtol=0)
        row_mean = np.einsum("ij,kij->ki", chain.transition, m.dMf)
        assert np.abs(row_mean).max() < 1e-12


def test_dual_two_step_examples():
    chain, payoff = two_step_square()
    sol = solve_snell(chain, payoff)
    zero = dual_bound_exact(chain, payoff, np.zeros(chain.n_states))
    assert abs(zero.mean - 2.5) < 1e-12 and zero.exact and zero.stderr == 0.0 and zero.n_paths == 4
    assert abs(dual_bound_exact(chain, payoff, sol.S).mean - 2.0) < 1e-12


def test_dual_constant_payoff():
    chain = build_random_walk(5, horizon=3)
    payoff = PayoffSpec(np.full(5, 1.25))
    assert abs(dual_bound_exact(chain, payoff, np.full(5, -4.0)).mean - 1.25) < 1e-15


def test_dual_matches_oracle():
    rng = np.random.default_rng(5)
    for chain, payoff in random_small_problems(24, seed=6):
        f = rng.normal(size=(chain.horizon + 1, chain.n_states))
        for x0 in range(chain.n_states):
            ref = dual_by_enumeration(chain.transition.tolist(), payoff.g.tolist(), chain.discount, chain.horizon, x0, f.tolist())
            assert abs(dual_bound_exact(chain, payoff, f, x0).mean - ref) < 1e-12


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["noise", "majorant"]))
def test_weak_duality(seed, kind):
    rng = np.random.default_rng(seed)
    chain, payoff = random_small_problems(12, seed=seed % 1000)[seed % 12]
    sol = solve_snell(chain, payoff)
    shape = (chain.horizon + 1, chain.n_states)
    f = rng.normal(size=shape) * 3 if kind == "noise" else payoff.g + rng.exponential(size=shape)
    for x0 in range(chain.n_states):
        assert dual_bound_exact(chain, payoff, f, x0).mean >= sol.S[0, x0] - 1e-10


def test_superharmonic_majorant_bound():
    """For f >= g with beta P f <= f the pathwise dual never exceeds f(x0)."""
    from snellkit.dual_bounds import pathwise_dual
    rng = np.random.default_rng(13)
    for chain, payoff in random_small_problems(24, seed=12):
        beta, P, g = chain.discount, chain.transition, payoff.g
        sol = solve_snell(chain, payoff)
        const = np.full(chain.n_states, max(g.max(), 0.0) + rng.exponential())
        shifted = sol.S + rng.exponential()
        for f in (const, shifted):
            F = np.broadcast_to(f, (chain.horizon + 1, chain.n_states))
            assert np.all(F >= g)
            assert np.all(beta * np.einsum("ij,kj->ki", P, F[1:]) <= F[:-1] + 1e-15)
            m = martingale_from_function(chain, f)
            for x0 in range(chain.n_states):
                paths, _ = enumerate_paths(chain, x0)
                assert pathwise_dual(chain, payoff, m, paths).max() <= F[0, x0] + 1e-10


def test_path_cap():
    chain = build_random_walk(41, horizon=25)
    payoff = payoff_from_function(chain, lambda x: x * x)
    with pytest.raises(PathCapExceeded, match="dual_bound_mc"):
        dual_bound_exact(chain, payoff, np.zeros(41))


def test_enumerate_paths_probabilities_sum_to_one():
    for chain, _ in random_small_problems(12, seed=3):
        paths, probs = enumerate_paths(chain, 0)
        assert abs(probs.sum() - 1.0) < 1e-12
        assert len(paths) == len(all_paths(chain.transition.tolist(), 0, chain.horizon))


def test_mc_zero_variance_at_value():
    for chain, payoff in list(named_fixtures().values()):
        sol = solve_snell(chain, payoff)
        est = dual_bound_mc(chain, payoff, sol.S, 4000, seed=1)
        assert est.stderr < 1e-10
        assert abs(est.mean - sol.S[0, chain.center]) < 1e-10


def test_mc_agrees_with_exact():
    chain, payoff = two_step_square()
    est = dual_bound_mc(chain, payoff, np.zeros(5), 100_000, seed=2026)
    assert abs(est.mean - 2.5) <= 4 * est.stderr
    for chain, payoff in random_small_problems(6, seed=77):
        f = np.zeros(chain.n_states)
        ex = dual_bound_exact(chain, payoff, f, 0)
        mc = dual_bound_mc(chain, payoff, f, 20_000, seed=9, x0=0)
        assert abs(mc.mean - ex.mean) <= 4 * mc.stderr + 1e-12


def test_mc_requires_two_paths():
    chain, payoff = two_step_square()
    with pytest.raises(ValidationError):
        dual_bound_mc(chain, payoff, np.zeros(5), 1, seed=0)


def test_mc_deterministic_and_chunk_independent(monkeypatch):
    chain, payoff = two_step_square()
    f = np.zeros(5)
    a = dual_bound_mc(chain, payoff, f, 30_001, seed=123)
    b = dual_bound_mc(chain, payoff, f, 30_001, seed=123, chunk=997)
    monkeypatch.setenv("SNELLKIT_THREADS", "4")
    c = dual_bound_mc(chain, payoff, f, 30_001, seed=123, chunk=1000)
    assert a == b == c
    assert a.to_json() == c.to_json()
    assert json.loads(a.to_json())["seed"] == 123
    assert dual_bound_mc(chain, payoff, f, 30_001, seed=124) != a


def test_path_uniforms_are_per_path():
    full = path_uniforms(99, 0, 10, 7)
    part = path_uniforms(99, 6, 3, 7)
    assert np.array_equal(full[6:9], part)
    assert full.min() >= 0.0 and full.max() < 1.0


def test_controlled_constant_f():
    chain, payoff = two_step_square()
    for path, _ in all_paths(chain.transition.tolist(), chain.center, 2):
        tr = controlled_trajectory(chain, payoff, np.full(5, 2.0), path, y=0.5, z=1.0)
        assert np.all(tr.Y == 0.5)
        np.testing.assert_allclose(tr.Z, np.maximum(np.maximum.accumulate(payoff.g[list(path)] + 0.5), 1.0))


def test_controlled_value_is_flat():
    chain, payoff = two_step_square()
    sol = solve_snell(chain, payoff)
    c = chain.center
    for path, _ in all_paths(chain.transition.tolist(), c, 2):
        tr = controlled_trajectory(chain, payoff, sol.S, path, 0.0, payoff.g[c])
        assert abs(tr.Z[-1] - 2.0) < 1e-12


def test_controlled_identity_and_monotone():
    rng = np.random.default_rng(8)
    from snellkit.dual_bounds import pathwise_dual
    for chain, payoff in random_small_problems(24, seed=21):
        f = rng.normal(size=(chain.horizon + 1, chain.n_states))
        m = martingale_from_function(chain, f)
        paths, _ = enumerate_paths(chain, 0)
        duals = pathwise_dual(chain, payoff, m, paths)
        for path, d in zip(paths, duals):
            tr = controlled_trajectory(chain, payoff, f, path)
            assert np.all(np.diff(tr.Z) >= 0)
            assert tr.Z[0] >= payoff.g[path[0]]
            assert abs(tr.Z[-1] - max(d, payoff.g[path[0]])) < 1e-12


def test_controlled_rejects_inadmissible_start():
    chain, payoff = two_step_square()
    with pytest.raises(ValidationError):
        controlled_trajectory(chain, payoff, np.zeros(5), [2, 3, 4], y=1.0, z=0.5)
    with pytest.raises(ValidationError):
        controlled_trajectory(chain, payoff, np.zeros(5), [2, 3])


def test_thread_env_parsing(monkeypatch):
    from snellkit.dual_bounds import _workers
    monkeypatch.setenv("SNELLKIT_THREADS", "junk")
    assert _workers() == 1
    monkeypatch.setenv("SNELLKIT_THREADS", "3")
    assert _workers() == 3
    monkeypatch.delenv("SNELLKIT_THREADS")
    assert _workers() == 1
    assert os.environ.get("SNELLKIT_THREADS") is None
