import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fixtures import concave_walk, constant_walk, named_fixtures, random_problems, random_small_problems
from oracles import all_paths
from snellkit import (
    AbsoluteContinuityViolated,
    ChainModel,
    PayoffSpec,
    ValidationError,
    build_random_walk,
    decompose,
    increment_bound_check,
    mu_density,
    partition_approximation,
    payoff_from_function,
    power_payoff,
    solve_snell,
    stopping_rule,
)


def test_one_step_concave_hand_values():
    chain = build_random_walk(3, horizon=1)
    payoff = payoff_from_function(chain, power_payoff(2, -1.0, 4.0))
    dec = decompose(chain, payoff)
    c = chain.center
    assert dec.solution.S[0, c] == 4.0 and dec.solution.cont[0, c] == 3.0
    assert dec.dA[0, c] == 1.0
    assert dec.dDminus[0, c] == 1.0
    assert dec.mu[0, c] == 1.0


def test_convex_payoff_is_martingale_inside():
    chain = build_random_walk(7, horizon=3)
    payoff = payoff_from_function(chain, power_payoff(2))
    dec = decompose(chain, payoff)
    inner = slice(1, -1)
    assert np.all(dec.dDminus[:, inner] == 0.0)
    assert np.all(dec.dA[:, inner] == 0.0)


def test_constant_payoff_decomposition():
    dec = decompose(*constant_walk(1.5))
    assert np.all(dec.dA == 0) and np.all(dec.dM == 0) and np.all(dec.dD == 0)
    assert np.all(np.isnan(dec.mu))


def test_decompose_rejects_foreign_solution():
    chain, payoff = concave_walk()
    other = solve_snell(chain, PayoffSpec(np.zeros(chain.n_states)))
    with pytest.raises(ValidationError):
        decompose(chain, payoff, other)


def _check_invariants(chain, payoff):
    sol = solve_snell(chain, payoff)
    dec = decompose(chain, payoff, sol)
    assert np.all(dec.dA >= 0)
    row_mean = np.einsum("ij,kij->ki", chain.transition, dec.dM)
    assert np.abs(row_mean).max() < 1e-12
    assert np.array_equal(dec.dD, dec.dDplus - dec.dDminus)
    assert np.all(dec.dDplus * dec.dDminus == 0)
    assert np.all(dec.dA[~sol.stop_region[:-1]] == 0)
    return sol, dec


def test_invariants_on_fixtures_and_random():
    for chain, payoff in list(named_fixtures().values()) + random_problems(40, seed=17):
        _check_invariants(chain, payoff)


def test_pathwise_identity_enumerated():
    for chain, payoff in random_small_problems(24, seed=8):
        sol, dec = _check_invariants(chain, payoff)
        for x0 in range(chain.n_states):
            for path, _ in all_paths(chain.transition.tolist(), x0, chain.horizon):
                pr = dec.path_processes(path)
                assert np.abs(pr["S"] - (pr["S"][0] + pr["M"] - pr["A"])).max() < 1e-12


def test_relabelling_covariance():
    for chain, payoff in random_problems(10, n_states=5, horizon=3, seed=23):
        # mirror x -> -x, which reverses the state order
        rev = np.arange(chain.n_states)[::-1]
        mirrored = ChainModel(-chain.states[rev], chain.transition[np.ix_(rev, rev)], chain.dt, chain.alpha, chain.horizon)
        mp = PayoffSpec(payoff.g[rev])
        d1 = decompose(chain, payoff)
        d2 = decompose(mirrored, mp)
        np.testing.assert_allclose(d2.dA, d1.dA[:, rev], atol=1e-13)
        np.testing.assert_allclose(d2.dM, d1.dM[:, rev][:, :, rev], atol=1e-13)


def test_concave_mu_is_one_on_stopping_nodes():
    chain, payoff = concave_walk(7, 5)
    dec = decompose(chain, payoff)
    mu = mu_density(dec)
    defined = ~np.isnan(mu)
    assert defined.any()
    assert np.all(mu[defined] == 1.0)
    assert np.array_equal(dec.dA[defined], dec.dDminus[defined])


def test_mu_range_random():
    for chain, payoff in random_problems(100, n_states=6, horizon=4, seed=31):
        mu = mu_density(decompose(chain, payoff))
        d = mu[~np.isnan(mu)]
        assert np.all(d >= -1e-10) and np.all(d <= 1 + 1e-10)


@given(st.integers(0, 2 ** 32 - 1))
def test_bound_check_random(seed):
    (chain, payoff), = random_problems(1, n_states=5, horizon=5, seed=seed)
    rep = increment_bound_check(decompose(chain, payoff))
    assert rep.ok and rep.max_violation < 1e-10


def test_bound_check_reports_forged_violation():
    dec = decompose(*concave_walk())
    forged = np.array(dec.dA)
    forged[1, 2] += 0.5
    fake = type(dec)(dec.solution, forged, dec.dM, dec.dD, dec.dDplus, dec.dDminus, dec.mu)
    rep = increment_bound_check(fake)
    assert not rep.ok and rep.worst_node == (1, 2)
    assert abs(rep.upper_violation - 0.5) < 1e-12


def test_absolute_continuity_violation_raised_on_forged_input():
    dec = decompose(*constant_walk())
    forged = np.array(dec.dA)
    forged[0, 2] = 1e-3
    fake = type(dec)(dec.solution, forged, dec.dM, dec.dD, dec.dDplus, dec.dDminus, dec.mu)
    with pytest.raises(AbsoluteContinuityViolated) as info:
        mu_density(fake)
    assert info.value.nodes == [(0, 2)]


def test_epsilon_rule_keeps_A_flat():
    """Along every path A does not grow strictly before the epsilon rule stops."""
    for chain, payoff in random_small_problems(24, seed=41):
        sol = solve_snell(chain, payoff)
        dec = decompose(chain, payoff, sol)
        gaps = (sol.S - sol.G)[sol.S - sol.G > 1e-9]
        if gaps.size == 0:
            continue
        eps = 0.5 * gaps.min()
        region = stopping_rule(sol, "epsilon", eps).region
        for x0 in range(chain.n_states):
            for path, _ in all_paths(chain.transition.tolist(), x0, chain.horizon):
                k = 0
                while not region[k, path[k]]:
                    assert dec.dA[k, path[k]] <= 1e-12
                    k += 1


def test_partition_finest_level_is_exact():
    chain, payoff = concave_walk(9, 8)
    rep = partition_approximation(chain, payoff, [3, 8], levels=[1, 2, 3])
    assert rep.errors[8][-1] < 1e-12 and rep.errors[3][-1] < 1e-12
    assert abs(rep.An_at[8][-1] - rep.A_mean[8]) < 1e-12


def test_partition_constant_payoff():
    chain = build_random_walk(5, horizon=8)
    rep = partition_approximation(chain, PayoffSpec(np.full(5, 2.0)), [4, 8], levels=3)
    for t in (4, 8):
        assert rep.An_at[t] == [0.0, 0.0, 0.0] and rep.errors[t] == [0.0, 0.0, 0.0]


def test_partition_structures_nested():
    chain, payoff = concave_walk(9, 16)
    rep = partition_approximation(chain, payoff, [16], levels=4)
    for coarse, fine in zip(rep.partitions, rep.partitions[1:]):
        assert set(coarse.tolist()) <= set(fine.tolist())


def test_partition_errors():
    chain, payoff = concave_walk(9, 12)
    with pytest.raises(ValidationError, match="nest"):
        partition_approximation(chain, payoff, [4], levels=[3])
    chain, payoff = concave_walk(9, 16)
    with pytest.raises(ValidationError):
        partition_approximation(chain, payoff, [4], levels=[2, 1])
    with pytest.raises(ValidationError):
        partition_approximation(chain, payoff, [17], levels=2)


def test_partition_moments_by_enumeration():
    """The exact RMS errors agree with an explicit path sum on a small chain."""
    chain = build_random_walk(5, horizon=4)
    payoff = payoff_from_function(chain, lambda x: np.abs(np.sin(1.3 * x)) + 0.2 * x)
    rep = partition_approximation(chain, payoff, [2, 4], levels=[1, 2])
    sol = solve_snell(chain, payoff)
    beta = chain.discount
    P = chain.transition
    for t in (2, 4):
        for L, n in enumerate([1, 2]):
            m = 4 // 2 ** n
            sq = 0.0
            for path, p in all_paths(P.tolist(), chain.center, 4):
                exact = sum(sol.S[j, path[j]] - sol.cont[j, path[j]] for j in range(t))
                approx = 0.0
                for t0 in range(0, 4, m):
                    if t0 + m <= t:
                        v = np.linalg.matrix_power(P, m) @ sol.S[t0 + m]
                        approx += sol.S[t0, path[t0]] - v[path[t0]] * beta ** m
                sq += p * (approx - exact) ** 2
            assert abs(np.sqrt(sq) - rep.errors[t][L]) < 1e-12
