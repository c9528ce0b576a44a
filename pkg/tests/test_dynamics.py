import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ranklab.aggregate import make_partition_plan
from ranklab.dynamics import (
    EnergyTrace,
    MeanFieldParams,
    SpectrumState,
    closed_form_energy,
    closed_form_trace,
    energy_ratio,
    first_round_below,
    iterate_idealized,
    mean_field_bound,
    one_step_multipliers,
    simulate_idealized,
    step_fedavg_idealized,
    step_raflora_idealized,
    theorem_bound,
)
from ranklab.errors import LabError
from ranklab.population import (
    ClientPopulation,
    RankConfig,
    assign_ranks,
    coverage,
    forecast,
    h_factor,
    sample_rounds,
)

TOP_SURVIVAL = 1 - math.comb(80, 10) / math.comb(100, 10)


def test_energy_ratio_examples():
    assert energy_ratio([9, 4, 1], 2) == pytest.approx(13 / 14, abs=1e-15)
    assert energy_ratio([1, 0, 0], 1) == 1.0
    with pytest.raises(LabError) as exc:
        energy_ratio([0, 0], 1)
    assert exc.value.kind == "degenerate"
    with pytest.raises(LabError) as exc:
        energy_ratio([1, 2], 3)
    assert exc.value.kind == "rank"


def test_energy_trace_rho():
    tr = EnergyTrace.from_energies([[9, 4, 1], [1, 0, 0]], ranks=(1, 2))
    assert tr.rho[2][0] == pytest.approx(13 / 14)
    assert tr.higher_rank_share.tolist() == pytest.approx([5 / 14, 0.0])


def test_spectrum_state_validation():
    with pytest.raises(LabError):
        SpectrumState(np.array([1.0, -1.0]))
    assert SpectrumState(np.array([3.0, 4.0])).energies.tolist() == [9.0, 16.0]


def test_fedavg_step_example():
    pop = ClientPopulation(np.array([1, 3, 3, 2]), np.ones(4), (1, 2, 3))
    out = step_fedavg_idealized(SpectrumState(np.ones(3)), [0, 1], pop, beta=0.5)
    # N = [2, 1, 1] out of M = 2
    assert out.sigma.tolist() == [0.5, 0.25, 0.25]
    assert out.round == 1


def test_raflora_step_example():
    pop = ClientPopulation(np.array([1, 3, 3, 2]), np.ones(4), (1, 2, 3))
    plan = make_partition_plan((1, 2, 3))
    s0 = SpectrumState(np.array([1.0, 2.0, 3.0]))
    # client 0 (rank 1) and client 3 (rank 2): partition 3 has no contributor
    out = step_raflora_idealized(s0, [0, 3], pop, plan, beta=0.5)
    assert out.sigma.tolist() == [0.5, 1.0, 0.0]
    kept = step_raflora_idealized(s0, [0, 3], pop, plan, beta=0.5, carry_over=True)
    assert kept.sigma.tolist() == [0.5, 1.0, 3.0]


def test_raflora_top_partition_survival(reference_pop, reference_plan):
    mult = one_step_multipliers("raflora", reference_pop, 10, 1.0, np.random.default_rng(1), 100000, reference_plan)
    assert TOP_SURVIVAL == pytest.approx(0.9048837, abs=1e-7)
    assert mult[:, -1].mean() == pytest.approx(TOP_SURVIVAL, rel=0.01)
    assert np.all(mult[:, :8] == 1.0)


def test_one_step_second_moment_matches_q(reference_pop):
    fc = forecast(reference_pop, 10, 0.9, 1.0)
    mult = one_step_multipliers("fedavg", reference_pop, 10, 0.9, np.random.default_rng(2), 100000)
    second = (mult**2).mean(axis=0)
    assert np.allclose(second, fc.q, rtol=0.01)


def test_closed_form_examples(reference_pop):
    fc = forecast(reference_pop, 10, 1.0, 1.0)
    e = closed_form_energy(np.ones(64), fc, 10)
    assert e[8] == pytest.approx(0.6545454545454547**10, rel=1e-12)
    assert e[0] == 1.0
    with pytest.raises(LabError):
        closed_form_energy(np.ones(64), fc, -1)


def test_theorem_bound_examples(reference_pop):
    fc = forecast(reference_pop, 10, 1.0, 1.0)
    assert theorem_bound(fc, 0) == 7.0
    assert theorem_bound(fc, 21) == pytest.approx(7 * 0.6545454545454547**21, rel=1e-12)
    assert theorem_bound(fc, 21) < 1e-3 <= theorem_bound(fc, 20)
    assert first_round_below(fc, 1e-3) == 21


def test_bound_holds_for_every_round(reference_pop):
    fc = forecast(reference_pop, 10, 1.0, 1.0)
    tr = closed_form_trace(np.ones(64), fc, 200, ranks=(8,))
    share = tr.higher_rank_share
    bound = np.array([theorem_bound(fc, t) for t in range(201)])
    assert np.all(share <= bound * (1 + 1e-12))
    assert tr.rho[8][200] > 1 - 1e-12


@given(
    st.lists(st.floats(0.01, 10), min_size=64, max_size=64),
    st.integers(2, 99),
    st.floats(0.5, 1.5),
)
def test_bound_holds_for_any_initial_spectrum(e0, m, beta):
    pop = assign_ranks(RankConfig.uniform((8, 16, 32, 48, 64)), 100, seed=0)
    fc = forecast(pop, m, beta, np.array(e0))
    tr = closed_form_trace(np.array(e0), fc, 60, ranks=(8,))
    for t, s in enumerate(tr.higher_rank_share):
        assert s <= theorem_bound(fc, t) * (1 + 1e-9) + 1e-300


def test_theorem_bound_needs_heterogeneity():
    pop = ClientPopulation(np.array([4, 8]), np.ones(2), (4, 8))
    fc = forecast(pop, 1, 1.0, 1.0)
    assert theorem_bound(fc, 3) == pytest.approx(fc.c0 * fc.gamma**3)
    homo = ClientPopulation(np.array([4, 4]), np.ones(2), (4,))
    with pytest.raises(LabError) as exc:
        forecast(homo, 1, 1.0, 1.0)
    assert exc.value.kind == "no heterogeneity"


def test_bound_is_tight_when_tail_vanishes():
    # no client holds a direction past r1 with positive probability -> gamma 0 limit
    pop = ClientPopulation(np.array([2, 2, 2, 4]), np.ones(4), (2, 4))
    fc = forecast(pop, 1, 1.0, 1.0)
    assert fc.gamma == pytest.approx(0.25)
    assert theorem_bound(fc, 40) < 1e-20


def test_mean_field_examples():
    params = MeanFieldParams(qprime=np.array([0.5]), delta_sq=np.array([0.1]))
    mf = mean_field_bound(1.0, params, 60)
    assert mf.floor[0] == pytest.approx(0.2)
    assert abs(mf.bounds[60, 0] - 0.2) <= 1e-9
    assert mf.bounds[1, 0] == pytest.approx(0.6)
    grows = mean_field_bound(1.0, MeanFieldParams(np.array([1.0]), np.array([0.1])), 10)
    assert np.isnan(grows.floor[0])
    assert grows.bounds[:, 0] == pytest.approx(1.0 + 0.1 * np.arange(11))


def test_mean_field_without_drift_is_closed_form(reference_pop):
    fc = forecast(reference_pop, 10, 0.95, 1.0)
    params = MeanFieldParams(qprime=fc.q, delta_sq=0.0)
    mf = mean_field_bound(np.ones(64), params, 50)
    for t in (0, 1, 17, 50):
        assert np.allclose(mf.bounds[t], closed_form_energy(np.ones(64), fc, t), rtol=1e-12, atol=0)


def test_mean_field_from_coverage(reference_pop):
    params = MeanFieldParams.from_coverage(coverage(reference_pop), 100, 10, delta_sq=0.01)
    assert params.qprime[0] == pytest.approx(2.0)
    assert params.qprime[-1] == pytest.approx(2 * h_factor(0.2, 100, 10))
    with pytest.raises(LabError):
        MeanFieldParams.from_coverage(coverage(reference_pop), 100, 10, lam=0.0)


def test_monte_carlo_energy_tracks_closed_form(reference_pop):
    fc = forecast(reference_pop, 10, 1.0, 1.0)
    sims = simulate_idealized("fedavg", reference_pop, 10, 1.0, np.ones(64), 3, 100000, np.random.default_rng(4))
    e = (sims**2).mean(axis=0)
    for t in range(4):
        assert np.allclose(e[t], closed_form_energy(np.ones(64), fc, t), rtol=0.03)
    assert np.allclose(e[1], fc.q, rtol=0.01)


def test_raflora_dominates_fedavg_in_expectation(reference_pop, reference_plan):
    rng = np.random.default_rng(6)
    fed = simulate_idealized("fedavg", reference_pop, 10, 1.0, np.ones(64), 20, 4000, rng)
    ra = simulate_idealized("raflora", reference_pop, 10, 1.0, np.ones(64), 20, 4000, rng, plan=reference_plan)
    fed_share = 1 - (fed[..., :8] ** 2).sum(-1).mean(0) / (fed**2).sum(-1).mean(0)
    ra_share = 1 - (ra[..., :8] ** 2).sum(-1).mean(0) / (ra**2).sum(-1).mean(0)
    assert np.all(ra_share[1:] > fed_share[1:])
    # expected tail energy of the top partition decays like survival**t
    assert (ra[:, 5, -1] ** 2).mean() == pytest.approx(TOP_SURVIVAL**5, rel=0.05)


def test_full_participation_identities(reference_pop, reference_plan):
    rng = np.random.default_rng(0)
    p = coverage(reference_pop).p
    fed = simulate_idealized("fedavg", reference_pop, 100, 1.0, np.ones(64), 10, 3, rng)
    ra = simulate_idealized("raflora", reference_pop, 100, 1.0, np.ones(64), 10, 3, rng, plan=reference_plan)
    for t in range(11):
        assert np.allclose(fed[:, t], p**t, rtol=1e-14, atol=0)
    assert np.all(ra == 1.0)


def test_tail_share_monotone_in_closed_form(reference_pop):
    fc = forecast(reference_pop, 10, 1.0, 1.0)
    share = closed_form_trace(np.ones(64), fc, 100, ranks=(8,)).higher_rank_share
    assert np.all(np.diff(share) <= 0)
    assert np.all(np.diff(share[:60]) < 0)


@pytest.mark.parametrize("strategy", ["fedavg", "raflora"])
def test_vectorized_matches_step_functions_bitwise(reference_pop, reference_plan, strategy):
    sigma0 = np.linspace(2.0, 0.5, 64)
    rounds, trials = 12, 6
    sims = simulate_idealized(strategy, reference_pop, 10, 0.97, sigma0, rounds, trials, np.random.default_rng(9),
                              plan=reference_plan)
    # replay the same subset draws through the single-step functions
    rng = np.random.default_rng(9)
    draws = [sample_rounds(reference_pop, 10, rng, trials) for _ in range(rounds)]
    for j in range(trials):
        state = SpectrumState(sigma0)
        for t in range(rounds):
            if strategy == "fedavg":
                state = step_fedavg_idealized(state, draws[t][j], reference_pop, 0.97)
            else:
                state = step_raflora_idealized(state, draws[t][j], reference_pop, reference_plan, 0.97)
            assert np.array_equal(state.sigma, sims[j, t + 1])


def test_carry_over_never_loses_energy(reference_pop, reference_plan):
    sims = simulate_idealized("raflora", reference_pop, 10, 1.0, np.ones(64), 30, 200, np.random.default_rng(3),
                              plan=reference_plan, carry_over=True)
    assert np.all(sims == 1.0)


def test_iterate_errors(reference_pop, rng):
    with pytest.raises(LabError):
        next(iterate_idealized("fedavg", reference_pop, 10, 1.0, np.ones(5), 1, 1, rng))
    with pytest.raises(LabError):
        next(iterate_idealized("raflora", reference_pop, 10, 1.0, np.ones(64), 1, 1, rng))
    with pytest.raises(LabError):
        next(iterate_idealized("median", reference_pop, 10, 1.0, np.ones(64), 1, 1, rng))
