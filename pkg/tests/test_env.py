"""Simulator tests: sampling oracles, choice-model identities, RM-rule pins,
capacity conservation, and replay determinism."""

import io
import math

import numpy as np
import pytest
from scipy.stats import binomtest

from markettrace.env import (
    EnvState,
    EpisodeFinishedError,
    build_observation,
    choice_probabilities,
    observations_from_trace,
    read_traces_jsonl,
    rm_mirror_policy,
    rm_rule,
    run_episode,
    sample_arrivals,
    sample_demand,
    sample_market_path,
    step_day,
    trace_from_dict,
    trace_to_dict,
    write_traces_jsonl,
)
from markettrace.params import MarketParams
from markettrace.rng import episode_stream, stream


# --- market-condition path ----------------------------------------------------


def test_market_path_constant_when_no_innovation():
    params = MarketParams(market_persistence=1.0, market_innovation=0.0)
    path = sample_market_path(params, stream(1), m0=0.3)
    assert np.all(path == 0.3)


def test_market_path_decays_to_zero_without_persistence():
    params = MarketParams(market_persistence=0.0, market_innovation=0.0)
    path = sample_market_path(params, stream(2))
    assert np.all(path[1:] == 0.0)
    assert -1.0 <= path[0] <= 1.0


def test_market_path_lag1_autocorrelation_matches_persistence():
    # Yule-Walker lag-1 estimate over unclipped interior pairs, many paths
    params = MarketParams(horizon=8)
    rng = stream(3)
    num = den = 0.0
    for _ in range(100_000):
        path = sample_market_path(params, rng)
        prev, nxt = path[:-1], path[1:]
        keep = (np.abs(prev) < 1.0) & (np.abs(nxt) < 1.0)
        num += float(np.dot(prev[keep], nxt[keep]))
        den += float(np.dot(prev[keep], prev[keep]))
    assert abs(num / den - params.market_persistence) < 0.05


def test_market_path_stays_in_bounds():
    params = MarketParams(market_innovation=0.8)
    path = sample_market_path(params, stream(4))
    assert np.all(path <= 1.0) and np.all(path >= -1.0)


# --- arrivals ------------------------------------------------------------------


def test_arrival_rate_reduces_to_base_when_inelastic():
    params = MarketParams(arrival_elasticity=0.0)
    rng = stream(5)
    draws = [sample_arrivals(0.77, params, rng) for _ in range(5000)]
    assert abs(np.mean(draws) - 7.0) < 0.15


def test_arrival_rate_at_neutral_market_is_base():
    params = MarketParams(arrival_elasticity=123.0)
    rng = stream(6)
    draws = [sample_arrivals(0.0, params, rng) for _ in range(5000)]
    assert abs(np.mean(draws) - 7.0) < 0.15


def test_arrival_mean_matches_closed_form_rate():
    params = MarketParams(base_arrival_rate=7.0, arrival_elasticity=0.3)
    rng = stream(7)
    n = 200_000
    mean = np.mean([sample_arrivals(1.0, params, rng) for _ in range(n)])
    expected = 7.0 * math.exp(0.3)
    assert abs(mean - expected) < 0.01 * expected


# --- nested-logit choice --------------------------------------------------------


def test_equal_prices_give_equal_shares():
    params = MarketParams()
    for p in params.price_grid:
        pi_a, pi_b, pi_out = choice_probabilities(p, p, 0.25, params)
        assert pi_a == pi_b
        assert pi_out >= 0.0


def test_extreme_price_sensitivity_sends_everyone_outside():
    params = MarketParams(price_sensitivity=10.0)
    pi_a, pi_b, pi_out = choice_probabilities(100.0, 100.0, 0.0, params)
    assert pi_a + pi_b < 1e-12
    assert pi_out > 1.0 - 1e-12


def test_choice_probabilities_match_stepwise_oracle():
    # independent evaluation of the two-stage formula chain
    params = MarketParams(
        utility_intercept=4.0,
        price_sensitivity=0.02,
        market_utility_weight=0.5,
        nest_param=0.5,
    )
    p = 140.0
    v = 4.0 - 0.02 * p + 0.5 * 0.0
    inclusive = 0.5 * math.log(2.0 * math.exp(v / 0.5))
    p_hotel = math.exp(inclusive) / (1.0 + math.exp(inclusive))
    within = 0.5
    expected = (p_hotel * within, p_hotel * within, 1.0 - p_hotel)
    got = choice_probabilities(p, p, 0.0, params)
    assert got[0] == pytest.approx(expected[0], abs=1e-10)
    assert got[1] == pytest.approx(expected[1], abs=1e-10)
    assert got[2] == pytest.approx(expected[2], abs=1e-10)


def test_choice_probabilities_normalized_over_grid():
    params = MarketParams()
    for pa in params.price_grid:
        for pb in params.price_grid:
            for m in (-1.0, -0.5, 0.0, 0.5, 1.0):
                probs = choice_probabilities(pa, pb, m, params)
                assert all(x >= 0.0 for x in probs)
                assert abs(sum(probs) - 1.0) <= 1e-12


def test_own_share_strictly_decreases_in_own_price():
    params = MarketParams()
    for m in (-0.5, 0.0, 0.5):
        shares = [
            choice_probabilities(pa, 160.0, m, params)[0] for pa in params.price_grid
        ]
        assert all(b < a for a, b in zip(shares, shares[1:]))


# --- competitor RM rule ----------------------------------------------------------


def test_rm_rule_pinned_points():
    params = MarketParams()
    q, h = params.capacity, params.horizon
    assert rm_rule(0, q, 0.0, params) == 1          # opening price 120
    assert rm_rule(0, q, 1.0, params) == 3          # strong market opens at 160
    assert rm_rule(24, 10, 0.0, params) == 2        # late and tight bumps to 140
    assert params.price(rm_rule(24, 10, 0.0, params)) == 140.0


def test_rm_rule_monotone_in_market_and_inventory():
    params = MarketParams()
    m_grid = np.linspace(-1.0, 1.0, 21)
    q_grid = range(0, params.capacity + 1, 5)
    for t in range(params.horizon):
        for q in q_grid:
            buckets = [rm_rule(t, q, m, params) for m in m_grid]
            assert all(b2 >= b1 for b1, b2 in zip(buckets, buckets[1:]))
        for m in (-1.0, -0.3, 0.0, 0.4, 1.0):
            by_q = [rm_rule(t, q, m, params) for q in q_grid]
            # price never increases as remaining inventory grows
            assert all(b2 <= b1 for b1, b2 in zip(by_q, by_q[1:]))


def test_rm_rule_output_in_bucket_range():
    params = MarketParams()
    for t in (0, 10, 29):
        for q in (0, 1, 50, 100):
            for m in (-1.0, 0.0, 1.0):
                assert 0 <= rm_rule(t, q, m, params) <= 6


# --- observations -----------------------------------------------------------------


def test_fresh_observation_with_padding():
    params = MarketParams()
    state = EnvState.fresh(params, 11, 0)
    state.m_path[0] = 0.0
    obs = build_observation(state)
    np.testing.assert_allclose(obs, [0, 1, 0, 0, 1 / 6, 1 / 6, 1 / 6])


def test_on_pace_observation_has_zero_pace():
    params = MarketParams()
    state = EnvState.fresh(params, 12, 0)
    state.day = 15
    state.q_a = 50
    state.m_path[15] = 0.2
    obs = build_observation(state)
    assert obs[0] == pytest.approx(0.5)
    assert obs[3] == pytest.approx(0.0)


def test_lag_order_is_most_recent_first():
    params = MarketParams()
    state = EnvState.fresh(params, 13, 0)
    state.day = 2
    state.m_path[2] = 0.0
    state.lagged_b = [3, 1, 1]  # day 1 bucket 3, day 0 bucket 1, one padded slot
    obs = build_observation(state)
    np.testing.assert_allclose(obs[4:], [3 / 6, 1 / 6, 1 / 6])
    assert np.all((obs[4:] >= 0) & (obs[4:] <= 1))


# --- stepping ----------------------------------------------------------------------


def test_sold_out_hotel_sells_nothing():
    params = MarketParams()
    state = EnvState.fresh(params, 14, 0)
    state.q_a = 0
    out = step_day(state, 0)
    assert out.sales_a == 0
    assert out.p_a * out.sales_a == 0.0
    assert state.q_a == 0


def test_sales_capped_by_remaining_inventory():
    # demand-rich setup so Hotel A's 3 remaining rooms surely clear
    params = MarketParams(utility_intercept=9.0, base_arrival_rate=40.0)
    state = EnvState.fresh(params, 15, 0)
    state.q_a = 3
    out = step_day(state, 0)
    assert out.demand_a > 3
    assert out.sales_a == 3 == min(out.q_a, out.demand_a)
    assert state.q_a == 0


def test_step_after_horizon_is_an_error():
    params = MarketParams(horizon=1)
    state = EnvState.fresh(params, 16, 0)
    step_day(state, 0)
    with pytest.raises(EpisodeFinishedError):
        step_day(state, 0)


def test_invalid_bucket_rejected():
    params = MarketParams()
    state = EnvState.fresh(params, 17, 0)
    with pytest.raises(ValueError):
        step_day(state, 7)


def test_demand_conservation_and_caps_on_rollouts():
    params = MarketParams()
    for episode in range(30):
        trace = run_episode(lambda obs, rng: int(rng.integers(0, 7)), params, 18, episode)
        sold_a = sold_b = 0
        for row in trace.rows:
            assert row.demand_a + row.demand_b + row.demand_out == row.arrivals
            assert row.sales_a == min(row.q_a, row.demand_a)
            assert row.sales_b == min(row.q_b, row.demand_b)
            sold_a += row.sales_a
            sold_b += row.sales_b
        assert sold_a <= params.capacity
        assert sold_b <= params.capacity
        assert trace.final_q_a == params.capacity - sold_a
        assert trace.final_q_b == params.capacity - sold_b


def test_forced_equal_prices_make_sales_exchangeable():
    # both hotels pinned to bucket 0: per-day sign test on sales differences
    params = MarketParams()

    def forced_bucket_zero(obs, rng):
        return 0

    wins = np.zeros(params.horizon, dtype=int)
    decided = np.zeros(params.horizon, dtype=int)
    n_eps = 10_000
    for episode in range(n_eps):
        state = EnvState.fresh(params, 19, episode)
        for t in range(params.horizon):
            # neutralize B's rule by overriding A to B's bucket is not possible;
            # instead compare under identical posted prices: force B's bucket too
            out = step_day(state, rm_rule(t, state.q_b, float(state.m_path[t]), params))
            if out.sales_a != out.sales_b:
                decided[t] += 1
                wins[t] += out.sales_a > out.sales_b
    alpha = 0.01 / params.horizon
    for t in range(params.horizon):
        if decided[t] > 0:
            p = binomtest(int(wins[t]), int(decided[t]), 0.5).pvalue
            assert p > alpha, f"day {t}: asymmetric sales (p={p:.2e})"


# --- full episodes ------------------------------------------------------------------


def test_single_day_horizon_gives_single_row():
    params = MarketParams(horizon=1)
    trace = run_episode(lambda obs, rng: 3, params, 20, 0)
    assert len(trace.rows) == 1


def test_replay_is_bit_identical():
    params = MarketParams()

    def noisy_policy(obs, rng):
        return int(rng.integers(0, 7))

    first = run_episode(noisy_policy, params, (21, 5), 9)
    second = run_episode(noisy_policy, params, (21, 5), 9)
    assert first == second
    assert trace_to_dict(first) == trace_to_dict(second)


def test_mirrored_rm_play_is_symmetric_on_average():
    params = MarketParams()
    policy = rm_mirror_policy(params)
    occ_a, occ_b = [], []
    n_eps = 10_000
    for episode in range(n_eps):
        trace = run_episode(policy, params, 22, episode)
        occ_a.append(sum(r.sales_a for r in trace.rows) / params.capacity)
        occ_b.append(sum(r.sales_b for r in trace.rows) / params.capacity)
    width_a = 1.96 * np.std(occ_a, ddof=1) / math.sqrt(n_eps)
    width_b = 1.96 * np.std(occ_b, ddof=1) / math.sqrt(n_eps)
    assert abs(np.mean(occ_a) - np.mean(occ_b)) < 2 * max(width_a, width_b)


def test_trace_reconstruction_matches_live_observations():
    params = MarketParams()
    state = EnvState.fresh(params, 23, 4)
    live = []
    while not state.finished:
        live.append(build_observation(state))
        step_day(state, int(state.rng_stream.integers(0, 7)))
    trace = run_episode(lambda obs, rng: int(rng.integers(0, 7)), params, 23, 4)
    rebuilt = observations_from_trace(trace, params)
    np.testing.assert_array_equal(np.asarray(live), rebuilt)


def test_jsonl_round_trip_is_stable():
    params = MarketParams()
    traces = [run_episode(rm_mirror_policy(params), params, 24, e) for e in range(3)]
    buf = io.StringIO()
    write_traces_jsonl(traces, buf)
    buf.seek(0)
    loaded = list(read_traces_jsonl(buf))
    assert loaded == traces
    buf2 = io.StringIO()
    write_traces_jsonl(loaded, buf2)
    assert buf.getvalue() == buf2.getvalue()
    doc = trace_to_dict(traces[0])
    for key in ("seed", "episode", "a_A", "a_B", "p_A", "p_B", "M",
                "D_A", "D_B", "y_A", "y_B", "m", "q_A", "q_B"):
        assert key in doc
    assert trace_from_dict(doc) == traces[0]


# --- demand sampler -----------------------------------------------------------------


def test_no_arrivals_no_demand():
    assert sample_demand(0, (0.3, 0.3, 0.4), stream(25)) == (0, 0, 0)


def test_certain_choice_routes_all_guests():
    assert sample_demand(5, (1.0, 0.0, 0.0), stream(26)) == (5, 0, 0)


def test_demand_split_matches_multinomial_means():
    rng = stream(27)
    totals = np.zeros(3)
    n = 200_000
    for _ in range(n):
        totals += sample_demand(7, (0.4, 0.4, 0.2), rng)
    np.testing.assert_allclose(totals / n, [2.8, 2.8, 1.4], rtol=0.01)
