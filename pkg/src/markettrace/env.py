"""Two-hotel pricing simulator.

Hotel A is the learning side; Hotel B runs a fixed revenue-management rule on
its own (hidden) state. Each day both hotels post a price bucket, a Poisson
number of guests arrives, each guest books A, books B, or walks away under a
nested-logit choice model, and sales are capped by remaining inventory.

All randomness flows through an explicit per-episode generator with a fixed
consumption order (Knuth Poisson, sequential categorical draws), so a trace is
bit-identical under replay of the same (params, seed, episode id, policy).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, TextIO

import numpy as np
from scipy.special import ndtri

from .params import MarketParams
from .rng import SeedLike, episode_stream

# bucket used to pad Hotel B's price lags before any price has been observed
LAG_PAD_BUCKET = 1

Policy = Callable[[np.ndarray, np.random.Generator], int]


class EpisodeFinishedError(ValueError):
    """Raised when stepping an episode whose horizon is already exhausted."""


@dataclass(frozen=True)
class StepOutcome:
    """Record of one simulated day. Inventories are start-of-day values."""

    day: int
    a_a: int
    a_b: int
    p_a: float
    p_b: float
    arrivals: int
    demand_a: int
    demand_b: int
    demand_out: int
    sales_a: int
    sales_b: int
    market: float
    q_a: int
    q_b: int


@dataclass(frozen=True)
class EpisodeTrace:
    """Immutable per-episode record; the unit of persistence and diagnostics."""

    seed: int | tuple[int, ...]
    episode_id: int
    params_fingerprint: str
    rows: tuple[StepOutcome, ...]
    final_q_a: int
    final_q_b: int


@dataclass
class EnvState:
    """Mutable state of one running episode, owned by a single runner."""

    params: MarketParams
    day: int
    q_a: int
    q_b: int
    m_path: np.ndarray
    lagged_b: list[int]          # competitor buckets, most recent first
    last_sales_a: int
    rng_stream: np.random.Generator
    rows: list[StepOutcome] = field(default_factory=list)

    @classmethod
    def fresh(cls, params: MarketParams, seed: SeedLike, episode_id: int) -> "EnvState":
        rng = episode_stream(seed, episode_id)
        m_path = sample_market_path(params, rng)
        return cls(
            params=params,
            day=0,
            q_a=params.capacity,
            q_b=params.capacity,
            m_path=m_path,
            lagged_b=[LAG_PAD_BUCKET] * 3,
            last_sales_a=0,
            rng_stream=rng,
        )

    @property
    def finished(self) -> bool:
        return self.day >= self.params.horizon


def _standard_normal(rng: np.random.Generator) -> float:
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    return float(ndtri(u))


def sample_market_path(
    params: MarketParams, rng: np.random.Generator, m0: float | None = None
) -> np.ndarray:
    """Market-condition path: AR(1) with persistence/innovation from params,
    clipped to [-1, 1]; the initial value is Uniform(-1, 1) unless given."""
    h = params.horizon
    path = np.empty(h, dtype=float)
    m = 2.0 * rng.random() - 1.0 if m0 is None else float(m0)
    path[0] = m
    for t in range(1, h):
        eps = _standard_normal(rng)
        m = params.market_persistence * m + params.market_innovation * eps
        m = min(1.0, max(-1.0, m))
        path[t] = m
    return path


def arrival_rate(m: float, params: MarketParams) -> float:
    return params.base_arrival_rate * math.exp(params.arrival_elasticity * m)


def sample_arrivals(m: float, params: MarketParams, rng: np.random.Generator) -> int:
    """Poisson guest count at the market-dependent rate, drawn by Knuth's
    product-of-uniforms method so the stream consumption is replayable."""
    rate = arrival_rate(m, params)
    threshold = math.exp(-rate)
    k = 0
    p = 1.0
    while True:
        p *= rng.random()
        if p <= threshold:
            return k
        k += 1


def choice_probabilities(
    p_a: float, p_b: float, m: float, params: MarketParams
) -> tuple[float, float, float]:
    """Nested-logit booking probabilities (book A, book B, walk away).

    Guests first choose hotel-vs-outside through the nest's inclusive value,
    then choose between the two hotels inside the nest. Computed in log space
    so extreme utilities stay finite.
    """
    mu = params.nest_param
    v_a = params.utility_intercept - params.price_sensitivity * p_a + params.market_utility_weight * m
    v_b = params.utility_intercept - params.price_sensitivity * p_b + params.market_utility_weight * m
    u_a = v_a / mu
    u_b = v_b / mu
    top = max(u_a, u_b)
    lse = top + math.log(math.exp(u_a - top) + math.exp(u_b - top))
    inclusive = mu * lse
    if inclusive >= 0:
        p_hotel = 1.0 / (1.0 + math.exp(-inclusive))
    else:
        e = math.exp(inclusive)
        p_hotel = e / (1.0 + e)
    pi_a = p_hotel * math.exp(u_a - lse)
    pi_b = p_hotel * math.exp(u_b - lse)
    pi_out = max(0.0, 1.0 - pi_a - pi_b)
    return pi_a, pi_b, pi_out


def sample_demand(
    arrivals: int, probs: tuple[float, float, float], rng: np.random.Generator
) -> tuple[int, int, int]:
    """Multinomial demand split, realized as one categorical draw per guest in
    arrival order (fixed RNG consumption, exact conservation)."""
    d_a = d_b = 0
    if arrivals > 0:
        cut_a = probs[0]
        cut_b = probs[0] + probs[1]
        for u in rng.random(arrivals):
            if u < cut_a:
                d_a += 1
            elif u < cut_b:
                d_b += 1
    return d_a, d_b, arrivals - d_a - d_b


def rm_rule(t: int, q_b: int, m: float, params: MarketParams) -> int:
    """Hotel B's fixed pricing rule.

    Starts one notch above the floor, moves up with market strength and with
    sales ahead of the uniform booking pace, adds a late-and-tight bump, and
    marks down one notch when clearly behind pace. Non-decreasing in the
    market condition and non-increasing in remaining inventory at fixed day.
    """
    frac_elapsed = t / params.horizon
    frac_sold = 1.0 - q_b / params.capacity
    gap = frac_sold - frac_elapsed
    bucket = params.rm_base_bucket
    if m > 0.0:
        bucket += int(math.floor(params.rm_market_gain * m + params.rm_market_lift))
    bucket += int(math.floor(params.rm_pace_gain * max(0.0, gap)))
    if frac_elapsed > params.rm_late_frac and q_b / params.capacity < params.rm_tight_frac:
        bucket += 1
    if gap < -params.rm_markdown_gap:
        bucket -= 1
    return min(params.n_buckets - 1, max(0, bucket))


def observation_features(
    t: int,
    q_a: int,
    m: float,
    sold_a: int,
    lagged_b: Iterable[int],
    params: MarketParams,
) -> np.ndarray:
    """The 7 deployable features Hotel A may condition on: elapsed fraction,
    own remaining-inventory fraction, market condition, booking pace (own
    sold fraction minus elapsed fraction), and the last three observed
    competitor buckets, normalized and most recent first."""
    pace = sold_a / params.capacity - t / params.horizon
    lags = list(lagged_b)[:3]
    denom = params.n_buckets - 1
    return np.array(
        [
            t / params.horizon,
            q_a / params.capacity,
            m,
            pace,
            lags[0] / denom,
            lags[1] / denom,
            lags[2] / denom,
        ],
        dtype=float,
    )


def build_observation(state: EnvState, params: MarketParams | None = None) -> np.ndarray:
    params = params or state.params
    return observation_features(
        state.day,
        state.q_a,
        float(state.m_path[state.day]),
        params.capacity - state.q_a,
        state.lagged_b,
        params,
    )


def step_day(
    state: EnvState,
    a_a: int,
    params: MarketParams | None = None,
    rng: np.random.Generator | None = None,
) -> StepOutcome:
    """Advance one day: B prices by its rule, demand realizes, sales are
    capacity-capped, inventories and lags update."""
    params = params or state.params
    rng = rng or state.rng_stream
    if state.finished:
        raise EpisodeFinishedError(
            f"episode already finished at day {state.day} (horizon {params.horizon})"
        )
    if not 0 <= a_a < params.n_buckets:
        raise ValueError(f"Hotel A bucket {a_a} outside [0, {params.n_buckets - 1}]")
    t = state.day
    m = float(state.m_path[t])
    a_b = rm_rule(t, state.q_b, m, params)
    p_a = params.price(a_a)
    p_b = params.price(a_b)
    probs = choice_probabilities(p_a, p_b, m, params)
    arrivals = sample_arrivals(m, params, rng)
    d_a, d_b, d_out = sample_demand(arrivals, probs, rng)
    y_a = min(state.q_a, d_a)
    y_b = min(state.q_b, d_b)
    outcome = StepOutcome(
        day=t,
        a_a=int(a_a),
        a_b=a_b,
        p_a=p_a,
        p_b=p_b,
        arrivals=arrivals,
        demand_a=d_a,
        demand_b=d_b,
        demand_out=d_out,
        sales_a=y_a,
        sales_b=y_b,
        market=m,
        q_a=state.q_a,
        q_b=state.q_b,
    )
    state.q_a -= y_a
    state.q_b -= y_b
    state.lagged_b = [a_b] + state.lagged_b[:2]
    state.last_sales_a = y_a
    state.day = t + 1
    state.rows.append(outcome)
    return outcome


def run_episode(
    policy: Policy, params: MarketParams, seed: SeedLike, episode_id: int
) -> EpisodeTrace:
    """Roll one full episode; the policy draws any randomness it needs from
    the episode stream, keeping the whole trace replayable."""
    state = EnvState.fresh(params, seed, episode_id)
    while not state.finished:
        obs = build_observation(state)
        action = int(policy(obs, state.rng_stream))
        step_day(state, action)
    return EpisodeTrace(
        seed=seed,
        episode_id=int(episode_id),
        params_fingerprint=params.fingerprint(),
        rows=tuple(state.rows),
        final_q_a=state.q_a,
        final_q_b=state.q_b,
    )


def rm_mirror_policy(params: MarketParams) -> Policy:
    """Hotel A playing B's RM rule on its own state (used for calibration)."""

    def policy(obs: np.ndarray, rng: np.random.Generator) -> int:
        t = int(round(obs[0] * params.horizon))
        q_a = int(round(obs[1] * params.capacity))
        return rm_rule(t, q_a, float(obs[2]), params)

    return policy


def observations_from_trace(trace: EpisodeTrace, params: MarketParams) -> np.ndarray:
    """Rebuild the per-day observation matrix (H x 7) from a stored trace,
    identical to what the live runner saw."""
    sold = 0
    lags = [LAG_PAD_BUCKET] * 3
    out = np.empty((len(trace.rows), 7), dtype=float)
    for i, row in enumerate(trace.rows):
        out[i] = observation_features(row.day, row.q_a, row.market, sold, lags, params)
        sold += row.sales_a
        lags = [row.a_b] + lags[:2]
    return out


# --- JSONL persistence ------------------------------------------------------

_ARRAY_KEYS = (
    ("a_A", "a_a"),
    ("a_B", "a_b"),
    ("p_A", "p_a"),
    ("p_B", "p_b"),
    ("M", "arrivals"),
    ("D_A", "demand_a"),
    ("D_B", "demand_b"),
    ("y_A", "sales_a"),
    ("y_B", "sales_b"),
    ("m", "market"),
    ("q_A", "q_a"),
    ("q_B", "q_b"),
)


def trace_to_dict(trace: EpisodeTrace) -> dict:
    seed = list(trace.seed) if isinstance(trace.seed, tuple) else trace.seed
    doc: dict = {
        "seed": seed,
        "episode": trace.episode_id,
        "params": trace.params_fingerprint,
    }
    for key, attr in _ARRAY_KEYS:
        doc[key] = [getattr(row, attr) for row in trace.rows]
    doc["final_q_A"] = trace.final_q_a
    doc["final_q_B"] = trace.final_q_b
    return doc


def trace_from_dict(doc: dict) -> EpisodeTrace:
    n = len(doc["a_A"])
    d_out = [doc["M"][t] - doc["D_A"][t] - doc["D_B"][t] for t in range(n)]
    rows = tuple(
        StepOutcome(
            day=t,
            a_a=doc["a_A"][t],
            a_b=doc["a_B"][t],
            p_a=doc["p_A"][t],
            p_b=doc["p_B"][t],
            arrivals=doc["M"][t],
            demand_a=doc["D_A"][t],
            demand_b=doc["D_B"][t],
            demand_out=d_out[t],
            sales_a=doc["y_A"][t],
            sales_b=doc["y_B"][t],
            market=doc["m"][t],
            q_a=doc["q_A"][t],
            q_b=doc["q_B"][t],
        )
        for t in range(n)
    )
    seed = doc["seed"]
    return EpisodeTrace(
        seed=tuple(seed) if isinstance(seed, list) else seed,
        episode_id=doc["episode"],
        params_fingerprint=doc["params"],
        rows=rows,
        final_q_a=doc["final_q_A"],
        final_q_b=doc["final_q_B"],
    )


def write_traces_jsonl(traces: Iterable[EpisodeTrace], fh: TextIO) -> None:
    for trace in traces:
        fh.write(json.dumps(trace_to_dict(trace)) + "\n")


def read_traces_jsonl(fh: TextIO) -> Iterator[EpisodeTrace]:
    for line in fh:
        line = line.strip()
        if line:
            yield trace_from_dict(json.loads(line))
