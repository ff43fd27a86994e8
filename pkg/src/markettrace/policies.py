"""Action-selection rules and distribution utilities over the 7-bucket grid.

All samplers take an explicit generator; ties break to the lowest index so
replays are deterministic. Natural log everywhere.
"""

from __future__ import annotations

import math

import numpy as np

from .params import N_BUCKETS

# floor applied to reference distributions before any log or ratio, since a
# frozen prior can emit exact zeros on never-used buckets
PROB_FLOOR = 1e-6


def floor_distribution(d: np.ndarray, floor: float = PROB_FLOOR) -> np.ndarray:
    """Raise zero-ish entries to ``floor`` and renormalize; exact identity
    when nothing is below the floor."""
    d = np.asarray(d, dtype=float)
    if np.all(d >= floor):
        return d
    out = np.maximum(d, floor)
    return out / out.sum()


def epsilon_greedy(q_values: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Uniform bucket with probability epsilon, else first-best bucket."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(0, len(q_values)))
    return int(np.argmax(q_values))


def sample_categorical(d: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw scanning buckets in ascending index order."""
    u = rng.random()
    acc = 0.0
    last = len(d) - 1
    for i in range(last):
        acc += d[i]
        if u < acc:
            return i
    return last


def argmax_action(d: np.ndarray) -> int:
    return int(np.argmax(d))


def temperature_scale(d: np.ndarray, temperature: float) -> np.ndarray:
    """Sharpen (T < 1) or flatten (T > 1) a distribution: d_i^(1/T), renormalized."""
    if temperature <= 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    d = floor_distribution(d)
    scaled = d ** (1.0 / temperature)
    return scaled / scaled.sum()


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) in nats; q is floored so the ratio is always defined,
    and 0 * log 0 counts as 0."""
    q = floor_distribution(q)
    total = 0.0
    for pi, qi in zip(p, q):
        if pi > 0.0:
            total += pi * math.log(pi / qi)
    return total


def entropy(d: np.ndarray) -> float:
    """Shannon entropy in nats with the 0 * log 0 = 0 convention."""
    return -sum(pi * math.log(pi) for pi in d if pi > 0.0)


def uniform_distribution(n: int = N_BUCKETS) -> np.ndarray:
    return np.full(n, 1.0 / n)
