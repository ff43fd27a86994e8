"""Market parameters for the two-hotel pricing simulator."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields, replace


@dataclass(frozen=True)
class MarketParams:
    """All environment coefficients: capacity, horizon, price grid, demand and
    choice coefficients, the market-condition process, and the constants of the
    competitor's fixed revenue-management rule.

    Defaults for the coefficients not pinned by the problem statement
    (utility intercept, price sensitivity, market weights, RM-rule constants)
    are the values selected by ``markettrace.runner.calibrate_environment``.
    """

    capacity: int = 100
    horizon: int = 30
    price_grid: tuple[float, ...] = (100.0, 120.0, 140.0, 160.0, 180.0, 200.0, 220.0)

    # demand / choice model
    base_arrival_rate: float = 7.0     # guests per day at neutral market
    arrival_elasticity: float = 1.4    # arrival-rate response to market condition
    utility_intercept: float = 3.0     # calibrated; see calibrate_environment
    price_sensitivity: float = 0.02    # utility loss per currency unit
    market_utility_weight: float = 1.0
    nest_param: float = 0.5

    # market-condition AR(1) process, clipped to [-1, 1]
    market_persistence: float = 0.9
    market_innovation: float = 0.1

    # competitor RM-rule constants
    rm_base_bucket: int = 1
    rm_market_gain: float = 2.0
    rm_market_lift: float = 0.5        # sub-notch head start of the market term
    rm_pace_gain: float = 9.0
    rm_markdown_gap: float = 0.15      # behind-pace slack before marking down
    rm_late_frac: float = 2.0 / 3.0
    rm_tight_frac: float = 0.25

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {self.capacity}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if len(self.price_grid) != 7:
            raise ValueError(f"price grid must have 7 entries, got {len(self.price_grid)}")
        if any(b <= a for a, b in zip(self.price_grid, self.price_grid[1:])):
            raise ValueError(f"price grid must be strictly increasing: {self.price_grid}")
        if self.base_arrival_rate <= 0:
            raise ValueError("base arrival rate must be positive")
        if self.price_sensitivity <= 0:
            raise ValueError("price sensitivity must be positive")
        if not 0 < self.nest_param <= 1:
            raise ValueError(f"nest parameter must be in (0, 1], got {self.nest_param}")
        object.__setattr__(self, "price_grid", tuple(float(p) for p in self.price_grid))

    @property
    def n_buckets(self) -> int:
        return len(self.price_grid)

    def price(self, bucket: int) -> float:
        return self.price_grid[bucket]

    def fingerprint(self) -> str:
        """Stable short hash of all parameter values."""
        payload = json.dumps(
            {f.name: getattr(self, f.name) for f in fields(self)},
            sort_keys=True,
            default=list,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def with_overrides(self, **kwargs: object) -> "MarketParams":
        return replace(self, **kwargs)  # type: ignore[arg-type]


# number of price buckets every distribution in the package ranges over
N_BUCKETS = 7
