"""Chinese-restaurant seating primitives for Pitman-Yor and Dirichlet processes.

A Restaurant keeps the full seating arrangement (per-dish table sizes), not
the collapsed histogram, so Gibbs removal and parent propagation are exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class SeatingError(ValueError):
    """Invalid seating operation (empty dish, zero-mass insertion, ...)."""


@dataclass
class PypParams:
    """Per-depth Pitman-Yor parameters: discount in [0,1), strength > -discount."""

    discount: float
    strength: float

    def __post_init__(self):
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must be in [0, 1), got {self.discount}")
        if self.strength + self.discount <= 0.0:
            raise ValueError("strength + discount must be positive")


class Restaurant:
    """Seating state for one Pitman-Yor node: dish -> list of table sizes."""

    __slots__ = ("tables", "dish_customers", "total_customers", "total_tables")

    def __init__(self):
        self.tables: dict[int, list[int]] = {}
        self.dish_customers: dict[int, int] = {}
        self.total_customers = 0
        self.total_tables = 0

    def customers(self, dish) -> int:
        return self.dish_customers.get(dish, 0)

    def prob(self, dish, base_prob: float, params: PypParams) -> float:
        """Predictive probability (c_w - d t_w + (theta + d t) base) / (theta + c)."""
        if self.total_customers == 0:
            return base_prob
        d, theta = params.discount, params.strength
        denom = theta + self.total_customers
        w = (theta + d * self.total_tables) * base_prob
        tabs = self.tables.get(dish)
        if tabs is not None:
            w += self.dish_customers[dish] - d * len(tabs)
        return w / denom

    def add(self, dish, base_prob: float, params: PypParams, rng) -> bool:
        """Seat one customer of ``dish``; returns True when a new table opened.

        An existing table of size s is chosen with weight (s - d), a new table
        with weight (theta + d t) * base_prob.
        """
        d, theta = params.discount, params.strength
        tabs = self.tables.get(dish)
        new_w = (theta + d * self.total_tables) * base_prob
        if tabs is None:
            if new_w <= 0.0:
                raise SeatingError("zero-mass insertion")
            self.tables[dish] = [1]
            self.dish_customers[dish] = 1
            self.total_customers += 1
            self.total_tables += 1
            return True
        total = self.dish_customers[dish] - d * len(tabs) + new_w
        x = rng.random() * total
        for i, size in enumerate(tabs):
            w = size - d
            if x < w:
                tabs[i] = size + 1
                self.dish_customers[dish] += 1
                self.total_customers += 1
                return False
            x -= w
        tabs.append(1)
        self.dish_customers[dish] += 1
        self.total_customers += 1
        self.total_tables += 1
        return True

    def remove(self, dish, rng) -> bool:
        """Unseat one customer of ``dish`` (table chosen by size); True if a table emptied."""
        tabs = self.tables.get(dish)
        if not tabs:
            raise SeatingError(f"remove from empty dish {dish!r}")
        c = self.dish_customers[dish]
        n = int(rng.integers(c))
        for i, size in enumerate(tabs):
            if n < size:
                self.dish_customers[dish] = c - 1
                self.total_customers -= 1
                if size == 1:
                    del tabs[i]
                    self.total_tables -= 1
                    if not tabs:
                        del self.tables[dish]
                        del self.dish_customers[dish]
                    return True
                tabs[i] = size - 1
                return False
            n -= size
        raise AssertionError("inconsistent seating counts")

    def check(self) -> None:
        c = t = 0
        for dish, tabs in self.tables.items():
            assert tabs and all(s >= 1 for s in tabs)
            assert self.dish_customers[dish] == sum(tabs)
            c += sum(tabs)
            t += len(tabs)
        assert c == self.total_customers
        assert t == self.total_tables
        assert set(self.tables) == set(self.dish_customers)

    def copy(self) -> "Restaurant":
        r = Restaurant()
        r.tables = {d: list(tabs) for d, tabs in self.tables.items()}
        r.dish_customers = dict(self.dish_customers)
        r.total_customers = self.total_customers
        r.total_tables = self.total_tables
        return r

    def __repr__(self):
        return (
            f"Restaurant(customers={self.total_customers}, tables={self.total_tables},"
            f" dishes={len(self.tables)})"
        )


def sample_hyperparameters(
    restaurants,
    params: PypParams,
    rng,
    discount_prior: tuple[float, float] = (1.0, 1.0),
    strength_prior: tuple[float, float] = (1.0, 1.0),
) -> PypParams:
    """One auxiliary-variable Gibbs sweep for shared (discount, strength).

    Standard scheme for Pitman-Yor seating likelihoods: per restaurant draw
    x ~ Beta(theta+1, c-1) and Bernoullis y_i ~ Bern(theta / (theta + d i)),
    per table Bernoullis z_n ~ Bern((n-1) / (n - d)); then
    discount ~ Beta(a + #y_tails, b + #z_tails) and
    strength ~ Gamma(a' + #y_heads, rate b' - sum log x).

    Restaurants with no customers contribute nothing; if all are empty the
    input params are returned unchanged.
    """
    d, theta = params.discount, params.strength
    y_heads = 0
    y_tails = 0
    z_tails = 0
    log_x_sum = 0.0
    seen = False
    for r in restaurants:
        c = r.total_customers
        if c == 0:
            continue
        seen = True
        if c >= 2:
            log_x_sum += math.log(rng.beta(theta + 1.0, c - 1.0))
        t = r.total_tables
        if t >= 2:
            i = np.arange(1, t)
            heads = int((rng.random(t - 1) < theta / (theta + d * i)).sum())
            y_heads += heads
            y_tails += (t - 1) - heads
        for tabs in r.tables.values():
            for size in tabs:
                if size >= 2:
                    # n = 1 term has probability 0 of heads: always a (1 - d) factor
                    z_tails += 1
                    if size >= 3:
                        n = np.arange(2, size)
                        z_tails += int((rng.random(size - 2) >= (n - 1) / (n - d)).sum())
    if not seen:
        return params
    a_d, b_d = discount_prior
    a_s, b_s = strength_prior
    new_d = min(float(rng.beta(a_d + y_tails, b_d + z_tails)), 1.0 - 1e-12)
    rate = b_s - log_x_sum
    new_theta = float(rng.gamma(a_s + y_heads, 1.0 / rate))
    if new_theta <= 0.0:
        new_theta = 1e-12
    return PypParams(new_d, new_theta)
