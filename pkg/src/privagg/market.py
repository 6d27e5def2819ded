"""Multi-commodity market with a hinge price maker.

n traders each pick a portfolio in {-1, 0, +1}^d (sell one unit, stay out,
buy one unit, per security). The market maker quotes, per security, a price
that is 0 below imbalance -lambda/2, 1 above +lambda/2, and linear in
between. Trader payoffs are valuation minus cost, normalized by 2d; the
whole thing is an aggregative game with aggregator S = imbalance / lambda,
sensitivity gamma = 1/lambda, and reach W = n/lambda.

Portfolios are indexed in base 3, least significant digit first: digit 0
maps to -1 (sell), 1 to 0 (out), 2 to +1 (buy). Index 0 is therefore
all-sell and index (3^d - 1) / 2 is all-out.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .dp_core import ParameterError
from .game_core import AggregativeGame

__all__ = [
    "MarketGame",
    "MarketUtility",
    "MarketLossReport",
    "portfolio_matrix",
    "imbalance",
    "hinge_price",
    "trader_utility",
    "market_maker_loss",
    "to_aggregative",
    "from_aggregative",
    "corollary_eta",
    "market_zeta",
    "market_to_json",
    "market_from_json",
]

_RANGE_TOL = 1e-9


def portfolio_matrix(d: int) -> np.ndarray:
    """All 3^d portfolios as an (3^d, d) int array over {-1, 0, +1}."""
    if d < 1:
        raise ParameterError("d must be a positive integer")
    count = 3**d
    idx = np.arange(count)
    cols = [((idx // 3**k) % 3) - 1 for k in range(d)]
    return np.stack(cols, axis=1).astype(np.int64)


def hinge_price(I, lam: float):
    """Per-security price: 0, I/lambda + 1/2, or 1 by imbalance band."""
    if lam <= 0:
        raise ParameterError("lambda must be positive")
    return np.clip(np.asarray(I, dtype=float) / lam + 0.5, 0.0, 1.0)


@dataclass(frozen=True)
class MarketGame:
    """n traders, d securities, price sensitivity lambda, action valuations.

    valuations[i, j] is trader i's value for portfolio index j, required to
    lie in [-d, d] so payoffs stay in [-1, 1] after the 1/(2d) scaling.
    """

    n: int
    d: int
    lam: float
    valuations: np.ndarray  # (n, 3^d)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1 or int(self.d) != self.d or self.d < 1:
            raise ParameterError("n and d must be positive integers")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "d", int(self.d))
        if self.lam <= 0:
            raise ParameterError("lambda must be positive")
        vals = np.asarray(self.valuations, dtype=float)
        if vals.shape != (self.n, 3**self.d):
            raise ParameterError(f"valuations must have shape ({self.n}, {3 ** self.d})")
        if np.max(np.abs(vals)) > self.d + _RANGE_TOL:
            raise ParameterError("portfolio valuations must lie in [-d, d]")
        object.__setattr__(self, "valuations", vals)

    @property
    def m(self) -> int:
        return 3**self.d

    @property
    def portfolios(self) -> np.ndarray:
        return portfolio_matrix(self.d)


def imbalance(game: MarketGame, x) -> np.ndarray:
    """Net order flow per security for a pure profile of portfolio indices."""
    x = np.asarray(x)
    if x.shape != (game.n,) or np.min(x) < 0 or np.max(x) >= game.m:
        raise ParameterError("profile must hold one portfolio index per trader")
    return game.portfolios[x.astype(np.int64)].sum(axis=0)


def trader_utility(game: MarketGame, i: int, a: int, s) -> float:
    """(v_i(a) - <portfolio_a, q(lambda * s)>) / (2d) at aggregator value s."""
    s = np.asarray(s, dtype=float)
    q = hinge_price(game.lam * s, game.lam)
    pay = float(game.portfolios[int(a)] @ q)
    return (float(game.valuations[int(i), int(a)]) - pay) / (2.0 * game.d)


@dataclass(frozen=True)
class MarketLossReport:
    """Money the maker leaves on the table, per security and total."""

    per_security: np.ndarray
    total: float


def market_maker_loss(game: MarketGame, x) -> MarketLossReport:
    """Loss I_k * (1 - q_k) on net-long books, -I_k * q_k on net-short ones.

    Peaks at lambda/16 per security (at |I_k| = lambda/4) and vanishes once
    the book clears lambda/2 either way.
    """
    I = imbalance(game, x)
    q = hinge_price(I, game.lam)
    per = np.where(I > 0, I * (1.0 - q), -I * q)
    return MarketLossReport(per_security=per, total=float(per.sum()))


@dataclass(frozen=True)
class MarketUtility:
    """Aggregative-game utility evaluator wrapping the trader payoff."""

    lam: float
    d: int
    valuations: np.ndarray  # (n, 3^d)

    kind = "market"

    def __post_init__(self):
        object.__setattr__(self, "valuations", np.asarray(self.valuations, dtype=float))

    @property
    def portfolios(self) -> np.ndarray:
        return portfolio_matrix(self.d)

    def _prices(self, s: np.ndarray) -> np.ndarray:
        return hinge_price(self.lam * s, self.lam)

    def value_matrix(self, s: np.ndarray) -> np.ndarray:
        pay = self.portfolios @ self._prices(s)  # (m,)
        return (self.valuations - pay[None, :]) / (2.0 * self.d)

    def values_for_player(self, i: int, s: np.ndarray) -> np.ndarray:
        pay = self.portfolios @ self._prices(s)
        return (self.valuations[i] - pay) / (2.0 * self.d)

    def validate_for_game(self, game: AggregativeGame) -> None:
        if game.m != 3**self.d or game.d != self.d:
            raise ParameterError("market utility dimensions do not match the game")
        if self.valuations.shape != (game.n, game.m):
            raise ParameterError("one valuation per (trader, portfolio) required")
        if np.max(np.abs(self.valuations)) > self.d + _RANGE_TOL:
            raise ParameterError("portfolio valuations must lie in [-d, d]")

    def to_params(self) -> dict:
        return {"lambda": self.lam, "d": self.d, "valuations": self.valuations.tolist()}

    @classmethod
    def from_params(cls, params: dict) -> "MarketUtility":
        return cls(
            lam=float(params["lambda"]), d=int(params["d"]),
            valuations=np.asarray(params["valuations"]),
        )


def to_aggregative(game: MarketGame) -> AggregativeGame:
    """View the market as an aggregative game with S = imbalance / lambda."""
    A = portfolio_matrix(game.d)  # (m, d)
    f = np.broadcast_to(A.T.astype(float), (game.n, game.d, game.m)).copy()
    return AggregativeGame(
        n=game.n,
        m=game.m,
        d=game.d,
        gamma=1.0 / game.lam,
        W=game.n / game.lam,
        f=f,
        utility=MarketUtility(lam=game.lam, d=game.d, valuations=game.valuations),
    )


def from_aggregative(game: AggregativeGame) -> MarketGame:
    """Recover the market view from a game built by ``to_aggregative``."""
    u = game.utility
    if getattr(u, "kind", None) != "market":
        raise ParameterError("game does not carry a market utility")
    return MarketGame(n=game.n, d=u.d, lam=u.lam, valuations=u.valuations)


def corollary_eta(n: int, lam: float, d: int) -> float:
    """Equilibrium accuracy scale sqrt(d) * ((n/lam^2)^(1/3) + (n/lam^2)^(1/2)).

    Polylogarithmic factors are normalized to 1; this is the knob-level
    quantity that shows when privacy comes for free as lambda grows.
    """
    if n < 1 or d < 1 or lam <= 0:
        raise ParameterError("need n >= 1, d >= 1, lambda > 0")
    ratio = n / lam**2
    return math.sqrt(d) * (ratio ** (1.0 / 3.0) + math.sqrt(ratio))


def market_zeta(n: int, lam: float, d: int) -> float:
    """Equilibrium existence threshold sqrt(8 n d ln(3n)) / lambda."""
    if n < 1 or d < 1 or lam <= 0:
        raise ParameterError("need n >= 1, d >= 1, lambda > 0")
    return math.sqrt(8.0 * n * d * math.log(3.0 * n)) / lam


def market_to_json(game: MarketGame) -> str:
    return json.dumps(
        {"n": game.n, "d": game.d, "lambda": game.lam, "valuations": game.valuations.tolist()},
        indent=1,
    )


def market_from_json(text: str) -> MarketGame:
    try:
        payload = json.loads(text)
        return MarketGame(
            n=payload["n"], d=payload["d"], lam=payload["lambda"],
            valuations=np.asarray(payload["valuations"]),
        )
    except json.JSONDecodeError as exc:
        raise ParameterError(f"malformed market JSON: {exc}") from None
    except KeyError as exc:
        raise ParameterError(f"market JSON missing field {exc}") from None
