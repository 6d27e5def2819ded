"""Shared fixtures and independent reference implementations.

The oracles here recompute quantities with plain python loops and raw
coefficient arrays so the vectorized library paths are checked against a
second, dumber route. Game builders cover the recurring shapes: small random
linear games, participation games, a crowd-averse game whose summary
function jumps down across the diagonal, and a tuned variant of it where the
walk provably misses (the only honest way to reach the abort outcome without
noise).
"""

import warnings

import numpy as np
import pytest

from privagg.game_core import AggregativeGame, LinearUtility, utility_values


def build_quiet(*args, **kwargs):
    """Construct an AggregativeGame with the small-scale warnings muted."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return AggregativeGame(*args, **kwargs)


# ---------------------------------------------------------------------------
# independent oracles
# ---------------------------------------------------------------------------


def naive_aggregator(game, x):
    """S(x) by explicit double loop over players and coordinates."""
    s = [0.0] * game.d
    for i in range(game.n):
        for k in range(game.d):
            s[k] += float(game.f[i][k][int(x[i])])
    return np.array([game.gamma * v for v in s])


def naive_expected_aggregator(game, p):
    s = [0.0] * game.d
    for i in range(game.n):
        for k in range(game.d):
            for j in range(game.m):
                s[k] += float(game.f[i][k][j]) * float(p[i][j])
    return np.array([game.gamma * v for v in s])


def naive_utility(game, i, a, s):
    """Evaluate player i's payoff for action a at aggregator s from the raw
    coefficient arrays, bypassing the evaluator's vectorized path."""
    u = game.utility
    kind = getattr(u, "kind", None)
    if kind == "linear":
        total = float(u.c[i][a])
        for k in range(game.d):
            total += float(u.w[i][a][k]) * float(s[k])
        return total
    if kind == "threshold":
        diff = (float(s[0]) - float(u.thresholds[i])) / 2.0
        return diff if a == 0 else -diff
    if kind == "market":
        port = u.portfolios[a]
        pay = 0.0
        for k in range(u.d):
            q = min(max(u.lam * float(s[k]) / u.lam + 0.5, 0.0), 1.0)
            pay += float(port[k]) * q
        return (float(u.valuations[i][a]) - pay) / (2.0 * u.d)
    # table utilities have no simpler second route; use the evaluator
    return float(utility_values(game, i, np.asarray(s, dtype=float))[a])


def naive_regret(game, x):
    """Per-player deviation gains by explicit loops, own-shift included."""
    s = naive_aggregator(game, x)
    gains = np.zeros(game.n)
    for i in range(game.n):
        base = naive_utility(game, i, int(x[i]), s)
        best = base
        for a in range(game.m):
            if a == int(x[i]):
                continue
            s_dev = s.copy()
            for k in range(game.d):
                s_dev[k] += game.gamma * (
                    float(game.f[i][k][a]) - float(game.f[i][k][int(x[i])])
                )
            best = max(best, naive_utility(game, i, a, s_dev))
        gains[i] = best - base
    return gains


def naive_loss(game, x):
    total = 0.0
    for i in range(game.n):
        total += float(game.loss[i][int(x[i])])
    return game.gamma * total


# ---------------------------------------------------------------------------
# game builders
# ---------------------------------------------------------------------------


def crowd_averse_game(n, threshold, gamma, spread2=False):
    """Two-action game where joining is attractive at low aggregator values.

    Payoffs are (T - s)/2 for joining and (s - T)/2 for staying out, so the
    best response flips from join to out as s passes T and the summary
    function V steps downward. Facets are join = 1 / out = 0 by default;
    spread2 uses join = +1 / out = -1 (per-move shift 2 gamma).
    """
    c = np.tile([threshold / 2.0, -threshold / 2.0], (n, 1))
    w = np.tile([[-0.5], [0.5]], (n, 1, 1)).reshape(n, 2, 1)
    f = np.zeros((n, 1, 2))
    f[:, 0, 0] = 1.0
    if spread2:
        f[:, 0, 1] = -1.0
    return build_quiet(
        n=n, m=2, d=1, gamma=gamma, W=max(1.0, gamma * n), f=f,
        utility=LinearUtility(c=c, w=w),
    )


def jump_game():
    """Crowd-averse instance whose walk provably misses its target.

    All thresholds sit at 0.08, the facet spread is 2 (so walk steps move
    the aggregator by 0.2), and alpha = 0.03 puts the crossing target at
    0.09 with an acceptance band of width 2(alpha + gamma/2) = 0.16, which
    falls in the gap between consecutive walk values 0.0 and 0.2. A
    noise-free run therefore reaches stage 2 (bracket index 3) and aborts.
    """
    return crowd_averse_game(10, 0.08, 0.1, spread2=True)


JUMP_ALPHA = 0.03
JUMP_EPSILON = 3000.0


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(20260814)))
