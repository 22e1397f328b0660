"""Scalar market environment, penalty families and single-location pricing.

Everything here is a pure function of its inputs. The single-location solution
is the building block that the graph settings reuse once per node, with the
probability that a competitor offers a channel at that node substituted for the
state probabilities.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import UndefinedStateError, ValidationError

PMF_TOL = 1e-12
BOUNDARY_TOL = 1e-12


# ---------------------------------------------------------------------------
# Demand and market parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DemandModel:
    """Distribution of the number of buyers at a node.

    ``probs[k]`` is the probability that exactly ``k + 1`` buyers are present.
    A fixed demand ``m`` is the degenerate pmf with all mass on ``m``.
    """

    probs: tuple[float, ...]

    def __post_init__(self):
        if len(self.probs) == 0:
            raise ValidationError("demand pmf is empty")
        if any((not math.isfinite(p)) or p < 0 for p in self.probs):
            raise ValidationError("demand pmf entries must be finite and non-negative")
        total = math.fsum(self.probs)
        if abs(total - 1.0) > PMF_TOL:
            raise ValidationError(f"demand pmf sums to {total!r}, expected 1")

    @classmethod
    def fixed(cls, m: int) -> "DemandModel":
        if int(m) != m or m < 1:
            raise ValidationError(f"fixed demand must be an integer >= 1, got {m!r}")
        m = int(m)
        return cls(tuple([0.0] * (m - 1) + [1.0]))

    @classmethod
    def from_pmf(cls, pmf: Sequence[float] | dict) -> "DemandModel":
        """Build from a list indexed from demand 1, or a ``{demand: prob}`` mapping."""
        if isinstance(pmf, dict):
            items = {int(k): float(p) for k, p in pmf.items()}
            if any(k < 1 for k in items):
                raise ValidationError("demand values must be >= 1")
            top = max(items)
            probs = [items.get(k, 0.0) for k in range(1, top + 1)]
        else:
            probs = [float(p) for p in pmf]
        while len(probs) > 1 and probs[-1] == 0.0:
            probs.pop()
        return cls(tuple(probs))

    @property
    def max_demand(self) -> int:
        return len(self.probs)

    @property
    def is_fixed(self) -> bool:
        return sum(1 for p in self.probs if p > 0) == 1

    @property
    def m(self) -> int | None:
        """The demand level when the model is fixed, else ``None``."""
        if not self.is_fixed:
            return None
        return next(k + 1 for k, p in enumerate(self.probs) if p > 0)

    def cdf(self, k: int) -> float:
        """P(Z <= k)."""
        if k <= 0:
            return 0.0
        return min(1.0, math.fsum(self.probs[:k]))

    def survival(self, k: int) -> float:
        """P(Z > k), summed from the tail so small values keep their precision."""
        if k <= 0:
            return 1.0
        return min(1.0, math.fsum(self.probs[k:]))

    def sample(self, rng: np.random.Generator, size=None):
        if self.is_fixed:
            return np.full(size, self.m, dtype=np.int64) if size is not None else self.m
        support = np.arange(1, self.max_demand + 1)
        return rng.choice(support, size=size, p=np.asarray(self.probs))


@dataclass(frozen=True)
class MarketParams:
    """Primaries ``l``, demand model, number of non-zero states ``n``, penalty cap ``v`` and cost ``c``."""

    l: int
    demand: DemandModel
    n: int
    v: float
    c: float

    def __post_init__(self):
        if int(self.l) != self.l or self.l < 2:
            raise ValidationError(f"need at least two primaries, got l={self.l!r}")
        if int(self.n) != self.n or self.n < 1:
            raise ValidationError(f"need at least one non-zero state, got n={self.n!r}")
        if not math.isfinite(self.v):
            raise ValidationError("penalty cap v must be finite")
        if not math.isfinite(self.c) or self.c < 0:
            raise ValidationError("cost c must be finite and non-negative")
        if not self.demand.is_fixed and self.demand.cdf(self.l - 1) <= 0:
            raise ValidationError(
                "random demand must put positive mass on some m <= l - 1"
            )

    @classmethod
    def create(
        cls,
        l: int,
        n: int,
        v: float,
        c: float,
        m: int | None = None,
        demand_pmf=None,
    ) -> "MarketParams":
        if (m is None) == (demand_pmf is None):
            raise ValidationError("give exactly one of m or demand_pmf")
        demand = DemandModel.fixed(m) if m is not None else DemandModel.from_pmf(demand_pmf)
        return cls(int(l), demand, int(n), float(v), float(c))

    @property
    def m(self) -> int | None:
        return self.demand.m

    @property
    def degenerate(self) -> bool:
        """True when a channel can never be undercut out of a sale (demand always >= l)."""
        return self.demand.cdf(self.l - 1) <= 0

    def with_demand(self, m: int) -> "MarketParams":
        return MarketParams(self.l, DemandModel.fixed(m), self.n, self.v, self.c)

    @cached_property
    def _lose_coeffs(self) -> tuple[float, ...]:
        # w(x) = sum_i P(Z <= i) C(N, i) x^i (1-x)^(N-i), N = l - 1 competitors
        N = self.l - 1
        return tuple(math.comb(N, i) * self.demand.cdf(i) for i in range(N + 1))

    @cached_property
    def _keep_coeffs(self) -> tuple[float, ...]:
        N = self.l - 1
        return tuple(math.comb(N, i) * self.demand.survival(i) for i in range(N + 1))


# ---------------------------------------------------------------------------
# Win probability
# ---------------------------------------------------------------------------


def _bernstein_scalar(x: float, coeffs: tuple[float, ...]) -> float:
    N = len(coeffs) - 1
    if x == 0.0:
        return coeffs[0]
    if x == 1.0:
        return coeffs[N]
    y = 1.0 - x
    total = 0.0
    for i, ci in enumerate(coeffs):
        if ci:
            total += ci * x**i * y ** (N - i)
    return total


def _bernstein_array(x: np.ndarray, coeffs: tuple[float, ...]) -> np.ndarray:
    N = len(coeffs) - 1
    y = 1.0 - x
    total = np.zeros_like(x, dtype=float)
    for i, ci in enumerate(coeffs):
        if ci:
            total += ci * np.power(x, i) * np.power(y, N - i)
    return total


def _check_unit(x) -> None:
    if np.any(np.asarray(x) < 0.0) or np.any(np.asarray(x) > 1.0) or np.any(np.isnan(x)):
        raise ValidationError(f"probability argument outside [0, 1]: {x!r}")


def win_prob(x, params: MarketParams):
    """Probability that at least the demand level of the ``l - 1`` competitors are active.

    Each competitor is active independently with probability ``x``. Accepts a
    scalar or an array.
    """
    _check_unit(x)
    if np.ndim(x) == 0:
        return min(1.0, max(0.0, _bernstein_scalar(float(x), params._lose_coeffs)))
    return np.clip(_bernstein_array(np.asarray(x, dtype=float), params._lose_coeffs), 0.0, 1.0)


def keep_prob(x, params: MarketParams):
    """The complement ``1 - w(x)``, summed directly so it stays accurate near zero."""
    _check_unit(x)
    if np.ndim(x) == 0:
        return min(1.0, max(0.0, _bernstein_scalar(float(x), params._keep_coeffs)))
    return np.clip(_bernstein_array(np.asarray(x, dtype=float), params._keep_coeffs), 0.0, 1.0)


def bisect_increasing(fn: Callable[[float], float], target: float, lo: float, hi: float,
                      max_iter: int = 200) -> float:
    """Solve ``fn(x) = target`` for a non-decreasing ``fn`` on ``[lo, hi]``."""
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if fn(mid) < target:
            lo = mid
        else:
            hi = mid
    flo, fhi = fn(lo), fn(hi)
    return lo if abs(flo - target) <= abs(fhi - target) else hi


def win_prob_inverse(y: float, params: MarketParams) -> float:
    """Return ``x`` in [0, 1] with ``w(x) = y``, by bisection."""
    top = win_prob(1.0, params)
    if not (-BOUNDARY_TOL <= y <= top + BOUNDARY_TOL):
        raise ValidationError(f"w^-1 argument {y!r} outside [0, {top!r}]")
    if y <= 0.0:
        return 0.0
    if y >= top:
        return 1.0
    return bisect_increasing(lambda t: _bernstein_scalar(t, params._lose_coeffs), y, 0.0, 1.0)


def keep_prob_inverse(target: float, params: MarketParams) -> float:
    """Return ``x`` with ``1 - w(x) = target``; clamps to 0 or 1 outside the range of W."""
    if target >= 1.0:
        return 0.0
    bottom = keep_prob(1.0, params)
    if target <= bottom:
        return 1.0
    return bisect_increasing(lambda t: -_bernstein_scalar(t, params._keep_coeffs), -target, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Penalty families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PenaltyFamily:
    """Penalty functions ``g_i`` (price to penalty) and their inverses ``f_i``.

    States are 1-based. The evaluators should accept numpy arrays as well as
    scalars; the simulator relies on that.
    """

    kind: str
    n: int
    g_eval: Callable = field(repr=False, compare=False)
    f_eval: Callable = field(repr=False, compare=False)

    def _state(self, i: int) -> None:
        if not 1 <= i <= self.n:
            raise ValidationError(f"state {i} outside 1..{self.n}")

    def g(self, i: int, p):
        self._state(i)
        return self.g_eval(i, p)

    def f(self, i: int, x):
        self._state(i)
        return self.f_eval(i, x)

    def validate(self, price_grid: Iterable[float] | None = None) -> None:
        """Check monotonicity, inversion and state ordering on a sample grid."""
        prices = np.asarray(
            list(price_grid) if price_grid is not None else np.linspace(0.0, 100.0, 201),
            dtype=float,
        )
        for i in range(1, self.n + 1):
            pen = np.asarray(self.g(i, prices), dtype=float)
            if np.any(np.diff(pen) <= 0):
                raise ValidationError(f"g_{i} is not strictly increasing on the grid")
            back = np.asarray(self.f(i, pen), dtype=float)
            if np.max(np.abs(back - prices)) > 1e-9 * max(1.0, float(np.max(np.abs(prices)))):
                raise ValidationError(f"f_{i} does not invert g_{i} on the grid")
        penalties = np.asarray(self.g(1, prices), dtype=float)
        for i in range(1, self.n):
            lo = np.asarray(self.f(i, penalties), dtype=float)
            hi = np.asarray(self.f(i + 1, penalties), dtype=float)
            if np.any(lo >= hi):
                raise ValidationError(f"f_{i} is not below f_{i + 1} on the grid")


def additive_cubic(n: int) -> PenaltyFamily:
    """g_i(p) = p - i^3."""
    return PenaltyFamily(
        "additive-cubic", n, lambda i, p: p - i**3, lambda i, x: x + i**3
    )


def _sqrt_nonneg(z):
    out = np.sqrt(np.maximum(z, 0.0))
    return float(out) if np.ndim(out) == 0 else out


def quadratic_cubic(n: int) -> PenaltyFamily:
    """g_i(p) = p^2 - i^3 on non-negative prices."""
    return PenaltyFamily(
        "quadratic-cubic", n, lambda i, p: p * p - i**3, lambda i, x: _sqrt_nonneg(x + i**3)
    )


def identity_family() -> PenaltyFamily:
    return PenaltyFamily("identity", 1, lambda i, p: p, lambda i, x: x)


FAMILY_NAMES = ("additive-cubic", "quadratic-cubic", "identity")


def family_from_name(name: str, n: int) -> PenaltyFamily:
    if name == "additive-cubic":
        return additive_cubic(n)
    if name == "quadratic-cubic":
        return quadratic_cubic(n)
    if name == "identity":
        if n != 1:
            raise ValidationError("identity penalty family only supports n = 1")
        return identity_family()
    raise ValidationError(f"unknown penalty family {name!r}; expected one of {FAMILY_NAMES}")


# ---------------------------------------------------------------------------
# Single-location equilibrium pricing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PricingSolution:
    """Equilibrium pricing chain at one location.

    ``p[j-1]``, ``L[j-1]``, ``U[j-1]`` belong to state ``j``. ``alpha`` holds the
    offer probabilities used and ``tail[j-1] = sum_{k >= j} alpha_k`` (with a
    trailing zero).
    """

    p: tuple[float, ...]
    L: tuple[float, ...]
    U: tuple[float, ...]
    alpha: tuple[float, ...]
    tail: tuple[float, ...]
    degenerate: bool = False

    @property
    def n(self) -> int:
        return len(self.p)

    def support(self, j: int) -> tuple[float, float]:
        return self.L[j - 1], self.U[j - 1]


def _tail_sums(alpha: Sequence[float]) -> tuple[float, ...]:
    out = [0.0] * (len(alpha) + 1)
    for k in range(len(alpha) - 1, -1, -1):
        out[k] = out[k + 1] + alpha[k]
    return tuple(out)


def solve_single_location(
    params: MarketParams, family: PenaltyFamily, offer_probs: Sequence[float]
) -> PricingSolution:
    """Equilibrium pricing chain for offer probabilities ``alpha_1..alpha_n``.

    Runs downward from ``U_1 = v``: the payoff ``p_j - c`` at state ``j`` equals
    what a state-``j`` channel earns at its upper endpoint, and the lower endpoint
    is where the same payoff is earned while only higher states undercut.
    """
    alpha = tuple(float(a) for a in offer_probs)
    n = len(alpha)
    if n != params.n:
        raise ValidationError(f"expected {params.n} offer probabilities, got {n}")
    if family.n < n:
        raise ValidationError(f"penalty family covers {family.n} states, need {n}")
    if any((not math.isfinite(a)) or a < 0 for a in alpha):
        raise ValidationError("offer probabilities must be non-negative")
    total = math.fsum(alpha)
    if total > 1.0 + 1e-12:
        raise ValidationError(f"offer probabilities sum to {total!r} > 1")
    if total >= 1.0 - 1e-12:
        warnings.warn("offer probabilities sum to 1; the no-channel state has zero mass",
                      stacklevel=2)
    v, c = params.v, params.c
    for j in range(1, n + 1):
        if not float(family.f(j, v)) > c:
            raise ValidationError(f"f_{j}(v) <= c: no profitable sale at state {j}")

    tail = _tail_sums(alpha)
    if params.degenerate:
        p = tuple(float(family.f(j, v)) for j in range(1, n + 1))
        return PricingSolution(p, (v,) * n, (v,) * n, alpha, tail, degenerate=True)

    p, L, U = [], [], []
    upper = v
    for j in range(1, n + 1):
        margin = (float(family.f(j, upper)) - c) * keep_prob(min(tail[j - 1], 1.0), params)
        # equal keep probabilities give a point support; g(f(x)) can land an ulp above x
        lower = min(float(family.g(j, margin / keep_prob(min(tail[j], 1.0), params) + c)), upper)
        p.append(margin + c)
        L.append(lower)
        U.append(upper)
        upper = lower
    return PricingSolution(tuple(p), tuple(L), tuple(U), alpha, tail)


def penalty_cdf(x: float, j: int, solution: PricingSolution, params: MarketParams,
                family: PenaltyFamily) -> float:
    """Distribution function of the penalty chosen at state ``j``."""
    a = solution.alpha[j - 1]
    if a <= 0:
        raise UndefinedStateError(f"state {j} is never offered here (alpha = 0)")
    return _cdf_unchecked(x, j, solution, params, family)


def _cdf_unchecked(x, j, solution, params, family) -> float:
    L, U = solution.support(j)
    if solution.degenerate:
        return 1.0 if x >= params.v else 0.0
    if x < L:
        return 0.0
    if x > U:
        return 1.0
    fx = float(family.f(j, x))
    # invert W rather than w: W is small and steep where w is flat
    if fx <= params.c:
        return 0.0
    z = keep_prob_inverse((solution.p[j - 1] - params.c) / (fx - params.c), params)
    val = (z - solution.tail[j]) / solution.alpha[j - 1]
    return min(1.0, max(0.0, val))


def undercut_probability(x: float, solution: PricingSolution, params: MarketParams,
                         family: PenaltyFamily) -> float:
    """Probability that one competitor offers at this location with a penalty below ``x``."""
    rho = 0.0
    for k, a in enumerate(solution.alpha, start=1):
        if a > 0:
            rho += a * _cdf_unchecked(x, k, solution, params, family)
    return min(1.0, rho)


def payoff_at(x: float, j: int, solution: PricingSolution, params: MarketParams,
              family: PenaltyFamily) -> float:
    """Expected payoff of a state-``j`` channel offered at penalty ``x`` (no domain check)."""
    rho = undercut_probability(x, solution, params, family)
    return (float(family.f(j, x)) - params.c) * keep_prob(rho, params)


def expected_payoff_at(x: float, j: int, solution: PricingSolution, params: MarketParams,
                       family: PenaltyFamily) -> float:
    """Expected payoff at penalty ``x`` for a state-``j`` channel against equilibrium rivals."""
    lo = solution.L[-1]
    if not (lo - BOUNDARY_TOL <= x <= params.v + BOUNDARY_TOL):
        raise ValidationError(f"penalty {x!r} outside [{lo!r}, {params.v!r}]")
    return payoff_at(x, j, solution, params, family)


def penalty_quantile(u, j: int, solution: PricingSolution, params: MarketParams,
                     family: PenaltyFamily):
    """Inverse of the state-``j`` penalty distribution, vectorised over ``u``.

    Setting the distribution equal to ``u`` and solving gives the closed form
    ``g_j(c + (p_j - c) / W(tail_{j+1} + u alpha_j))``.
    """
    a = solution.alpha[j - 1]
    if a <= 0:
        raise UndefinedStateError(f"state {j} is never offered here (alpha = 0)")
    L, U = solution.support(j)
    if solution.degenerate:
        return np.full(np.shape(u), params.v) if np.ndim(u) else params.v
    z = np.clip(solution.tail[j] + np.asarray(u, dtype=float) * a, 0.0, 1.0)
    keep = keep_prob(z if np.ndim(z) else float(z), params)
    x = family.g(j, params.c + (solution.p[j - 1] - params.c) / keep)
    x = np.clip(x, L, U)
    return float(x) if np.ndim(x) == 0 else x


def sample_penalty(j: int, solution: PricingSolution, params: MarketParams,
                   family: PenaltyFamily, rng: np.random.Generator, size=None):
    """Draw penalties for a state-``j`` channel by inverse-CDF sampling."""
    return penalty_quantile(rng.random(size), j, solution, params, family)


# ---------------------------------------------------------------------------
# Ratio condition on penalty families
# ---------------------------------------------------------------------------


@dataclass
class Assumption1Report:
    passed: bool
    checked: int
    violation: tuple[float, float, int, int] | None = None


def check_assumption1(
    family: PenaltyFamily,
    c: float,
    grid: Iterable[tuple[float, float, int, int]] | None = None,
    samples: int = 10_000,
    rng: np.random.Generator | None = None,
    span: float = 100.0,
) -> Assumption1Report:
    """Check that ``(f_i - c) / (f_j - c)`` increases in the penalty for every ``i < j``.

    Samples ``(x, y, i, j)`` with ``x > y > g_i(c)``. Either pass an explicit grid
    or let the function draw ``samples`` points from ``[g_i(c), g_i(c) + span]``.
    """
    if family.n < 2:
        return Assumption1Report(True, 0)
    if grid is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        pts = []
        while len(pts) < samples:
            i, j = sorted(rng.choice(np.arange(1, family.n + 1), size=2, replace=False))
            floor = float(family.g(int(i), c))
            a, b = sorted(floor + span * rng.random(2))
            if b - a < 1e-6 * span or a <= floor:
                continue
            pts.append((b, a, int(i), int(j)))
        grid = pts
    checked = 0
    for x, y, i, j in grid:
        lhs = (float(family.f(i, y)) - c) / (float(family.f(j, y)) - c)
        rhs = (float(family.f(i, x)) - c) / (float(family.f(j, x)) - c)
        checked += 1
        if not lhs < rhs:
            return Assumption1Report(False, checked, (x, y, i, j))
    return Assumption1Report(True, checked)
