"""Joint distributions over per-node channel states.

The same-everywhere model drives the first setting; the others are binary
availability models (state 0 or 1 per node) for the second setting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations, product
from typing import Mapping, Sequence

import numpy as np

from .errors import CapExceededError, ValidationError
from .graphs import (
    ConflictGraph,
    SYMMETRY_CAP,
    find_isomorphism,
    mask_of,
    maximal_cliques,
    restrict,
)
from .meanvalid import SameStateModel

EXACT_CAP = 16


class ChannelStateModel:
    """Base class. ``n_states`` is the number of non-zero states."""

    n_states = 1

    def joint_prob(self, G: ConflictGraph, J: Sequence[int]) -> float:
        raise NotImplementedError

    def sample(self, G: ConflictGraph, rng: np.random.Generator, size: int) -> np.ndarray:
        """``size`` state vectors as an int array of shape ``(size, G.n)``."""
        raise NotImplementedError

    def describe(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class SameEverywhere(ChannelStateModel):
    """Every node shares one state; state ``j`` has probability ``q[j-1]``."""

    q: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "q", SameStateModel(tuple(self.q)).q)

    @property
    def n_states(self) -> int:
        return len(self.q)

    def as_same_state(self) -> SameStateModel:
        return SameStateModel(self.q)

    def joint_prob(self, G, J):
        if len(J) != G.n:
            raise ValidationError("state vector length does not match the graph")
        first = J[0] if G.n else 0
        if any(x != first for x in J):
            return 0.0
        if first == 0:
            return 1.0 - math.fsum(self.q)
        return self.q[first - 1]

    def sample(self, G, rng, size):
        probs = np.array([max(0.0, 1.0 - math.fsum(self.q)), *self.q])
        probs /= probs.sum()
        states = rng.choice(len(probs), size=size, p=probs)
        return np.repeat(states[:, None], G.n, axis=1)

    def describe(self):
        return {"kind": "same", "q": list(self.q)}


@dataclass(frozen=True)
class IID(ChannelStateModel):
    """Each node available independently with probability ``q``."""

    q: float

    def __post_init__(self):
        if not 0.0 <= self.q <= 1.0:
            raise ValidationError(f"availability {self.q!r} outside [0, 1]")

    @property
    def availability(self) -> float:
        return float(self.q)

    def joint_prob(self, G, J):
        if len(J) != G.n:
            raise ValidationError("state vector length does not match the graph")
        ones = sum(1 for x in J if x)
        return self.availability**ones * (1.0 - self.availability) ** (G.n - ones)

    def sample(self, G, rng, size):
        return (rng.random((size, G.n)) < self.availability).astype(np.int8)

    def describe(self):
        return {"kind": "iid", "q": self.q}


@dataclass(frozen=True)
class SampledIID(IID):
    """Available with probability ``q`` and sensed with probability ``p``: IID with ``p q``."""

    p: float = 1.0

    def __post_init__(self):
        super().__post_init__()
        if not 0.0 <= self.p <= 1.0:
            raise ValidationError(f"estimation probability {self.p!r} outside [0, 1]")

    @property
    def availability(self) -> float:
        return float(self.q) * float(self.p)

    def describe(self):
        return {"kind": "sampled-iid", "q": self.q, "p": self.p}


class _TabulatedModel(ChannelStateModel):
    """Binary model with an exact joint table over all ``2^N`` vectors."""

    def table(self, G: ConflictGraph) -> np.ndarray:
        raise NotImplementedError

    def joint_prob(self, G, J):
        if len(J) != G.n:
            raise ValidationError("state vector length does not match the graph")
        return float(self.table(G)[mask_of(a for a in range(G.n) if J[a])])

    def sample(self, G, rng, size):
        cdf = np.cumsum(self.table(G))
        idx = np.searchsorted(cdf, rng.random(size) * cdf[-1], side="right")
        idx = np.minimum(idx, len(cdf) - 1)
        return ((idx[:, None] >> np.arange(G.n)) & 1).astype(np.int8)


@dataclass(frozen=True, eq=False)
class MarkovRandomField(_TabulatedModel):
    """Binary field with one potential per maximal clique.

    ``zeta[k]`` is the potential of a clique assignment with ``k`` ones, shared by
    all cliques. ``clique_tables`` overrides single cliques with a full table
    indexed by the assignment read as bits (first clique node = lowest bit),
    which breaks the symmetry on purpose.
    """

    zeta: tuple[float, ...]
    clique_tables: Mapping[tuple[int, ...], Sequence[float]] = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "zeta", tuple(float(z) for z in self.zeta))
        if not self.zeta or any(z <= 0 for z in self.zeta):
            raise ValidationError("potentials must be strictly positive")
        for table in self.clique_tables.values():
            if any(float(z) <= 0 for z in table):
                raise ValidationError("potentials must be strictly positive")

    @property
    def symmetric(self) -> bool:
        return not self.clique_tables

    def table(self, G):
        key = (G.n, G.edges)
        if key in self._cache:
            return self._cache[key]
        if G.n > EXACT_CAP:
            raise CapExceededError(f"exact field normalisation capped at {EXACT_CAP} nodes")
        cliques = maximal_cliques(G)
        sizes = {len(C) for C in cliques}
        if len(sizes) > 1:
            raise ValidationError(
                f"maximal cliques have mixed sizes {sorted(sizes)}; symmetric potentials need one size"
            )
        if sizes and len(self.zeta) != max(sizes) + 1:
            raise ValidationError(
                f"need {max(sizes) + 1} potentials for cliques of size {max(sizes)}, got {len(self.zeta)}"
            )
        vectors = np.arange(1 << G.n)
        weights = np.ones(len(vectors))
        for C in cliques:
            bits = [(vectors >> a) & 1 for a in C]
            override = self.clique_tables.get(tuple(sorted(C)))
            if override is not None:
                code = sum(b << k for k, b in enumerate(bits))
                weights *= np.asarray(override, dtype=float)[code]
            else:
                weights *= np.asarray(self.zeta)[sum(bits)]
        table = weights / weights.sum()
        self._cache[key] = table
        return table

    def partition_function(self, G) -> float:
        """Normaliser Z = sum over all vectors of the clique-potential product."""
        cliques = maximal_cliques(G)
        total = 0.0
        for bits in product((0, 1), repeat=G.n):
            w = 1.0
            for C in cliques:
                override = self.clique_tables.get(tuple(sorted(C)))
                if override is not None:
                    w *= float(override[sum(bits[a] << k for k, a in enumerate(C))])
                else:
                    w *= self.zeta[sum(bits[a] for a in C)]
            total += w
        return total

    def describe(self):
        return {"kind": "mrf", "zeta": list(self.zeta)}


def zeta_from_matrix(matrix: Sequence[Sequence[float]]) -> tuple[float, ...]:
    """Count-indexed potentials from a symmetric 2x2 edge potential matrix."""
    (a, b), (b2, d) = matrix
    if abs(b - b2) > 1e-15:
        raise ValidationError("edge potential matrix must be symmetric")
    return (float(a), float(b), float(d))


@dataclass(frozen=True, eq=False)
class ExplicitJoint(_TabulatedModel):
    """Binary model given by an explicit table ``{state tuple: probability}``."""

    probs: Mapping[tuple[int, ...], float]

    def table(self, G):
        if G.n > EXACT_CAP:
            raise CapExceededError(f"explicit joint tables capped at {EXACT_CAP} nodes")
        out = np.zeros(1 << G.n)
        for J, p in self.probs.items():
            if len(J) != G.n:
                raise ValidationError("table entry length does not match the graph")
            out[mask_of(a for a in range(G.n) if J[a])] += float(p)
        total = out.sum()
        if abs(total - 1.0) > 1e-10:
            raise ValidationError(f"explicit joint sums to {total!r}")
        return out

    def describe(self):
        return {"kind": "explicit", "probs": {"".join(map(str, k)): v for k, v in self.probs.items()}}


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def joint_prob(model: ChannelStateModel, G: ConflictGraph, J: Sequence[int]) -> float:
    return model.joint_prob(G, J)


def sample_states(model: ChannelStateModel, G: ConflictGraph, rng: np.random.Generator,
                  size: int | None = None) -> np.ndarray:
    """One state vector, or ``size`` of them stacked."""
    out = model.sample(G, rng, 1 if size is None else size)
    return out[0] if size is None else out


def binary_joint_table(model: ChannelStateModel, G: ConflictGraph) -> np.ndarray:
    """Probability of every availability pattern, indexed by bitmask (bit a = node a)."""
    if G.n > EXACT_CAP:
        raise CapExceededError(f"exact enumeration capped at {EXACT_CAP} nodes")
    if isinstance(model, _TabulatedModel):
        return model.table(G)
    if isinstance(model, IID):
        masks = np.arange(1 << G.n)
        ones = np.zeros(len(masks), dtype=int)
        for a in range(G.n):
            ones += (masks >> a) & 1
        q = model.availability
        return q**ones * (1.0 - q) ** (G.n - ones)
    raise ValidationError(f"{type(model).__name__} is not a binary availability model")


def node_marginals(model: ChannelStateModel, G: ConflictGraph) -> np.ndarray:
    table = binary_joint_table(model, G)
    masks = np.arange(len(table))
    return np.array([table[((masks >> a) & 1) == 1].sum() for a in range(G.n)])


@dataclass
class InvarianceReport:
    passed: bool
    pairs_checked: int
    classes: int
    violation: tuple[tuple[int, ...], tuple[int, ...], float, float] | None
    clique_profile: dict[int, list[int]]
    clique_uniform: bool
    normalisation: float


def clique_membership_profile(G: ConflictGraph) -> dict[int, list[int]]:
    """For each clique size k, the distinct counts of maximal cliques containing a k-clique."""
    maximal = [set(C) for C in maximal_cliques(G)]
    profile: dict[int, set[int]] = {}
    seen: set[tuple[int, ...]] = set()
    for C in maximal:
        for size in range(1, len(C) + 1):
            for sub in combinations(sorted(C), size):
                if sub in seen:
                    continue
                seen.add(sub)
                count = sum(1 for D in maximal if set(sub) <= D)
                profile.setdefault(size, set()).add(count)
    return {k: sorted(v) for k, v in sorted(profile.items())}


def audit_isomorphism_invariance(model: ChannelStateModel, G: ConflictGraph,
                                 tol: float = 1e-10) -> InvarianceReport:
    """Check that isomorphic available subgraphs always get equal probability."""
    if G.n > SYMMETRY_CAP:
        raise CapExceededError(f"isomorphism audit capped at {SYMMETRY_CAP} nodes")
    table = binary_joint_table(model, G)
    groups: dict[tuple, list[int]] = {}
    subgraphs = {}
    for mask in range(1 << G.n):
        J = [(mask >> a) & 1 for a in range(G.n)]
        H = restrict(G, J)
        subgraphs[mask] = H
        key = (H.n, len(H.edges), tuple(sorted(H.degree(a) for a in range(H.n))))
        groups.setdefault(key, []).append(mask)
    pairs = 0
    all_classes: list[list[int]] = []
    for members in groups.values():
        found: list[list[int]] = []
        for mask in members:
            for cls in found:
                if find_isomorphism(subgraphs[cls[0]], subgraphs[mask]) is not None:
                    cls.append(mask)
                    break
            else:
                found.append([mask])
        all_classes.extend(found)
    violation = None
    for cls in all_classes:
        pairs += len(cls) * (len(cls) - 1) // 2
        lo = min(cls, key=lambda m: table[m])
        hi = max(cls, key=lambda m: table[m])
        if violation is None and table[hi] - table[lo] >= tol:
            violation = (
                tuple((lo >> a) & 1 for a in range(G.n)),
                tuple((hi >> a) & 1 for a in range(G.n)),
                float(table[lo]),
                float(table[hi]),
            )
    classes = len(all_classes)
    profile = clique_membership_profile(G) if G.n else {}
    return InvarianceReport(
        passed=violation is None,
        pairs_checked=pairs,
        classes=classes,
        violation=violation,
        clique_profile=profile,
        clique_uniform=all(len(v) == 1 for v in profile.values()),
        normalisation=float(table.sum()),
    )
