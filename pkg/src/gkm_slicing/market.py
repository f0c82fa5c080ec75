"""A realised slicing market: InP capacity plus each MVNO's user channels."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._validation import check_positive, check_vector
from .channel import UserChannel, spectral_efficiency
from .exceptions import DomainError
from .lower_level import marginal_valuation, outage_alphas, valuation


@dataclass(frozen=True)
class Market:
    """Bandwidth capacity ``capacity`` (Hz) shared by MVNOs.

    ``alphas[m]`` holds the per-user spectral efficiencies of MVNO ``m``.
    ``users`` optionally keeps the channels the efficiencies came from, which
    the multi-resource valuation needs.
    """

    capacity: float
    alphas: tuple[np.ndarray, ...]
    users: tuple[tuple[UserChannel, ...], ...] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        check_positive(self.capacity, "capacity")
        if len(self.alphas) == 0:
            raise DomainError("a market needs at least one MVNO")
        cleaned = tuple(check_vector(a, f"alphas[{m}]") for m, a in enumerate(self.alphas))
        object.__setattr__(self, "alphas", cleaned)

    @classmethod
    def from_users(
        cls,
        capacity: float,
        users: Sequence[Sequence[UserChannel]],
        epsilon: float | None = None,
    ) -> "Market":
        """Full-information efficiencies, or outage-guaranteed ones if ``epsilon`` is given."""
        if epsilon is None:
            alphas = tuple(np.array([spectral_efficiency(u) for u in group]) for group in users)
        else:
            alphas = tuple(outage_alphas(group, epsilon) for group in users)
        return cls(capacity, alphas, tuple(tuple(g) for g in users))

    @property
    def n_mvnos(self) -> int:
        return len(self.alphas)

    @property
    def user_counts(self) -> list[int]:
        return [a.size for a in self.alphas]

    def valuation(self, m: int, r: float) -> float:
        return valuation(r, self.alphas[m])

    def marginal(self, m: int, r: float) -> float:
        """``v'_m(r)``; at ``r = 0`` the finite right-hand limit, the best efficiency."""
        if r == 0:
            return float(self.alphas[m].max()) if self.alphas[m].size else 0.0
        return marginal_valuation(r, self.alphas[m])

    def valuations(self, allocations: Sequence[float]) -> np.ndarray:
        return np.array([valuation(r, a) for r, a in zip(allocations, self.alphas)])

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.float64(self.capacity).tobytes())
        for a in self.alphas:
            h.update(np.int64(a.size).tobytes())
            h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
        return h.hexdigest()[:16]
