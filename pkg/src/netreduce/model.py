"""Analytic shuffle-volume model and the key-overlap estimator it depends on.

With per-mapper data D, key-value proportion R, mapper:reducer ratio N and
randomness factor rho, the bottleneck-link volume is V = D*(1 + 1/R)*N
without aggregation and V' = D*(1 + 1/R)/rho with it, so the relative
volume ratio is 1/(N*rho). rho spans [1/N, 1]: 1 when every mapper emits the
same key set, 1/N when key sets are pairwise disjoint (nothing to merge).
"""

from __future__ import annotations

from dataclasses import dataclass


class DomainError(ValueError):
    pass


@dataclass
class TheoreticalModel:
    data_bytes: float  # D: per-mapper data volume
    kv_proportion: float  # R
    ratio_n: int  # N mappers per reducer
    rho: float

    def validate(self) -> None:
        if self.data_bytes <= 0:
            raise DomainError("D must be positive")
        if self.kv_proportion <= 0:
            raise DomainError("R must be positive")
        if self.ratio_n < 1:
            raise DomainError("N must be at least 1")
        lo = 1.0 / self.ratio_n
        if not lo - 1e-12 <= self.rho <= 1.0 + 1e-12:
            raise DomainError(f"rho must lie in [1/N, 1], got {self.rho}")


def model_volumes(m: TheoreticalModel) -> tuple[float, float, float]:
    """Returns (V, V', V'/V) for the configured workload."""
    m.validate()
    v = m.data_bytes * (1.0 + 1.0 / m.kv_proportion) * m.ratio_n
    v_agg = m.data_bytes * (1.0 + 1.0 / m.kv_proportion) / m.rho
    return v, v_agg, 1.0 / (m.ratio_n * m.rho)


def estimate_rho(partitions: list) -> float:
    """Observed overlap factor: sum of per-mapper distinct key counts over
    N times the size of the union. `partitions` holds per-mapper iterables
    of (key, value) records or bare keys."""
    if not partitions:
        raise DomainError("no partitions")
    key_sets = []
    for part in partitions:
        keys = set()
        for rec in part:
            keys.add(rec[0] if isinstance(rec, tuple) else rec)
        key_sets.append(keys)
    union = set().union(*key_sets)
    if not union:
        raise DomainError("partitions contain no keys")
    n = len(key_sets)
    return sum(len(k) for k in key_sets) / (n * len(union))
