"""Automatic data placement: pick a tier and a shuffling method under budgets.

Policy, fastest tier first:

* data plus the model's working set fit in fast memory -> ``resident`` + RR
* data fits in bulk memory -> ``staged`` + RR (CR only on explicit request)
* otherwise -> ``storage`` + CR (RR is not offered for storage reads)

"Fits" includes a 10% headroom on the bytes being placed.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass

from . import memtrack
from .errors import ConfigError
from .loader import TierKind
from .sampler import Method

__all__ = [
    "HEADROOM",
    "HardwareBudget",
    "DataFootprint",
    "MemoryProbe",
    "PlacementPlan",
    "estimate_footprint",
    "probe_peak_memory",
    "plan",
    "detect_bulk_bytes",
]

HEADROOM = 1.10
TIER_ORDER = (TierKind.RESIDENT, TierKind.STAGED, TierKind.STORAGE)


def detect_bulk_bytes() -> int | None:
    """Physical memory size from the OS, or ``None`` when unavailable."""
    try:
        return int(os.sysconf("SC_PAGE_SIZE") * os.sysconf("SC_PHYS_PAGES"))
    except (ValueError, OSError, AttributeError):
        return None


@dataclass(frozen=True)
class HardwareBudget:
    fast_tier_bytes: int
    bulk_tier_bytes: int
    storage_path: str | None = None

    def __post_init__(self):
        if self.fast_tier_bytes < 0 or self.bulk_tier_bytes < 0:
            raise ConfigError("budgets must be >= 0")


@dataclass(frozen=True)
class DataFootprint:
    train_rows: int
    feature_dim: int
    num_hops: int
    num_operators: int = 1
    dtype_bytes: int = 4

    @property
    def expansion(self) -> int:
        return self.num_operators * (self.num_hops + 1)

    @property
    def total_bytes(self) -> int:
        return self.train_rows * self.feature_dim * self.dtype_bytes * self.expansion


def estimate_footprint(train_rows, feature_dim, num_hops, num_operators=1, dtype_bytes=4) -> DataFootprint:
    """Bytes of training input after pre-propagation: raw size times K(R+1)."""
    if min(train_rows, feature_dim, num_hops, num_operators, dtype_bytes) < 0:
        raise ConfigError("footprint inputs must be >= 0")
    return DataFootprint(int(train_rows), int(feature_dim), int(num_hops),
                         int(num_operators), int(dtype_bytes))


@dataclass(frozen=True)
class MemoryProbe:
    peak_bytes: int
    batch_bytes: int = 0


@dataclass(frozen=True)
class PlacementPlan:
    tier: TierKind
    method: Method
    rationale: str

    def __post_init__(self):
        if self.tier is TierKind.STORAGE and self.method is not Method.CR:
            raise ConfigError("storage placement requires chunk reshuffling")

    def to_dict(self) -> dict:
        return {"tier": self.tier.value, "method": self.method.value, "rationale": self.rationale}


def probe_peak_memory(config, data, batches: int = 3) -> MemoryProbe:
    """Measure the fast-tier working set of a short storage-tier CR run.

    Runs ``batches`` optimizer steps through the double-buffered storage
    loader with the byte counter enabled.
    """
    from .trainer import train_run

    if data.stores is None:
        raise ConfigError("memory probe needs preprocessed hop files on storage")
    probe_cfg = dataclasses.replace(
        config, tier=TierKind.STORAGE.value, method=Method.CR.value,
        chunk_rows=config.chunk_rows or config.batch_size, prefetch=True,
        epochs=max(1, batches), eval_every=10**9, log=None,
        inject_assemble_us=0.0, inject_transfer_us=0.0, inject_compute_us=0.0,
    )
    if probe_cfg.chunk_rows > probe_cfg.batch_size:
        probe_cfg = dataclasses.replace(probe_cfg, chunk_rows=probe_cfg.batch_size)
    with memtrack.tracking() as tracker:
        train_run(probe_cfg, data, steps_limit=batches)
    rows = min(config.batch_size, data.n_train)
    batch_bytes = rows * data.feature_dim * 4 * (config.hops + 1)
    return MemoryProbe(tracker.peak, batch_bytes)


def plan(budget: HardwareBudget, footprint, probe=0, method_override=None) -> PlacementPlan:
    """Choose (tier, method); pure function of its inputs."""
    fp = footprint.total_bytes if isinstance(footprint, DataFootprint) else int(footprint)
    peak = probe.peak_bytes if isinstance(probe, MemoryProbe) else int(probe)
    override = None if method_override is None else Method(str(method_override).upper())

    if (fp + peak) * HEADROOM <= budget.fast_tier_bytes:
        method = override or Method.RR
        return PlacementPlan(
            TierKind.RESIDENT, method,
            f"data ({fp} B) + working set ({peak} B) fit fast tier ({budget.fast_tier_bytes} B); "
            "batch assembly is cheap there, so row-level reshuffling is kept",
        )
    if fp * HEADROOM <= budget.bulk_tier_bytes:
        method = override or Method.RR
        why = "user override" if override else "default avoids pinning the whole input"
        return PlacementPlan(
            TierKind.STAGED, method,
            f"data ({fp} B) exceeds fast tier but fits bulk tier ({budget.bulk_tier_bytes} B); "
            f"{method.value} ({why})",
        )
    if override is Method.RR:
        raise ConfigError("data only fits on storage, where RR is not supported; use CR")
    return PlacementPlan(
        TierKind.STORAGE, Method.CR,
        f"data ({fp} B) exceeds bulk tier ({budget.bulk_tier_bytes} B); "
        "reading chunks directly from storage",
    )
