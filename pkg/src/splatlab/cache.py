"""Set-associative pixel-value cache keyed by significant-Gaussian ID prefixes.

A pixel's key is the IDs of the first k significant Gaussians along its walk,
in discovery order. The set index concatenates the low bits of each ID (first
ID most significant); the tag concatenates a 16-bit field of each ID starting
at bit 3. Bit 2 of every ID falls in neither field, so IDs differing only in
bit 2 alias to the same entry; that is the modeled layout, kept as is.

Values are stored as 8-bit RGB. Replacement is tree pseudo-LRU with ways-1
state bits per set. One cache instance serves one tile group; a group manager
keeps every group's instance resident and counts swap events.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CacheConfig:
    k: int = 5
    ways: int = 4
    sets: int = 1024
    index_bits_per_id: int = 2
    tag_low_bit: int = 3
    tag_bits_per_id: int = 16
    group_tiles: tuple[int, int] = (4, 4)  # tiles sharing one cache instance

    def __post_init__(self):
        if self.ways < 1 or self.ways & (self.ways - 1):
            raise ValueError(f"ways must be a power of two, got {self.ways}")
        if self.sets != 1 << (self.k * self.index_bits_per_id):
            raise ValueError(
                f"sets ({self.sets}) must equal 2^(k*index_bits_per_id) "
                f"= {1 << (self.k * self.index_bits_per_id)}"
            )

    @property
    def size_bytes(self) -> int:
        """Modeled storage: per entry, k tag fields plus 3 value bytes."""
        tag_bytes = self.k * self.tag_bits_per_id // 8
        return self.ways * self.sets * (tag_bytes + 3)


@dataclass(frozen=True)
class CacheKey:
    set_index: int
    tag: int


def make_key(ids, config: CacheConfig) -> CacheKey:
    """Build (set index, tag) from k Gaussian IDs in discovery order."""
    if len(ids) != config.k:
        raise ValueError(f"expected {config.k} ids, got {len(ids)}")
    idx_mask = (1 << config.index_bits_per_id) - 1
    tag_mask = (1 << config.tag_bits_per_id) - 1
    set_index = 0
    tag = 0
    for gid in ids:
        gid = int(gid)
        set_index = (set_index << config.index_bits_per_id) | (gid & idx_mask)
        tag = (tag << config.tag_bits_per_id) | ((gid >> config.tag_low_bit) & tag_mask)
    return CacheKey(set_index, tag)


class PixelCache:
    """One set-associative cache instance with exact hit/miss/evict counters."""

    def __init__(self, config: CacheConfig | None = None):
        self.config = config or CacheConfig()
        c = self.config
        self._tags: list[list[int | None]] = [[None] * c.ways for _ in range(c.sets)]
        self._values = np.zeros((c.sets, c.ways, 3), dtype=np.uint8)
        self._plru = np.zeros((c.sets, max(c.ways - 1, 1)), dtype=np.int8)
        self.lookups = 0
        self.hits = 0
        self.misses = 0
        self.inserts = 0
        self.evictions = 0

    def _touch(self, s: int, way: int) -> None:
        ways = self.config.ways
        if ways == 1:
            return
        node = 1
        level_bit = ways >> 1
        tree = self._plru[s]
        while node < ways:
            d = 1 if way & level_bit else 0
            tree[node - 1] = 1 - d  # point toward the other half
            node = 2 * node + d
            level_bit >>= 1

    def _victim(self, s: int) -> int:
        ways = self.config.ways
        if ways == 1:
            return 0
        node = 1
        tree = self._plru[s]
        while node < ways:
            node = 2 * node + int(tree[node - 1])
        return node - ways

    def _find(self, key: CacheKey) -> int | None:
        row = self._tags[key.set_index]
        for w in range(self.config.ways):
            if row[w] == key.tag:
                return w
        return None

    def lookup(self, key: CacheKey) -> np.ndarray | None:
        """Return the stored uint8 RGB on hit (updating recency), else None."""
        self.lookups += 1
        w = self._find(key)
        if w is None:
            self.misses += 1
            return None
        self.hits += 1
        self._touch(key.set_index, w)
        return self._values[key.set_index, w].copy()

    def insert(self, key: CacheKey, rgb_u8) -> None:
        """Store a display-precision value, evicting the PLRU victim if needed."""
        s = key.set_index
        row = self._tags[s]
        w = self._find(key)
        if w is None:
            try:
                w = row.index(None)
            except ValueError:
                w = self._victim(s)
                self.evictions += 1
        row[w] = key.tag
        self._values[s, w] = np.asarray(rgb_u8, dtype=np.uint8)
        self._touch(s, w)
        self.inserts += 1

    def counters(self) -> dict:
        return {
            "lookups": self.lookups, "hits": self.hits, "misses": self.misses,
            "inserts": self.inserts, "evictions": self.evictions,
        }


class AlwaysMissCache(PixelCache):
    """Diagnostic variant: every lookup misses, inserts proceed normally."""

    def lookup(self, key: CacheKey) -> None:
        self.lookups += 1
        self.misses += 1
        return None


class CacheGroupManager:
    """Keeps one persistent PixelCache per tile group and counts swaps.

    The hardware analogue saves, flushes, and reloads the physical cache when
    the active tile group changes; the software model keeps all group caches
    resident and records each acquire as one swap event (the traffic cost is
    charged by the hardware model, not here).
    """

    def __init__(self, config: CacheConfig | None = None, always_miss: bool = False):
        self.config = config or CacheConfig()
        self.always_miss = always_miss
        self._caches: dict[tuple, PixelCache] = {}
        self.swaps = 0
        self._swap_counts: dict[tuple, int] = {}

    def acquire(self, group_id) -> PixelCache:
        group_id = tuple(group_id)
        cache = self._caches.get(group_id)
        if cache is None:
            cls = AlwaysMissCache if self.always_miss else PixelCache
            cache = cls(self.config)
            self._caches[group_id] = cache
        self.swaps += 1
        self._swap_counts[group_id] = self._swap_counts.get(group_id, 0) + 1
        return cache

    def group_ids(self) -> list[tuple]:
        return sorted(self._caches.keys())

    def counters(self) -> list[dict]:
        rows = []
        for gid in self.group_ids():
            row = {"group_id": f"{gid[0]}_{gid[1]}", "swaps": self._swap_counts[gid]}
            row.update(self._caches[gid].counters())
            rows.append(row)
        return rows
