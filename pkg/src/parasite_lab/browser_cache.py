"""Browser HTTP cache and Cache-API store with per-profile behaviour.

Eviction is strict LRU over ``http_cache`` entries. Cache-API entries live in
their own store: they never expire, never count against the HTTP cache
capacity and are only removed by the clearing actions the profile names.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum

from .http_core import FreshnessInfo, HttpMessage, Url, parse_freshness

KiB = 1024
MiB = 1024 * KiB
MB = 1000 * 1000


class Store(str, Enum):
    HTTP_CACHE = "http_cache"
    CACHEAPI = "cacheapi"


class ClearAction(str, Enum):
    CLEAR_CACHE = "clear_cache"
    CLEAR_COOKIES = "clear_cookies"
    HARD_REFRESH = "hard_refresh"


class CacheError(Exception):
    pass


class OversizeError(CacheError):
    pass


class UnsupportedProfileError(CacheError):
    pass


@dataclass(frozen=True)
class BrowserProfile:
    name: str
    capacity: int
    inter_domain_shared: bool = True
    eviction_supported: bool = True
    partitioned: bool = False
    cacheapi_cleared_by: frozenset[ClearAction] = frozenset({ClearAction.CLEAR_COOKIES})
    cache_api: bool = True

    def __post_init__(self):
        if self.eviction_supported and self.capacity <= 0:
            raise ValueError(f"profile {self.name}: capacity must be positive")
        object.__setattr__(
            self, "cacheapi_cleared_by", frozenset(ClearAction(a) for a in self.cacheapi_cleared_by))

    @classmethod
    def from_dict(cls, d: dict) -> BrowserProfile:
        return cls(
            name=d["name"],
            capacity=int(d["capacity"]),
            inter_domain_shared=bool(d.get("inter_domain_shared", True)),
            eviction_supported=bool(d.get("eviction_supported", True)),
            partitioned=bool(d.get("partitioned", False)),
            cacheapi_cleared_by=frozenset(d.get("cacheapi_cleared_by", ["clear_cookies"])),
            cache_api=bool(d.get("cache_api", True)),
        )


# Sizes from the browser eviction survey; Chromium-derived browsers share 320 MiB.
BUILTIN_PROFILES: dict[str, BrowserProfile] = {
    p.name: p
    for p in (
        BrowserProfile("chrome", 320 * MiB),
        BrowserProfile("chrome-incognito", 320 * MiB),
        BrowserProfile("edge", 320 * MiB),
        BrowserProfile("firefox", 256 * MB),
        BrowserProfile("opera", 320 * MiB),
        BrowserProfile("ie-unbounded", 330 * MB, inter_domain_shared=False,
                       eviction_supported=False, cacheapi_cleared_by=frozenset(), cache_api=False),
        BrowserProfile("chrome-partitioned", 320 * MiB, partitioned=True),
    )
}


def get_profile(name: str) -> BrowserProfile:
    try:
        return BUILTIN_PROFILES[name]
    except KeyError:
        raise KeyError(f"unknown browser profile {name!r}; known: {sorted(BUILTIN_PROFILES)}") from None


@dataclass
class CacheEntry:
    key: str
    response: HttpMessage
    stored_at: int
    freshness: FreshnessInfo
    infected: bool = False
    store: Store = Store.HTTP_CACHE
    partition: str = ""

    @property
    def size(self) -> int:
        return self.response.body_size

    def is_fresh(self, now: int) -> bool:
        if self.store is Store.CACHEAPI:
            return True
        return self.freshness.is_fresh(self.stored_at, now)


def make_entry(response: HttpMessage, now: int, *, infected: bool = False,
               store: Store = Store.HTTP_CACHE) -> CacheEntry:
    return CacheEntry(response.url.key, response, now, parse_freshness(response, now),
                      infected, Store(store))


@dataclass(frozen=True)
class LookupResult:
    status: str  # "fresh", "stale" or "miss"
    entry: CacheEntry | None = None

    @property
    def hit(self) -> bool:
        return self.entry is not None


MISS = LookupResult("miss")


@dataclass
class _Partition:
    http: OrderedDict = field(default_factory=OrderedDict)
    cacheapi: OrderedDict = field(default_factory=OrderedDict)
    http_bytes: int = 0
    cacheapi_bytes: int = 0


class BrowserCache:
    """Cache instance owned by a single simulated browser (or shared proxy).

    With a partitioned profile every top-level site gets its own partition,
    including its own capacity budget, so nothing done under one site is
    observable under another.
    """

    def __init__(self, profile: BrowserProfile):
        self.profile = profile
        self._parts: dict[str, _Partition] = {}

    def _partition_name(self, top_site: str | None) -> str:
        if not self.profile.partitioned:
            return ""
        if not top_site:
            raise CacheError("partitioned cache needs a top-level site")
        return top_site

    def _part(self, top_site: str | None, create: bool = False) -> _Partition | None:
        name = self._partition_name(top_site)
        part = self._parts.get(name)
        if part is None and create:
            part = self._parts[name] = _Partition()
        return part

    @property
    def http_bytes(self) -> int:
        return sum(p.http_bytes for p in self._parts.values())

    @property
    def cacheapi_bytes(self) -> int:
        return sum(p.cacheapi_bytes for p in self._parts.values())

    @property
    def total_bytes(self) -> int:
        return self.http_bytes + self.cacheapi_bytes

    def entries(self, store: Store | None = None) -> list[CacheEntry]:
        out = []
        for part in self._parts.values():
            if store in (None, Store.HTTP_CACHE):
                out.extend(part.http.values())
            if store in (None, Store.CACHEAPI):
                out.extend(part.cacheapi.values())
        return out

    def keys(self, top_site: str | None = None, store: Store = Store.HTTP_CACHE) -> list[str]:
        """Keys of one partition in LRU order (least recent first)."""
        part = self._part(top_site)
        if part is None:
            return []
        return list((part.http if store is Store.HTTP_CACHE else part.cacheapi).keys())

    def put(self, entry: CacheEntry, top_site: str | None = None) -> list[CacheEntry]:
        """Store ``entry`` and return the entries evicted to make room, oldest first."""
        if entry.freshness.no_store:
            raise CacheError(f"{entry.key}: no-store responses cannot be cached")
        entry.partition = self._partition_name(top_site)
        part = self._part(top_site, create=True)
        if entry.store is Store.CACHEAPI:
            if not self.profile.cache_api:
                raise UnsupportedProfileError(f"{self.profile.name} has no Cache API")
            old = part.cacheapi.pop(entry.key, None)
            if old is not None:
                part.cacheapi_bytes -= old.size
            part.cacheapi[entry.key] = entry
            part.cacheapi_bytes += entry.size
            return []

        bounded = self.profile.eviction_supported
        if bounded and entry.size > self.profile.capacity:
            raise OversizeError(
                f"{entry.key}: {entry.size} bytes exceeds capacity {self.profile.capacity}")
        old = part.http.pop(entry.key, None)
        if old is not None:
            part.http_bytes -= old.size
        part.http[entry.key] = entry
        part.http_bytes += entry.size
        evicted = []
        if bounded:
            while part.http_bytes > self.profile.capacity:
                _, victim = part.http.popitem(last=False)
                part.http_bytes -= victim.size
                evicted.append(victim)
        return evicted

    def store_response(self, response: HttpMessage, now: int, top_site: str | None = None, *,
                       infected: bool = False, store: Store = Store.HTTP_CACHE) -> list[CacheEntry]:
        return self.put(make_entry(response, now, infected=infected, store=store), top_site)

    def peek(self, url: Url | str, top_site: str | None = None,
             store: Store = Store.HTTP_CACHE) -> CacheEntry | None:
        """Entry for ``url`` without touching recency."""
        part = self._part(top_site)
        if part is None:
            return None
        return (part.http if store is Store.HTTP_CACHE else part.cacheapi).get(Url.parse(url).key)

    def lookup(self, url: Url | str, now: int, top_site: str | None = None) -> LookupResult:
        """Cache-API store first (it sits in front of the network), then the HTTP cache."""
        part = self._part(top_site)
        if part is None:
            return MISS
        key = Url.parse(url).key
        if key in part.cacheapi:
            part.cacheapi.move_to_end(key)
            return LookupResult("fresh", part.cacheapi[key])
        entry = part.http.get(key)
        if entry is None:
            return MISS
        part.http.move_to_end(key)
        return LookupResult("fresh" if entry.is_fresh(now) else "stale", entry)

    def refresh(self, url: Url | str, now: int, top_site: str | None = None,
                response: HttpMessage | None = None) -> CacheEntry | None:
        """Apply a 304 revalidation: restart the entry's freshness clock."""
        entry = self.peek(url, top_site)
        if entry is None:
            return None
        entry.stored_at = now
        if response is not None and (response.has("Cache-Control") or response.has("Expires")):
            entry.freshness = parse_freshness(response, now)
        return entry

    def remove(self, url: Url | str, top_site: str | None = None,
               store: Store = Store.HTTP_CACHE) -> CacheEntry | None:
        part = self._part(top_site)
        if part is None:
            return None
        key = Url.parse(url).key
        if store is Store.HTTP_CACHE:
            entry = part.http.pop(key, None)
            if entry is not None:
                part.http_bytes -= entry.size
        else:
            entry = part.cacheapi.pop(key, None)
            if entry is not None:
                part.cacheapi_bytes -= entry.size
        return entry

    def clear(self, action: ClearAction | str) -> list[CacheEntry]:
        action = ClearAction(action)
        removed: list[CacheEntry] = []
        for part in self._parts.values():
            if action is ClearAction.CLEAR_CACHE:
                removed.extend(part.http.values())
                part.http.clear()
                part.http_bytes = 0
            if action in self.profile.cacheapi_cleared_by:
                removed.extend(part.cacheapi.values())
                part.cacheapi.clear()
                part.cacheapi_bytes = 0
        return removed

    def junk_count(self, junk_size: int) -> int:
        """Number of junk objects the fill-to-capacity policy inserts."""
        return math.ceil(self.profile.capacity / junk_size)

    def evict_all_via_junk(self, junk_size: int, junk_url_prefix: str = "attacker.com/junk",
                           now: int = 0, top_site: str | None = None) -> int:
        """Insert junk objects until every pre-existing HTTP entry is gone.

        Insertion continues until both all pre-existing entries have been
        evicted and the junk bytes reach capacity. Returns the number of
        junk objects inserted.
        """
        if not self.profile.eviction_supported:
            raise UnsupportedProfileError(f"{self.profile.name} grows without bound; eviction impossible")
        if not 0 < junk_size <= self.profile.capacity:
            raise ValueError("junk_size must be in (0, capacity]")
        remaining = set(self.keys(top_site))
        count = inserted = 0
        while remaining or inserted < self.profile.capacity:
            count += 1
            resp = junk_response(f"{junk_url_prefix}{count:02d}.jpg", junk_size)
            for victim in self.store_response(resp, now, top_site):
                remaining.discard(victim.key)
            inserted += junk_size
        return count


def junk_response(url: Url | str, size: int) -> HttpMessage:
    return HttpMessage.response(
        200, url,
        [("Content-Type", "image/jpeg"), ("Content-Length", str(size)),
         ("Cache-Control", "max-age=31536000")],
        bytes(size))
