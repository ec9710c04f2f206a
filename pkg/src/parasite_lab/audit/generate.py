"""Synthetic corpora with prescribed statistics.

Every target is a fraction of some population (all sites, HTTPS sites, CSP
sites, ...). A fraction is representable when it times the population size
is an integer; otherwise generation fails with the nearest representable
value, unless rounding is allowed.

All randomness comes from ``random.Random(seed)``.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field

from .corpus import Corpus, SiteSnapshot, WebObjectRecord

_EPS = 1e-9


class UnrepresentableError(ValueError):
    def __init__(self, what: str, fraction: float, population: int):
        self.what = what
        self.fraction = fraction
        self.population = population
        self.nearest = round(fraction * population) / population if population else 0.0
        super().__init__(
            f"{what}={fraction} is not representable over {population} sites; "
            f"nearest representable value is {self.nearest:.6g} "
            f"({round(fraction * population)}/{population})")


@dataclass
class CorpusTargets:
    sites: int = 100
    days: int = 10
    name_persistency: dict[int, float] = field(default_factory=dict)
    content_persistency: dict[int, float] = field(default_factory=dict)
    no_https: float = 0.0
    vulnerable_ssl: float = 0.0  # of all sites; drawn from HTTPS sites
    no_hsts: float = 1.0  # of all sites; HSTS goes to HTTPS sites only
    preload: float = 0.0  # of all sites; drawn from HSTS sites
    csp_presence: float = 0.0
    csp_deprecated: float = 0.0  # of CSP sites, alternating X-CSP / X-Webkit-CSP
    connect_src: float = 0.0  # of CSP sites
    connect_src_wildcard: float = 0.0  # of connect-src users

    @classmethod
    def from_dict(cls, d: dict) -> CorpusTargets:
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown target fields {sorted(unknown)}")
        d = dict(d)
        for key in ("name_persistency", "content_persistency"):
            if key in d:
                d[key] = {int(w): float(f) for w, f in d[key].items()}
        return cls(**d)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        for key in ("name_persistency", "content_persistency"):
            d[key] = {str(w): f for w, f in sorted(d[key].items())}
        return d


def count_for(what: str, fraction: float, population: int, allow_rounding: bool = False) -> int:
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"{what} must be within [0, 1], got {fraction}")
    exact = fraction * population
    n = round(exact)
    if abs(exact - n) > _EPS * max(1, population) and not allow_rounding:
        raise UnrepresentableError(what, fraction, population)
    return n


def _bucket_runs(rng: random.Random, counts: dict[int, int], n: int, days: int,
                 what: str) -> list[int]:
    """Run lengths, one per site (sorted descending), hitting ``counts`` exactly.

    ``counts[w]`` sites get a run of at least ``w`` days.
    """
    windows = sorted(counts)
    for a, b in zip(windows, windows[1:]):
        if counts[b] > counts[a]:
            raise ValueError(f"{what}: {b}-day count {counts[b]} exceeds {a}-day count {counts[a]}")
    runs: list[int] = []
    bounds = windows + [days + 1]
    for i in range(len(windows) - 1, -1, -1):
        lo, hi = bounds[i], bounds[i + 1] - 1
        upper = counts[windows[i + 1]] if i + 1 < len(windows) else 0
        runs += [rng.randint(lo, hi) for _ in range(counts[windows[i]] - upper)]
    lo_first = windows[0] if windows else days + 1
    runs += [rng.randint(0, lo_first - 1) for _ in range(n - len(runs))]
    return sorted(runs, reverse=True)


def _h(site: str, name: str, version: int) -> str:
    return hashlib.sha256(f"{site}:{name}:{version}".encode()).hexdigest()


def generate_corpus(t: CorpusTargets, seed: int = 0, allow_rounding: bool = False) -> tuple[Corpus, list[str]]:
    """Build a corpus and the matching preload host list."""
    if t.sites < 1 or t.days < 1:
        raise ValueError("need at least one site and one day")
    for w in list(t.name_persistency) + list(t.content_persistency):
        if not 1 <= w <= t.days:
            raise ValueError(f"window {w} outside 1..{t.days} days")
    rng = random.Random(seed)
    n = t.sites
    sites = [f"site{i:05d}.test" for i in range(n)]

    name_counts = {w: count_for(f"name_persistency[{w}]", f, n, allow_rounding)
                   for w, f in t.name_persistency.items()}
    content_counts = {w: count_for(f"content_persistency[{w}]", f, n, allow_rounding)
                      for w, f in t.content_persistency.items()}
    name_runs = _bucket_runs(rng, name_counts, n, t.days, "name_persistency")
    if content_counts:
        wanted = _bucket_runs(rng, content_counts, n, t.days, "content_persistency")
        content_runs = []
        for w, r in zip(wanted, name_runs):
            if w > r:
                raise ValueError("content persistency cannot exceed name persistency")
            content_runs.append(max(w, min(r, 1)))  # day 0 always matches itself
    else:
        content_runs = list(name_runs)
    order = list(range(n))
    rng.shuffle(order)
    runs = {sites[order[i]]: (name_runs[i], content_runs[i]) for i in range(n)}

    http_n = count_for("no_https", t.no_https, n, allow_rounding)
    http_sites = set(rng.sample(sites, http_n))
    https_sites = [s for s in sites if s not in http_sites]
    vuln = set(rng.sample(https_sites, _limited("vulnerable_ssl", t.vulnerable_ssl, n, len(https_sites),
                                                allow_rounding)))
    hsts_n = n - count_for("no_hsts", t.no_hsts, n, allow_rounding)
    if hsts_n > len(https_sites):
        raise ValueError(f"{hsts_n} HSTS sites requested but only {len(https_sites)} use HTTPS")
    hsts = rng.sample(https_sites, hsts_n)
    preload = sorted(rng.sample(hsts, _limited("preload", t.preload, n, len(hsts), allow_rounding)))

    csp_n = count_for("csp_presence", t.csp_presence, n, allow_rounding)
    csp_sites = rng.sample(sites, csp_n)
    dep_n = count_for("csp_deprecated", t.csp_deprecated, csp_n, allow_rounding) if csp_n else 0
    conn_n = count_for("connect_src", t.connect_src, csp_n, allow_rounding) if csp_n else 0
    wild_n = count_for("connect_src_wildcard", t.connect_src_wildcard, conn_n, allow_rounding) if conn_n else 0
    conn_sites = rng.sample(csp_sites, conn_n)
    wild_sites = set(rng.sample(conn_sites, wild_n))
    dep_sites = rng.sample(csp_sites, dep_n)
    variant = {s: "Content-Security-Policy" for s in csp_sites}
    for i, s in enumerate(sorted(dep_sites)):
        variant[s] = "X-Content-Security-Policy" if i % 2 == 0 else "X-Webkit-CSP"

    hsts_set = set(hsts)
    conn_set = set(conn_sites)
    corpus = Corpus()
    for site in sites:
        headers = [("Content-Type", "text/html; charset=utf-8")]
        if site in hsts_set:
            headers.append(("Strict-Transport-Security", "max-age=31536000; includeSubDomains"))
        if site in variant:
            policy = "default-src 'self'"
            if site in conn_set:
                policy += "; connect-src *" if site in wild_sites else "; connect-src 'self' api." + site
            headers.append((variant[site], policy))
        scheme = "http" if site in http_sites else "https"
        ssl = None if scheme == "http" else ("SSL3.0" if site in vuln else "TLS1.3")
        name_run, content_run = runs[site]
        for day in range(t.days):
            corpus.add(SiteSnapshot(site, day, scheme, ssl, list(headers),
                                    _objects(site, day, name_run, content_run)))
    return corpus, preload


def _limited(what: str, fraction: float, n: int, pool: int, allow_rounding: bool) -> int:
    k = count_for(what, fraction, n, allow_rounding)
    if k > pool:
        raise ValueError(f"{what}: {k} sites requested but only {pool} eligible")
    return k


def _objects(site: str, day: int, name_run: int, content_run: int) -> list[WebObjectRecord]:
    objs = [WebObjectRecord("/", _h(site, "/", day), "html"),
            WebObjectRecord("", _h(site, "inline", day), "js"),
            WebObjectRecord("/logo.png", _h(site, "/logo.png", 0), "other")]
    if name_run == 0 and day == 0:
        return objs
    if day < name_run:
        version = 0 if day < content_run else day
        objs.append(WebObjectRecord("/static/app.js", _h(site, "/static/app.js", version), "js"))
    else:
        objs.append(WebObjectRecord(f"/static/app.{day}.js", _h(site, "/static/app.js", day), "js"))
    if day > 0:
        objs.append(WebObjectRecord(f"/js/chunk-{day}.js", _h(site, "chunk", day), "js"))
    return objs
