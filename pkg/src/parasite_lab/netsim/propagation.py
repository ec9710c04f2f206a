"""Spreading an existing infection: shared scripts, iframes and shared network caches.

Each operation drives an existing :class:`Simulation` further in time and
reads the outcome back from the events it produced.
"""

from __future__ import annotations

from ..http_core import Url
from .engine import Simulation
from .events import EventKind


def _first_client(sim: Simulation, client: str | None) -> str:
    if client is not None:
        return client
    return sim.scenario.clients[0]


def _events_since(sim: Simulation, mark: int, kind: EventKind):
    return [e for e in sim.events[mark:] if e.kind is kind]


def _page_embedding(sim: Simulation, site: str, shared: Url) -> Url:
    """The first page of ``site`` that embeds ``shared``, else the site root."""
    s = sim.scenario.sites.get(site)
    scheme = s.scheme if s else "http"
    if s is not None:
        for path in sorted(s.objects):
            obj = s.objects[path]
            if obj.content_type == "text/html" and (str(shared) in obj.body.decode("latin-1")
                                                    or shared.display in obj.body.decode("latin-1")):
                return obj.url
    return Url(scheme, site, "/")


def propagate_shared_script(sim: Simulation, shared_url: Url | str, sites, client: str | None = None) -> set[str]:
    """Visit each site and return those where the cached shared script dispatched.

    The injector is suspended for these visits so only the cached copy can
    carry the infection.
    """
    cid = _first_client(sim, client)
    shared = Url.parse(shared_url)
    mark = len(sim.events)
    sim._suspended = True
    try:
        for site in sorted(sites):
            sim.visit(cid, _page_embedding(sim, site, shared))
            sim.run()
    finally:
        sim._suspended = False
    fired = set()
    for e in _events_since(sim, mark, EventKind.ATTACK_DISPATCH):
        if e.node == cid and e.detail["script"] == shared.display:
            fired.add(Url.parse(e.detail["page"]).host)
    return fired


def propagate_iframes(sim: Simulation, source_site: str, targets, client: str | None = None) -> list[str]:
    """Frame each target from ``source_site``; return cache keys newly infected."""
    cid = _first_client(sim, client)
    cache = sim.browsers[cid]
    before = {e.key for e in cache.entries() if e.infected}
    for target in targets:
        sim.load_frame(cid, Url.parse(target), source_site)
        sim.run()
    after = [e.key for e in cache.entries() if e.infected and e.key not in before]
    return sorted(set(after))


def propagate_shared_cache(sim: Simulation, cache_node: str, victims, url: Url | str) -> list[str]:
    """Let each victim fetch ``url`` and return those served an infected copy by ``cache_node``."""
    url = Url.parse(url)
    node = sim.scenario.nodes[cache_node]
    if not node.permits(url.scheme):
        sim.emit(EventKind.NOTE, cache_node, what="no_shared_caching", scheme=url.scheme,
                 cache_class=node.cache_class.name if node.cache_class else None,
                 instance=node.cache_class.instance if node.cache_class else None)
        return []
    affected = []
    for victim in victims:
        mark = len(sim.events)
        sim.visit(victim, url)
        sim.run()
        hits = {e.seq for e in _events_since(sim, mark, EventKind.CACHE_HIT)
                if e.node == cache_node and e.detail["infected"]}
        if any(e.node == victim and e.detail.get("cause") in hits
               for e in _events_since(sim, mark, EventKind.INFECT)):
            affected.append(victim)
    return affected
