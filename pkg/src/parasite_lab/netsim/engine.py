"""Discrete-event engine: browsers, shared caches, origins and the on-path injector.

Every HTTP exchange is one TCP connection between a requester and the first
node able to answer (a shared cache that stores the scheme, else the origin).
The genuine response and any forged one travel as segment bursts and meet in
the requester's receive buffer, where the first bytes at each offset win.

Browsers "execute" nothing. A script or page whose body carries a payload
marker makes the simulator perform the actions that script would trigger.
"""

from __future__ import annotations

import heapq
import itertools
import math
import random
import re
from dataclasses import dataclass, field
from typing import Callable

import networkx as nx

from .. import c2_codec
from ..browser_cache import BrowserCache, BrowserProfile, CacheError, Store, junk_response
from ..http_core import HttpMessage, Url, head_length, parse_freshness, parse_message, \
    strip_conditional_headers
from ..parasite import CacheBuster, ParasitePayload, content_kind, dispatch, reload_original, \
    rewrite_response
from ..tcp_inject import ConnState, TcpSegment, Verdict, observe, split_payload
from .events import EventKind, SimEvent
from .scenario import Action, Scenario, Site, _embeds_of

EPHEMERAL_START = 49152
_EVICT_MARK = re.compile(rb"/\*pst-evict:(\d+):(\d+):([^*]+)\*/")
_C2_PATH = re.compile(r"^/c2/(\d+)/(\d+)\.svg$")


@dataclass(frozen=True)
class Delivery:
    """How a response reached the browser and whether it is attacker content."""

    infected: bool = False
    cause: int | None = None
    source: str = "network"  # "network" or "cache"


@dataclass
class _Conn:
    requester: str
    responder: str
    url: Url
    state: ConnState
    on_response: Callable
    done: bool = False
    first_writer: str | None = None
    taint: int | None = None  # inject event whose bytes were delivered first
    taint_from_cache: Delivery | None = None


@dataclass
class _ClientState:
    propagated: bool = False
    c2_frames: int = 0
    runs: int = 0


@dataclass
class Simulation:
    scenario: Scenario
    seed: int | None = None
    events: list[SimEvent] = field(default_factory=list)

    def __post_init__(self):
        sc = self.scenario
        if self.seed is None:
            self.seed = sc.seed
        self.rng = random.Random(self.seed)
        self.now = 0
        self._queue: list = []
        self._tick = itertools.count()
        self._ports = itertools.count(EPHEMERAL_START)
        self.buster = CacheBuster(sc.cache_buster_start)
        self.attacker_active = True
        self._suspended = False
        self.browsers = {cid: BrowserCache(sc.nodes[cid].profile) for cid in sc.clients}
        self.client_state = {cid: _ClientState() for cid in sc.clients}
        self.shared = {
            n.id: BrowserCache(BrowserProfile(n.cache_class.instance or n.id, n.capacity, cache_api=False))
            for n in sc.nodes.values() if n.kind == "shared_cache"}
        self._route_graph = sc.graph(include_attacker=False)
        self._full_graph = sc.graph()
        self._paths: dict[tuple[str, str], list[str]] = {}
        self.c2_inbox: dict[str, list[str]] = {}

    # plumbing

    def at(self, time: int, fn: Callable, *args) -> None:
        heapq.heappush(self._queue, (time, next(self._tick), fn, args))

    def emit(self, kind: EventKind | str, node: str, **detail) -> int:
        seq = len(self.events)
        self.events.append(SimEvent(seq, self.now, EventKind(kind), node, detail))
        return seq

    def run(self, until: int | None = None) -> list[SimEvent]:
        while self._queue and (until is None or self._queue[0][0] <= until):
            time, _, fn, args = heapq.heappop(self._queue)
            self.now = max(self.now, time)
            fn(*args)
        return self.events

    def path(self, a: str, b: str) -> list[str]:
        key = (a, b)
        if key not in self._paths:
            self._paths[key] = nx.dijkstra_path(self._route_graph, a, b, weight="latency")
        return self._paths[key]

    def _latency(self, a: str, b: str) -> int:
        return self._full_graph.edges[a, b]["latency"]

    @property
    def injecting(self) -> bool:
        return self.attacker_active and not self._suspended

    # scenario driving

    def schedule(self, actions: list[Action]) -> None:
        for act in actions:
            self.at(act.at, self._do_action, act)

    def _do_action(self, act: Action) -> None:
        if act.action == "visit":
            self.visit(act.client, act.url)
        elif act.action == "clear":
            self.clear(act.client, act.mode)
        elif act.action == "attacker_leave":
            self.attacker_active = False
            self.emit(EventKind.NOTE, "scenario", what="attacker_leave", attacker=self.scenario.attacker.id)

    def visit(self, cid: str, url: Url | str, top: str | None = None, in_frame: bool = False) -> None:
        url = Url.parse(url)
        top = top or url.host
        self.fetch(cid, url, top, lambda resp, d: self._on_page(cid, url, resp, d, top, in_frame),
                   initiator="frame" if in_frame else "navigation")

    def clear(self, cid: str, mode: str) -> None:
        removed = self.browsers[cid].clear(mode)
        self.emit(EventKind.CLEAR, cid, mode=mode, removed=len(removed),
                  infected_removed=sum(e.infected for e in removed))

    # browser side

    def fetch(self, cid: str, url: Url, top: str, on_done: Callable, initiator: str = "subresource") -> None:
        cache = self.browsers[cid]
        res = cache.lookup(url, self.now, top)
        if res.status == "fresh":
            e = res.entry
            seq = self.emit(EventKind.CACHE_HIT, cid, url=url.display, store=e.store.value, infected=e.infected)
            on_done(e.response, Delivery(e.infected, seq if e.infected else None, "cache"))
            return
        headers = [("Host", url.host)]
        if res.status == "stale" and res.entry.freshness.etag:
            headers.append(("If-None-Match", res.entry.freshness.etag))
        req = HttpMessage.request("GET", url, headers)
        self.emit(EventKind.FETCH, cid, request=req.request_line, initiator=initiator,
                  conditional=req.has("If-None-Match"))

        def arrived(resp: HttpMessage, d: Delivery) -> None:
            if resp.status == 304:
                entry = cache.refresh(url, self.now, top, resp)
                if entry is None:
                    return
                on_done(entry.response, Delivery(entry.infected, d.cause, "cache"))
                return
            self._store(cid, cache, resp, d, top)
            on_done(resp, d)

        self._send(cid, req, arrived)

    def _store(self, node: str, cache: BrowserCache, resp: HttpMessage, d: Delivery, top: str | None,
               store: Store = Store.HTTP_CACHE) -> None:
        try:
            fresh = parse_freshness(resp, self.now)
        except ValueError:
            return
        if fresh.no_store:
            return
        try:
            evicted = cache.store_response(resp, self.now, top, infected=d.infected, store=store)
        except CacheError:
            return
        for victim in evicted:
            self.emit(EventKind.CACHE_EVICT, node, url=victim.response.url.display, bytes=victim.size,
                      infected=victim.infected)
        if d.infected:
            self.emit(EventKind.INFECT, node, url=resp.url.display, store=store.value, cause=d.cause)

    def _on_page(self, cid: str, url: Url, resp: HttpMessage, d: Delivery, top: str, in_frame: bool) -> None:
        if in_frame and resp.has("X-Frame-Options"):
            self.emit(EventKind.BLOCKED, cid, url=url.display, reason="X-Frame-Options",
                      value=resp.get("X-Frame-Options"))
            return
        if content_kind(resp) != "html":
            self._on_script(cid, url, resp, d, url, top, in_frame)
            return
        m = _EVICT_MARK.search(resp.body)
        if m:
            self._run_eviction(cid, int(m.group(1)), m.group(3).decode(), top)
        payload = self._payload
        if payload is not None and payload.found_in(resp.body):
            self._run_parasite(cid, url, url, top, d, in_frame)
        for src in _embeds_of(resp.body):
            eu = Url.parse(src)
            if content_kind(HttpMessage.response(200, eu)) == "js":
                self.fetch(cid, eu, top,
                           lambda r, dd, eu=eu: self._on_script(cid, eu, r, dd, url, top, in_frame))
            else:
                self.fetch(cid, eu, top, _ignore)

    def _on_script(self, cid: str, script: Url, resp: HttpMessage, d: Delivery, page: Url, top: str,
                   in_frame: bool) -> None:
        payload = self._payload
        if payload is not None and payload.found_in(resp.body):
            self._run_parasite(cid, script, page, top, d, in_frame)

    def _run_eviction(self, cid: str, count: int, prefix: str, top: str) -> None:
        for n in range(1, count + 1):
            self.fetch(cid, Url.parse(f"{prefix}{n:02d}.jpg"), top, _ignore, initiator="evict")

    @property
    def _payload(self) -> ParasitePayload | None:
        cfg = self.scenario.attacker.payload
        return cfg.payload if cfg else None

    def _run_parasite(self, cid: str, script: Url, page: Url, top: str, d: Delivery, in_frame: bool) -> None:
        cfg = self.scenario.attacker.payload
        cache = self.browsers[cid]
        state = self.client_state[cid]
        state.runs += 1
        for module in dispatch(page, cfg.payload.modules):
            self.emit(EventKind.ATTACK_DISPATCH, cid, module=module.id.value, page=page.display,
                      script=script.display, top_site=top, cause=d.cause)
        if script.query == "":
            reload = reload_original(script, self.buster)
            self.fetch(cid, reload.url, top, _ignore, initiator="parasite-reload")
        if cfg.cache_api and cache.profile.cache_api and \
                cache.peek(script, top, Store.CACHEAPI) is None:
            entry = cache.peek(script, top)
            if entry is not None and entry.infected:
                self._store(cid, cache, entry.response, Delivery(True, d.cause, "cache"), top, Store.CACHEAPI)
        if in_frame or state.propagated:
            pass
        else:
            state.propagated = True
            for target in cfg.propagate:
                self.emit(EventKind.PROPAGATE, cid, via="shared-fetch", url=target.display, top_site=top)
                self.fetch(cid, target, top, _ignore, initiator="parasite-propagate")
            for frame in cfg.iframes:
                self.load_frame(cid, frame, top)
        if cfg.c2 is not None and not in_frame:
            self._c2_session(cid, top)

    def load_frame(self, cid: str, url: Url, top: str) -> None:
        self.emit(EventKind.PROPAGATE, cid, via="iframe", url=url.display, top_site=top)
        self.visit(cid, url, top=top, in_frame=True)

    # command channel

    def _c2_session(self, cid: str, top: str) -> None:
        c2 = self.scenario.attacker.payload.c2
        state = self.client_state[cid]
        frame = state.c2_frames
        state.c2_frames += 1
        base = f"http://{c2.host}/c2/{frame}"
        words: dict[int, c2_codec.ImageCodeword] = {}

        def got(index: int, resp: HttpMessage) -> None:
            w, h = c2_codec.measure_svg(resp.body)
            words[index] = c2_codec.ImageCodeword(index, w, h)
            if index == 0:
                total = (w << 16) | h
                need = c2_codec.images_for(total)
                words["need"] = need
                for i in range(1, need):
                    self.fetch(cid, Url.parse(f"{base}/{i}.svg"), top,
                               lambda r, d, i=i: got(i, r), initiator="c2")
            if len(words) - 1 == words.get("need", -1):
                data = c2_codec.decode_downstream([v for k, v in words.items() if k != "need"])
                self.emit(EventKind.C2_TRANSFER, cid, direction="down", frame=frame, bytes=len(data),
                          images=words["need"], data=data.hex())
                self._c2_upstream(cid, top, frame)

        self.fetch(cid, Url.parse(f"{base}/0.svg"), top, lambda r, d: got(0, r), initiator="c2")

    def _c2_upstream(self, cid: str, top: str, frame: int) -> None:
        c2 = self.scenario.attacker.payload.c2
        if not c2.exfil:
            return
        urls = c2_codec.chunk_upstream(c2.exfil, f"http://{c2.host}/u?f={frame}&c={cid}")
        pending = set(range(len(urls)))

        def sent(i: int) -> None:
            pending.discard(i)
            if not pending:
                inbox = self.c2_inbox.pop(f"{cid}:{frame}", [])
                data = c2_codec.decode_upstream_chunks(inbox)
                self.emit(EventKind.C2_TRANSFER, self.scenario.origin_for(c2.host), direction="up",
                          frame=frame, client=cid, bytes=len(data), urls=len(urls))

        for i, u in enumerate(urls):
            self.fetch(cid, Url.parse(u), top, lambda r, d, i=i: sent(i), initiator="c2")

    # network side

    def _responder(self, src: str, url: Url) -> tuple[str, list[str]]:
        origin = self.scenario.origin_for(url.host)
        route = self.path(src, origin)
        for node in route[1:-1]:
            spec = self.scenario.nodes[node]
            if spec.kind == "shared_cache" and spec.permits(url.scheme):
                return node, route[:route.index(node) + 1]
        return origin, route

    def _send(self, src: str, req: HttpMessage, on_response: Callable) -> None:
        responder, route = self._responder(src, req.url)
        port = 443 if req.url.scheme == "https" else 80
        eph = next(self._ports)
        c_isn, s_isn = self.rng.getrandbits(32), self.rng.getrandbits(32)
        raw = req.serialize()
        seg = TcpSegment(eph, port, c_isn, s_isn, raw, self.now)
        conn = _Conn(src, responder, req.url, ConnState(eph, port, s_isn), on_response)

        hops = [0]
        for a, b in zip(route, route[1:]):
            hops.append(hops[-1] + self._latency(a, b))
        one_way = hops[-1]
        sent_at = self.now

        att = self.scenario.attacker
        if self.injecting and req.url.scheme == "http":
            for i, (a, b) in enumerate(zip(route, route[1:])):
                if frozenset((a, b)) in att.taps:
                    self.at(sent_at + hops[i + 1], self._observe, conn, req, seg)
                    break
        self.at(sent_at + one_way, self._serve, conn, req, seg, one_way)

    def _observe(self, conn: _Conn, req: HttpMessage, seg: TcpSegment) -> None:
        att = self.scenario.attacker
        if not self.injecting:
            return
        forged, what = self._forge(conn, req)
        if forged is None:
            return
        params = observe(seg)
        raw = _cover(forged, self._origin_response(req)).serialize()
        segs = split_payload(params, raw)
        delay = nx.dijkstra_path_length(self._full_graph, att.id, conn.requester, weight="latency")
        seq = self.emit(EventKind.INJECT, att.id, url=req.url.display, to=conn.requester, payload=what,
                        src_port=params.src_port, dst_port=params.dst_port, seq=params.seq,
                        ack=params.ack, bytes=len(raw), segments=len(segs))
        self.at(self.now + delay, self._deliver, conn, segs, att.id, seq)

    def _forge(self, conn: _Conn, req: HttpMessage) -> tuple[HttpMessage | None, str]:
        att = self.scenario.attacker
        key = req.url.key
        if key not in att.targets and key not in att.evict_on:
            return None, ""
        genuine = self._origin_response(strip_conditional_headers(req))
        if genuine.status != 200:
            return None, ""
        if key in att.targets and att.payload is not None:
            return rewrite_response(genuine, att.policy, att.payload.payload), "parasite"
        client = self.scenario.nodes.get(conn.requester)
        if client is None or client.profile is None or not client.profile.eviction_supported:
            return None, ""
        count = math.ceil(client.profile.capacity / att.junk_size)
        code = f"/*pst-evict:{count}:{att.junk_size}:http://{att.junk_host}/junk*/evict()"
        return rewrite_response(genuine, att.policy, ParasitePayload(code, "evict")), "evict"

    def _serve(self, conn: _Conn, req: HttpMessage, seg: TcpSegment, one_way: int) -> None:
        node = conn.responder
        if node in self.shared:
            self._serve_from_shared(conn, req, seg, one_way)
            return
        resp = self._origin_response(req)
        self._reply(conn, resp, seg, one_way, node)

    def _serve_from_shared(self, conn: _Conn, req: HttpMessage, seg: TcpSegment, one_way: int) -> None:
        node = conn.responder
        cache = self.shared[node]
        res = cache.lookup(req.url, self.now)
        if res.status == "fresh":
            e = res.entry
            hit = self.emit(EventKind.CACHE_HIT, node, url=req.url.display, store=e.store.value,
                            infected=e.infected, requester=conn.requester)
            resp = e.response
            if req.get("If-None-Match") and req.get("If-None-Match") == e.freshness.etag:
                resp = HttpMessage.response(304, req.url, [("ETag", e.freshness.etag)])
            conn.taint_from_cache = Delivery(e.infected, hit if e.infected else None, "cache")
            self._reply(conn, resp, seg, one_way, node)
            return
        upstream = strip_conditional_headers(req)
        self.emit(EventKind.FETCH, node, request=upstream.request_line, initiator="proxy",
                  conditional=False, requester=conn.requester)

        def filled(resp: HttpMessage, d: Delivery) -> None:
            self._store(node, cache, resp, d, None)
            conn.taint_from_cache = d if d.infected else None
            self._reply(conn, resp, seg, one_way, node)

        self._send(node, upstream, filled)

    def _reply(self, conn: _Conn, resp: HttpMessage, seg: TcpSegment, one_way: int, sender: str) -> None:
        segs = split_payload(observe(seg), resp.serialize())
        self.at(self.now + one_way, self._deliver, conn, segs, sender, None)

    def _deliver(self, conn: _Conn, segs: list[TcpSegment], sender: str, inject_seq: int | None) -> None:
        verdicts: dict[str, int] = {}
        delivered = False
        for s in segs:
            v = conn.state.accept(s).verdict
            verdicts[v.value] = verdicts.get(v.value, 0) + 1
            delivered |= v is Verdict.DELIVERED
        if delivered and conn.first_writer is None:
            conn.first_writer = sender
            conn.taint = inject_seq
        verdict = next(iter(verdicts)) if len(verdicts) == 1 else "mixed"
        self.emit(EventKind.SEGMENT, conn.requester, sender=sender, url=conn.url.display,
                  src_port=segs[0].src_port, dst_port=segs[0].dst_port, seq=segs[0].seq,
                  bytes=sum(len(s.payload) for s in segs), segments=len(segs), verdict=verdict,
                  verdicts=verdicts)
        if conn.done:
            return
        data = conn.state.delivered
        total = head_length(data)
        if total is None or len(data) < total:
            return
        conn.done = True
        resp = parse_message(data[:total], conn.url)
        if conn.taint is not None:
            d = Delivery(True, conn.taint, "network")
        elif conn.taint_from_cache is not None:
            d = conn.taint_from_cache
        else:
            d = Delivery()
        self.emit(EventKind.RESPONSE, conn.requester, url=conn.url.display, status=resp.status,
                  bytes=resp.body_size, sender=sender, infected=d.infected)
        conn.on_response(resp, d)

    # origins

    def _origin_response(self, req: HttpMessage) -> HttpMessage:
        site = self.scenario.sites[req.url.host]
        if site.role == "attacker":
            return self._attacker_site(site, req)
        obj = site.lookup(req.url.path)
        if obj is None:
            return HttpMessage.response(200, req.url, [("Content-Type", "text/plain"),
                                                       ("Content-Length", "0"),
                                                       ("Cache-Control", "no-store")])
        resp = obj.response(req.url)
        for name, value in site.headers:
            if not resp.has(name):
                resp = resp.with_header(name, value)
        if req.get("If-None-Match") == obj.etag:
            keep = [(n, v) for n, v in resp.headers if n.lower() in ("etag", "cache-control", "expires")]
            return HttpMessage.response(304, req.url, keep)
        return resp

    def _attacker_site(self, site: Site, req: HttpMessage) -> HttpMessage:
        path = req.url.path
        att = self.scenario.attacker
        if path.startswith("/junk"):
            return junk_response(req.url, att.junk_size)
        m = _C2_PATH.match(path)
        if m and att.payload and att.payload.c2:
            frame, index = int(m.group(1)), int(m.group(2))
            cmds = att.payload.c2.commands
            data = cmds[frame] if frame < len(cmds) else b""
            words = c2_codec.encode_downstream(data).codewords
            body = c2_codec.render_svg(words[index]) if index < len(words) else b""
            return _no_store(req.url, "image/svg+xml", body)
        if path == "/u":
            params = dict(req.url.query_params())
            self.c2_inbox.setdefault(f"{params.get('c')}:{params.get('f')}", []).append(str(req.url))
            return _no_store(req.url, "text/plain", b"")
        obj = site.lookup(path)
        if obj is not None:
            return obj.response(req.url)
        return _no_store(req.url, "text/plain", b"")


def _cover(forged: HttpMessage, genuine: HttpMessage) -> HttpMessage:
    """Pad the forged head so it spans every byte offset of the genuine reply."""
    short = len(genuine.serialize()) - len(forged.serialize())
    if short <= 0:
        return forged
    return forged.with_header("X-Pad", "x" * max(1, short - len("X-Pad: \r\n")))


def _no_store(url: Url, ctype: str, body: bytes) -> HttpMessage:
    return HttpMessage.response(200, url, [("Content-Type", ctype), ("Content-Length", str(len(body))),
                                           ("Cache-Control", "no-store")], body)


def _ignore(*_args) -> None:
    return None


def run_scenario(scenario: Scenario, seed: int | None = None) -> list[SimEvent]:
    """Run the scheduled user actions to completion and return the event log."""
    sim = Simulation(scenario, seed)
    sim.emit(EventKind.SCENARIO_START, "scenario", name=scenario.name, seed=sim.seed)
    sim.schedule(scenario.schedule)
    sim.run()
    sim.emit(EventKind.SCENARIO_END, "scenario", events=len(sim.events))
    return sim.events


def summarize(events: list[SimEvent]) -> dict:
    count = lambda k: sum(1 for e in events if e.kind is k)  # noqa: E731
    return {
        "events": len(events),
        "injections": count(EventKind.INJECT),
        "infections": count(EventKind.INFECT),
        "evictions": count(EventKind.CACHE_EVICT),
        "dispatches": count(EventKind.ATTACK_DISPATCH),
        "c2_bytes": sum(e.detail.get("bytes", 0) for e in events if e.kind is EventKind.C2_TRANSFER),
    }
