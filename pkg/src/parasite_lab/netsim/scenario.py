"""Scenario files: topology, sites, the attacker's setup and the user schedule.

A scenario is a JSON document. Validation collects every violation it can
find and reports each with the line of the file it most likely refers to.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import networkx as nx

from ..browser_cache import BUILTIN_PROFILES, BrowserProfile
from ..http_core import MILLISECOND, HttpMessage, Url, parse_freshness
from ..parasite import (DEFAULT_BUSTER_START, DEFAULT_CACHE_CONTROL, DEFAULT_HEADERS_TO_REMOVE,
                        DEFAULT_REGISTRY, AttackModuleId, InfectionPolicy, ParasitePayload)
from .caches import CacheNodeClass, Support, cache_class

NODE_KINDS = ("client", "attacker", "origin_server", "shared_cache", "router")
ACTIONS = ("visit", "clear", "attacker_leave")
CLEAR_MODES = ("clear_cache", "clear_cookies", "hard_refresh")


@dataclass
class Violation:
    message: str
    line: int | None = None

    def __str__(self) -> str:
        return f"line {self.line}: {self.message}" if self.line else self.message


class ScenarioError(ValueError):
    def __init__(self, violations: list[Violation], source: str = "<scenario>"):
        self.violations = violations
        self.source = source
        super().__init__("; ".join(str(v) for v in violations))

    def diagnostics(self) -> list[str]:
        return [f"{self.source}:{v.line or 1}: {v.message}" for v in self.violations]


@dataclass
class WebObject:
    url: Url
    body: bytes
    content_type: str
    cache_control: str | None
    headers: list[tuple[str, str]]

    @property
    def etag(self) -> str:
        return '"' + hashlib.sha256(self.body).hexdigest()[:16] + '"'

    def response(self, url: Url | None = None) -> HttpMessage:
        hdrs = [("Content-Type", self.content_type), ("Content-Length", str(len(self.body)))]
        if self.cache_control is not None:
            hdrs.append(("Cache-Control", self.cache_control))
        hdrs.append(("ETag", self.etag))
        hdrs.extend(self.headers)
        return HttpMessage.response(200, url or self.url, hdrs, self.body)


@dataclass
class Site:
    host: str
    scheme: str = "http"
    headers: list[tuple[str, str]] = field(default_factory=list)
    objects: dict[str, WebObject] = field(default_factory=dict)
    role: str = "content"  # "attacker" sites serve junk and the command channel

    def lookup(self, path: str) -> WebObject | None:
        return self.objects.get(path)


@dataclass
class C2Config:
    host: str
    commands: list[bytes] = field(default_factory=list)
    exfil: bytes = b""


@dataclass
class PayloadConfig:
    payload: ParasitePayload
    cache_api: bool = False
    propagate: list[Url] = field(default_factory=list)
    iframes: list[Url] = field(default_factory=list)
    c2: C2Config | None = None


@dataclass
class NodeSpec:
    id: str
    kind: str
    profile: BrowserProfile | None = None
    sites: list[str] = field(default_factory=list)
    cache_class: CacheNodeClass | None = None
    capacity: int = 1 << 30
    tls_intercept: bool = False
    optional_enabled: bool = True
    undocumented_as: Support = Support.NONE

    def permits(self, scheme: str) -> bool:
        return self.cache_class is not None and self.cache_class.permits(
            scheme, tls_intercept=self.tls_intercept, optional_enabled=self.optional_enabled,
            undocumented_as=self.undocumented_as)


@dataclass
class AttackerSpec:
    id: str
    taps: set[frozenset[str]] = field(default_factory=set)
    targets: set[str] = field(default_factory=set)
    evict_on: set[str] = field(default_factory=set)
    junk_size: int = 1024 * 1024
    junk_host: str = "attacker.com"
    payload: PayloadConfig | None = None
    policy: InfectionPolicy = field(default_factory=InfectionPolicy)


@dataclass
class Action:
    at: int
    action: str
    client: str | None = None
    url: Url | None = None
    mode: str | None = None


@dataclass
class Scenario:
    name: str
    seed: int
    nodes: dict[str, NodeSpec]
    links: list[tuple[str, str, int]]
    sites: dict[str, Site]
    attacker: AttackerSpec
    schedule: list[Action]
    cache_buster_start: int = DEFAULT_BUSTER_START
    digest: str = ""

    def origin_for(self, host: str) -> str:
        for node in self.nodes.values():
            if host in node.sites:
                return node.id
        raise KeyError(f"no origin serves {host}")

    def graph(self, include_attacker: bool = True) -> nx.Graph:
        g = nx.Graph()
        for nid in self.nodes:
            if include_attacker or nid != self.attacker.id:
                g.add_node(nid)
        for a, b, lat in self.links:
            if include_attacker or self.attacker.id not in (a, b):
                g.add_edge(a, b, latency=lat)
        return g

    @property
    def clients(self) -> list[str]:
        return [n.id for n in self.nodes.values() if n.kind == "client"]

    @classmethod
    def load(cls, path: str | Path) -> Scenario:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ScenarioError([Violation(f"cannot read scenario: {exc.strerror}")], str(path)) from None
        return cls.loads(text, source=str(path))

    @classmethod
    def loads(cls, text: str, source: str = "<scenario>") -> Scenario:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError([Violation(exc.msg, exc.lineno)], source) from None
        sc = cls.from_dict(data, text=text, source=source)
        sc.digest = hashlib.sha256(text.encode()).hexdigest()
        return sc

    @classmethod
    def from_dict(cls, data: dict, text: str = "", source: str = "<scenario>") -> Scenario:
        return _Builder(data, text, source).build()


def _line_of(text: str, *needles: str) -> int | None:
    lines = text.splitlines()
    for needle in needles:
        for i, line in enumerate(lines, 1):
            if needle in line:
                return i
    return None


def _default_body(url: Url, ctype: str, embeds: list[Url]) -> bytes:
    if ctype == "text/html":
        tags = "".join(
            f'<script src="{e}"></script>' if e.extension in ("js", "mjs") else f'<img src="{e}">'
            for e in embeds)
        return f"<html><head><title>{url.host}</title></head><body><h1>{url.host}</h1>{tags}</body></html>".encode()
    if ctype == "application/javascript":
        name = "".join(c if c.isalnum() else "_" for c in url.host + url.path)
        return f"function init_{name}(){{return document.title;}}".encode()
    return f"{url.display}".encode()


def _guess_type(url: Url) -> str:
    ext = url.extension
    if ext in ("js", "mjs"):
        return "application/javascript"
    if ext in ("png",):
        return "image/png"
    if ext in ("jpg", "jpeg"):
        return "image/jpeg"
    if ext == "css":
        return "text/css"
    if ext == "svg":
        return "image/svg+xml"
    return "text/html"


class _Builder:
    def __init__(self, data: dict, text: str, source: str):
        self.data = data if isinstance(data, dict) else {}
        self.text = text
        self.source = source
        self.problems: list[Violation] = []
        if not isinstance(data, dict):
            self.fail("scenario must be a JSON object")

    def fail(self, message: str, *needles: str) -> None:
        self.problems.append(Violation(message, _line_of(self.text, *needles) if needles else None))

    def build(self) -> Scenario:
        d = self.data
        profiles = dict(BUILTIN_PROFILES)
        for p in d.get("profiles", []):
            try:
                profiles[p["name"]] = BrowserProfile.from_dict(p)
            except (KeyError, ValueError, TypeError) as exc:
                self.fail(f"bad profile: {exc}", f'"{p.get("name", "")}"')

        nodes: dict[str, NodeSpec] = {}
        attacker_raw: list[dict] = []
        for raw in d.get("nodes", []):
            nid = raw.get("id")
            kind = raw.get("kind")
            if not nid:
                self.fail("node without id", '"nodes"')
                continue
            where = f'"{nid}"'
            if nid in nodes:
                self.fail(f"duplicate node id {nid}", where)
                continue
            if kind not in NODE_KINDS:
                self.fail(f"node {nid}: unknown kind {kind!r}", where)
                continue
            node = NodeSpec(nid, kind)
            if kind == "client":
                pname = raw.get("profile", "chrome")
                if pname not in profiles:
                    self.fail(f"node {nid}: unknown profile {pname!r}", f'"{pname}"', where)
                else:
                    node.profile = profiles[pname]
            elif kind == "origin_server":
                node.sites = [s.lower() for s in raw.get("sites", [])]
            elif kind == "shared_cache":
                try:
                    node.cache_class = cache_class(raw.get("class", "squid"))
                except (KeyError, ValueError) as exc:
                    self.fail(f"node {nid}: {exc.args[0]}", where)
                node.capacity = int(raw.get("capacity", node.capacity))
                node.tls_intercept = bool(raw.get("tls_intercept", False))
                node.optional_enabled = bool(raw.get("optional_enabled", True))
                try:
                    node.undocumented_as = Support(raw.get("undocumented_as", "none"))
                except ValueError:
                    self.fail(f"node {nid}: bad undocumented_as", where)
            elif kind == "attacker":
                attacker_raw.append(raw)
            nodes[nid] = node

        if len(attacker_raw) != 1:
            self.fail(f"scenario needs exactly one attacker node, found {len(attacker_raw)}",
                      '"attacker"', '"nodes"')

        links = []
        for raw in d.get("links", []):
            a, b = raw.get("a"), raw.get("b")
            lat = raw.get("latency_ms", 1)
            for end in (a, b):
                if end not in nodes:
                    self.fail(f"link endpoint {end!r} is not a node", f'"a": "{a}"', f'"{end}"')
            if not isinstance(lat, (int, float)) or lat <= 0:
                self.fail(f"link {a}-{b}: latency must be positive", f'"a": "{a}"')
                lat = 1
            if a in nodes and b in nodes:
                links.append((a, b, int(round(lat * MILLISECOND))))

        sites = self._sites(nodes)
        att_raw = {**(attacker_raw[0] if attacker_raw else {"id": "?"}), **d.get("attacker", {})}
        attacker = self._attacker(att_raw, nodes, links, sites)
        schedule = self._schedule(nodes)

        sc = Scenario(
            name=str(d.get("name", "scenario")),
            seed=int(d.get("seed", 0)),
            nodes=nodes,
            links=links,
            sites=sites,
            attacker=attacker,
            schedule=schedule,
            cache_buster_start=int(d.get("cache_buster_start", DEFAULT_BUSTER_START)),
        )
        if nodes and len(attacker_raw) == 1:
            g = sc.graph()
            if not nx.is_connected(g):
                parts = sorted(sorted(c) for c in nx.connected_components(g))
                self.fail(f"topology is not connected: components {parts}", '"links"')
            elif not nx.is_connected(sc.graph(include_attacker=False)):
                self.fail("topology is only connected through the attacker", '"links"')
        if self.problems:
            raise ScenarioError(self.problems, self.source)
        return sc

    def _sites(self, nodes: dict[str, NodeSpec]) -> dict[str, Site]:
        hosted = {h for n in nodes.values() for h in n.sites}
        sites: dict[str, Site] = {}
        raw_sites = self.data.get("sites", {})
        for host, raw in raw_sites.items():
            host = host.lower()
            if host not in hosted:
                self.fail(f"site {host} is not served by any origin_server", f'"{host}"')
            site = Site(host, raw.get("scheme", "http"), list(raw.get("headers", {}).items()),
                        role=raw.get("role", "content"))
            if site.scheme not in ("http", "https"):
                self.fail(f"site {host}: scheme must be http or https", f'"{host}"')
            for obj in raw.get("objects", []):
                path = obj.get("path", "/")
                url = Url(site.scheme, host, path)
                embeds = [self._url(e, site.scheme) for e in obj.get("embeds", [])]
                ctype = obj.get("content_type") or _guess_type(url)
                if "body" in obj:
                    body = obj["body"].encode()
                else:
                    body = _default_body(url, ctype, embeds)
                    if "size" in obj:
                        body = body.ljust(int(obj["size"]), b" ")
                cc = obj.get("cache_control", "max-age=3600")
                site.objects[path] = WebObject(url, body, ctype, cc, list(obj.get("headers", {}).items()))
                try:
                    parse_freshness(site.objects[path].response(), 0)
                except ValueError as exc:
                    self.fail(f"{url.display}: {exc}", f'"{path}"')
            sites[host] = site
        for host in hosted - set(sites):
            sites[host] = Site(host)
        for site in sites.values():
            for obj in site.objects.values():
                for e in _embeds_of(obj.body):
                    eu = Url.parse(e)
                    if eu.host not in sites or (sites[eu.host].role == "content"
                                               and eu.path not in sites[eu.host].objects):
                        self.fail(f"{obj.url.display} embeds unknown object {eu.display}", e)
        return sites

    def _url(self, text: str, default_scheme: str = "http") -> Url:
        if "://" not in text:
            host = text.split("/", 1)[0].lower()
            scheme = self.data.get("sites", {}).get(host, {}).get("scheme", default_scheme)
            text = f"{scheme}://{text}"
        return Url.parse(text)

    def _known(self, url: Url, sites: dict[str, Site], ctx: str) -> None:
        site = sites.get(url.host)
        if site is None:
            self.fail(f"{ctx}: host {url.host} has no site", url.display)
        elif site.role == "content" and url.path not in site.objects:
            self.fail(f"{ctx}: {url.display} is not an object of {url.host}", url.display)

    def _attacker(self, raw: dict, nodes, links, sites) -> AttackerSpec:
        spec = AttackerSpec(raw.get("id", "?"))
        link_set = {frozenset((a, b)) for a, b, _ in links}
        for tap in raw.get("taps", []):
            pair = frozenset(tap)
            if len(tap) != 2 or pair not in link_set:
                self.fail(f"attacker taps {tap} which is not a link", '"taps"')
            elif spec.id in pair:
                self.fail("attacker cannot tap its own link", '"taps"')
            spec.taps.add(pair)
        for t in raw.get("targets", []):
            u = self._url(t)
            self._known(u, sites, "attacker target")
            spec.targets.add(u.key)
        for t in raw.get("evict_on", []):
            u = self._url(t)
            self._known(u, sites, "evict_on")
            spec.evict_on.add(u.key)
        spec.junk_size = int(raw.get("junk_size", spec.junk_size))
        spec.junk_host = raw.get("junk_host", spec.junk_host).lower()
        if spec.evict_on and spec.junk_host not in sites:
            self.fail(f"junk host {spec.junk_host} has no site", '"junk_host"', '"evict_on"')
        pol = raw.get("policy", {})
        try:
            spec.policy = InfectionPolicy(
                frozenset(pol.get("remove", DEFAULT_HEADERS_TO_REMOVE)),
                pol.get("cache_control", DEFAULT_CACHE_CONTROL))
        except ValueError as exc:
            self.fail(str(exc), '"policy"')
        if "payload" in raw:
            spec.payload = self._payload(raw["payload"], sites)
        elif spec.targets:
            self.fail("attacker has targets but no payload", '"targets"')
        return spec

    def _payload(self, raw: dict, sites) -> PayloadConfig | None:
        modules = [AttackModuleId(m["id"], tuple(m.get("patterns", ())))
                   for m in raw.get("modules", [])] if "modules" in raw else list(DEFAULT_REGISTRY)
        try:
            payload = ParasitePayload.marked(raw.get("id", "p1"), raw.get("code", "parasite()"),
                                             modules=tuple(modules),
                                             reserved=frozenset(raw.get("reserved", [])))
        except ValueError as exc:
            self.fail(str(exc), '"payload"')
            return None
        cfg = PayloadConfig(payload, cache_api=bool(raw.get("cache_api", False)))
        for u in raw.get("propagate", []):
            url = self._url(u)
            self._known(url, sites, "propagate")
            cfg.propagate.append(url)
        for u in raw.get("iframes", []):
            url = self._url(u)
            self._known(url, sites, "iframes")
            cfg.iframes.append(url)
        if "c2" in raw:
            c2 = raw["c2"]
            host = c2.get("host", "attacker.com").lower()
            if host not in sites:
                self.fail(f"c2 host {host} has no site", '"c2"')
            cfg.c2 = C2Config(host, [c.encode() for c in c2.get("commands", [])],
                              c2.get("exfil", "").encode())
        return cfg

    def _schedule(self, nodes) -> list[Action]:
        out = []
        for raw in self.data.get("schedule", []):
            action = raw.get("action")
            at = raw.get("at_ms", 0)
            where = f'"{action}"'
            if action not in ACTIONS:
                self.fail(f"unknown action {action!r}", where)
                continue
            if not isinstance(at, (int, float)) or at < 0:
                self.fail("at_ms must be a non-negative number", where)
                continue
            act = Action(int(round(at * MILLISECOND)), action)
            if action in ("visit", "clear"):
                cid = raw.get("client")
                if cid not in nodes or nodes[cid].kind != "client":
                    self.fail(f"{action}: {cid!r} is not a client", f'"{cid}"', where)
                    continue
                act.client = cid
            if action == "visit":
                if "url" not in raw:
                    self.fail("visit needs a url", where)
                    continue
                act.url = self._url(raw["url"])
            if action == "clear":
                act.mode = raw.get("mode", "clear_cache")
                if act.mode not in CLEAR_MODES:
                    self.fail(f"unknown clear mode {act.mode!r}", f'"{act.mode}"')
                    continue
            out.append(act)
        return sorted(out, key=lambda a: a.at)


def _embeds_of(body: bytes) -> list[str]:
    import re
    return [m.decode() for m in re.findall(rb'<(?:script|img)[^>]*\ssrc="([^"]+)"', body)]
