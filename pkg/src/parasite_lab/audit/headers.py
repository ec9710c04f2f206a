"""Transport and security-header statistics over the latest snapshot of each site."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .corpus import Corpus, SiteSnapshot

CSP_HEADERS = {
    "content-security-policy": "standard",
    "x-content-security-policy": "x_csp",
    "x-webkit-csp": "x_webkit_csp",
}
VULNERABLE_SSL = {"ssl2", "ssl3"}
_DIRECTIVE = re.compile(r"^[a-z][a-z0-9-]*$")
_MAX_AGE = re.compile(r"^\s*max-age\s*=\s*\"?(\d+)\"?\s*$", re.I)


def parse_csp(policy: str) -> dict[str, list[str]]:
    """Directive name (lower-cased) to source list. Repeated directives keep the first."""
    out: dict[str, list[str]] = {}
    for part in policy.split(";"):
        tokens = part.split()
        if not tokens:
            continue
        name = tokens[0].lower()
        if name not in out:
            out[name] = tokens[1:]
    return out


def is_bare_wildcard(sources: list[str]) -> bool:
    return sources == ["*"]


def is_mixed_wildcard(sources: list[str]) -> bool:
    return "*" in sources and len(sources) > 1


def csp_well_formed(policy: dict[str, list[str]]) -> bool:
    return all(_DIRECTIVE.match(name) for name in policy)


def normalize_ssl(version: str | None) -> str | None:
    """``SSLv3``, ``SSL 3.0`` and ``ssl3.0`` all become ``ssl3``."""
    if version is None:
        return None
    v = re.sub(r"[\s_]", "", version.lower()).replace("v", "")
    m = re.match(r"^(ssl|tls)(\d)(?:\.(\d))?", v)
    if not m:
        return v
    major, minor = m.group(2), m.group(3)
    if m.group(1) == "ssl":
        return f"ssl{major}"
    return f"tls{major}.{minor or 0}"


def hsts_status(snap: SiteSnapshot) -> str:
    values = snap.header_values("Strict-Transport-Security")
    if not values:
        return "absent"
    for item in values[0].split(";"):
        if _MAX_AGE.match(item):
            return "present"
    return "malformed"


def csp_status(snap: SiteSnapshot) -> tuple[str, str, dict[str, list[str]]]:
    """(presence bucket, variant, effective policy) for a snapshot."""
    found = {}
    for name, value in snap.headers:
        variant = CSP_HEADERS.get(name.lower())
        if variant and variant not in found:
            found[variant] = value
    for variant in ("standard", "x_csp", "x_webkit_csp"):
        if variant in found:
            policy = parse_csp(found[variant])
            if not policy:
                return "empty", variant, {}
            if not csp_well_formed(policy):
                return "malformed", variant, policy
            return "present", variant, policy
    return "absent", "none", {}


@dataclass
class AuditReport:
    sites: int
    scheme: dict[str, int] = field(default_factory=dict)
    ssl: dict[str, int] = field(default_factory=dict)
    hsts: dict[str, int] = field(default_factory=dict)
    preload: dict[str, int] = field(default_factory=dict)
    csp: dict[str, int] = field(default_factory=dict)
    csp_variant: dict[str, int] = field(default_factory=dict)
    connect_src: dict[str, int] = field(default_factory=dict)
    persistency: dict | None = None

    @property
    def no_https_fraction(self) -> float:
        return self.scheme["http"] / self.sites

    @property
    def vulnerable_ssl_fraction(self) -> float:
        return self.ssl["vulnerable"] / self.sites

    @property
    def no_hsts_fraction(self) -> float:
        """Sites without an effective HSTS header (absent or malformed)."""
        return (self.hsts["absent"] + self.hsts["malformed"]) / self.sites

    @property
    def csp_presence_fraction(self) -> float:
        return self.csp["present"] / self.sites

    @property
    def connect_src_uses(self) -> int:
        return self.sites - self.connect_src["not_used"]

    @property
    def connect_src_wildcards(self) -> int:
        return self.connect_src["bare_wildcard"]

    def partitions(self) -> dict[str, dict[str, int]]:
        return {"scheme": self.scheme, "ssl": self.ssl, "hsts": self.hsts, "preload": self.preload,
                "csp": self.csp, "csp_variant": self.csp_variant, "connect_src": self.connect_src}

    def to_dict(self) -> dict:
        d = {
            "sites": self.sites,
            "no_https_fraction": self.no_https_fraction,
            "vulnerable_ssl_fraction": self.vulnerable_ssl_fraction,
            "no_hsts_fraction": self.no_hsts_fraction,
            "preload_count": self.preload["listed"],
            "csp_presence_fraction": self.csp_presence_fraction,
            "connect_src_uses": self.connect_src_uses,
            "connect_src_wildcards": self.connect_src_wildcards,
            "buckets": self.partitions(),
        }
        if self.persistency is not None:
            d["persistency"] = self.persistency
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_table(self) -> str:
        rows = [
            ("sites", str(self.sites)),
            ("without HTTPS", _pct(self.scheme["http"], self.sites)),
            ("vulnerable SSL (2.0/3.0)", _pct(self.ssl["vulnerable"], self.sites)),
            ("without HSTS", _pct(self.hsts["absent"] + self.hsts["malformed"], self.sites)),
            ("HSTS malformed", str(self.hsts["malformed"])),
            ("in preload list", str(self.preload["listed"])),
            ("CSP present", _pct(self.csp["present"], self.sites)),
            ("CSP supplied but empty", str(self.csp["empty"])),
            ("CSP malformed", str(self.csp["malformed"])),
            ("CSP via X-CSP (deprecated)", str(self.csp_variant["x_csp"])),
            ("CSP via X-Webkit-CSP (deprecated)", str(self.csp_variant["x_webkit_csp"])),
            ("connect-src used", str(self.connect_src_uses)),
            ("connect-src bare wildcard", f"{self.connect_src_wildcards}/{self.connect_src_uses}"),
            ("connect-src mixed wildcard", str(self.connect_src["mixed_wildcard"])),
        ]
        if self.persistency:
            for w, p in self.persistency.items():
                rows.append((f"persistent names, {w} days", f"{p['name'] * 100:.2f}%"))
                rows.append((f"persistent content, {w} days", f"{p['content'] * 100:.2f}%"))
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows) + "\n"


def _pct(n: int, d: int) -> str:
    return f"{n / d * 100:.2f}% ({n})"


def header_audit(corpus: Corpus, preload: set[str] | frozenset[str] = frozenset()) -> AuditReport:
    if len(corpus) == 0:
        raise ValueError("corpus is empty")
    preload = {h.strip().lower() for h in preload}
    report = AuditReport(
        sites=len(corpus),
        scheme={"https": 0, "http": 0},
        ssl={"vulnerable": 0, "modern": 0, "no_tls": 0},
        hsts={"present": 0, "absent": 0, "malformed": 0},
        preload={"listed": 0, "unlisted": 0},
        csp={"present": 0, "empty": 0, "absent": 0, "malformed": 0},
        csp_variant={"standard": 0, "x_csp": 0, "x_webkit_csp": 0, "none": 0},
        connect_src={"bare_wildcard": 0, "mixed_wildcard": 0, "restricted": 0, "not_used": 0},
    )
    for site in corpus.sites:
        snap = corpus.latest(site) or SiteSnapshot(site, 0, "http")
        report.scheme[snap.scheme] += 1
        if snap.scheme == "http":
            report.ssl["no_tls"] += 1
        elif normalize_ssl(snap.ssl_version) in VULNERABLE_SSL:
            report.ssl["vulnerable"] += 1
        else:
            report.ssl["modern"] += 1
        report.hsts[hsts_status(snap)] += 1
        report.preload["listed" if site in preload else "unlisted"] += 1
        presence, variant, policy = csp_status(snap)
        report.csp[presence] += 1
        report.csp_variant[variant] += 1
        sources = policy.get("connect-src") if presence == "present" else None
        if sources is None:
            report.connect_src["not_used"] += 1
        elif is_bare_wildcard(sources):
            report.connect_src["bare_wildcard"] += 1
        elif is_mixed_wildcard(sources):
            report.connect_src["mixed_wildcard"] += 1
        else:
            report.connect_src["restricted"] += 1
    return report


def load_preload(path) -> set[str]:
    with open(path, encoding="utf-8") as fh:
        return {line.strip().lower() for line in fh if line.strip() and not line.startswith("#")}
