"""Building infected objects and routing a running parasite to attack modules.

No script is ever executed: payload code is opaque text, and attack modules
exist only as names the simulator records when a parasite dispatches them.
"""

from __future__ import annotations

import fnmatch
import re
from dataclasses import dataclass, field
from enum import Enum

from .http_core import HttpMessage, Url, add_cache_buster

ONE_YEAR = 31536000
DEFAULT_CACHE_CONTROL = f"max-age={ONE_YEAR}"
DEFAULT_HEADERS_TO_REMOVE = frozenset({
    "Content-Security-Policy",
    "Content-Security-Policy-Report-Only",
    "Strict-Transport-Security",
    "X-Frame-Options",
    "X-Content-Type-Options",
})
REQUIRED_HEADERS_TO_REMOVE = frozenset({
    "Content-Security-Policy", "Strict-Transport-Security", "X-Frame-Options"})
DEFAULT_BUSTER_START = 500198

_IDENT = re.compile(r"[A-Za-z_$][A-Za-z0-9_$]*")
_COMMENT = re.compile(r"/\*.*?\*/|//[^\n]*", re.S)
_BODY_CLOSE = re.compile(rb"</body\s*>", re.I)


class InfectionError(ValueError):
    pass


class AlreadyInfectedError(InfectionError):
    pass


class NotInjectableError(InfectionError):
    pass


class AttackKind(str, Enum):
    READ_BROWSER_DATA = "read_browser_data"
    PROTECTED_CAPTURE = "protected_capture"
    PHISHING_SPREAD = "phishing_spread"
    LOGIN_HARVEST = "login_harvest"


@dataclass(frozen=True)
class AttackModuleId:
    id: AttackKind
    url_patterns: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "id", AttackKind(self.id))
        object.__setattr__(self, "url_patterns", tuple(self.url_patterns))

    def matches(self, host: str) -> bool:
        host = host.lower()
        return any(fnmatch.fnmatchcase(host, p.lower()) for p in self.url_patterns)


DEFAULT_REGISTRY = (
    AttackModuleId(AttackKind.READ_BROWSER_DATA, ("*",)),
    AttackModuleId(AttackKind.PROTECTED_CAPTURE, ("meet.*", "video.*")),
    AttackModuleId(AttackKind.PHISHING_SPREAD, ("mail.*", "chat.*", "social.*")),
    AttackModuleId(AttackKind.LOGIN_HARVEST, ("mail.*", "login.*", "*bank*")),
)


def identifiers(code: str) -> set[str]:
    """Identifier tokens of ``code`` with comments removed (string literals are not special-cased)."""
    return set(_IDENT.findall(_COMMENT.sub(" ", code)))


@dataclass(frozen=True)
class ParasitePayload:
    code: str
    id: str
    modules: tuple[AttackModuleId, ...] = ()
    reserved: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "modules", tuple(self.modules))
        clash = identifiers(self.code) & set(self.reserved)
        if clash:
            raise InfectionError(f"payload {self.id} reuses reserved identifiers {sorted(clash)}")

    @classmethod
    def marked(cls, id: str, code: str, **kw) -> ParasitePayload:
        """Payload whose code starts with its re-infection marker comment."""
        return cls(code=f"/*pst:{id}*/{code}", id=id, **kw)

    @property
    def marker(self) -> bytes:
        return f"/*pst:{self.id}*/".encode()

    @property
    def code_bytes(self) -> bytes:
        return self.code.encode()

    def found_in(self, body: bytes) -> bool:
        return self.marker in body


@dataclass(frozen=True)
class InfectionPolicy:
    headers_to_remove: frozenset[str] = DEFAULT_HEADERS_TO_REMOVE
    cache_control_value: str = DEFAULT_CACHE_CONTROL
    html_injection_anchor: str = "</body>"

    def __post_init__(self):
        names = {h.lower() for h in self.headers_to_remove}
        missing = {h for h in REQUIRED_HEADERS_TO_REMOVE if h.lower() not in names}
        if missing:
            raise ValueError(f"policy must strip {sorted(missing)}")
        object.__setattr__(self, "headers_to_remove", frozenset(self.headers_to_remove))


def _js_splice(payload: ParasitePayload) -> bytes:
    return b"; " + payload.code_bytes + b";"


def _html_splice(payload: ParasitePayload) -> bytes:
    return b"<script>" + payload.code_bytes + b"</script>"


def infect_js(original: bytes, payload: ParasitePayload) -> bytes:
    """Append ``; <code>;`` to a script. The original stays an exact prefix."""
    suffix = _js_splice(payload)
    if payload.found_in(original) or original.endswith(suffix):
        raise AlreadyInfectedError(f"script already carries parasite {payload.id}")
    return original + suffix


def infect_html(original: bytes, payload: ParasitePayload) -> bytes:
    """Insert ``<script><code></script>`` right before the last ``</body>``."""
    span = _html_splice(payload)
    if payload.found_in(original) or span in original:
        raise AlreadyInfectedError(f"document already carries parasite {payload.id}")
    matches = list(_BODY_CLOSE.finditer(original))
    if not matches:
        raise NotInjectableError("document has no </body> tag")
    at = matches[-1].start()
    return original[:at] + span + original[at:]


def content_kind(resp: HttpMessage) -> str:
    """``js``, ``html`` or ``other`` from Content-Type, else the URL extension."""
    ctype = (resp.get("Content-Type") or "").split(";")[0].strip().lower()
    if ctype:
        if "javascript" in ctype or ctype == "application/ecmascript":
            return "js"
        if ctype in ("text/html", "application/xhtml+xml"):
            return "html"
        return "other"
    ext = resp.url.extension
    if ext in ("js", "mjs"):
        return "js"
    if ext in ("html", "htm") or resp.url.path.endswith("/"):
        return "html"
    return "other"


def rewrite_response(resp: HttpMessage, policy: InfectionPolicy,
                     payload: ParasitePayload) -> HttpMessage:
    """Turn a genuine 200 into the parasite version.

    Security headers go, Cache-Control is inflated, the body is spliced
    according to its type and Content-Length follows the new body. A body
    that already carries the payload is passed through, so rewriting twice
    equals rewriting once.
    """
    if resp.is_request:
        raise InfectionError("rewrite_response needs a response")
    if resp.status != 200:
        raise InfectionError(
            f"cannot infect a {resp.status} response; strip conditional headers first")
    body = resp.body
    kind = content_kind(resp)
    try:
        if kind == "js":
            body = infect_js(body, payload)
        elif kind == "html":
            body = infect_html(body, payload)
    except (AlreadyInfectedError, NotInjectableError):
        pass
    out = resp.without(*policy.headers_to_remove, "Cache-Control")
    out = out.with_header("Cache-Control", policy.cache_control_value)
    return out.with_body(body).with_header("Content-Length", str(len(body)))


@dataclass
class CacheBuster:
    """Monotone token source for cache-busted reloads."""

    next_token: int = DEFAULT_BUSTER_START
    used: set[int] = field(default_factory=set)

    def mark_used(self, token: int) -> None:
        self.used.add(token)

    def draw(self) -> int:
        while self.next_token in self.used:
            self.next_token += 1
        token = self.next_token
        self.used.add(token)
        self.next_token += 1
        return token


def reload_original(url: Url | str, buster: CacheBuster) -> HttpMessage:
    """Same-origin GET for the pristine copy under a fresh cache key."""
    busted = add_cache_buster(url, buster.draw())
    return HttpMessage.request("GET", busted, [("Host", busted.host)])


def dispatch(current_url: Url | str, registry) -> list[AttackModuleId]:
    host = Url.parse(current_url).host.split(":")[0]
    return [m for m in registry if m.matches(host)]
