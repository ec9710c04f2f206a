"""HTTP message model, freshness arithmetic and request/URL manipulation.

Simulation time is an integer count of microseconds. ``Expires`` and
``Last-Modified`` dates map onto it through a fixed lab epoch, so a header
value produced by :func:`http_date` parses back to the same sim-time.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from email.utils import format_datetime, parsedate_to_datetime
from urllib.parse import parse_qsl, urlsplit

SECOND = 1_000_000
MILLISECOND = 1_000

LAB_EPOCH = datetime(2020, 1, 1, tzinfo=timezone.utc)

ALLOWED_STATUSES = {200: "OK", 304: "Not Modified"}
CONDITIONAL_HEADERS = ("If-None-Match", "If-Modified-Since")

_TOKEN = re.compile(r"^[!#$%&'*+\-.^_`|~0-9A-Za-z]+$")


class HttpParseError(ValueError):
    """Raised when a message or header value cannot be parsed."""

    def __init__(self, message: str, header: str | None = None):
        super().__init__(message)
        self.header = header


class CacheBusterError(ValueError):
    """Raised when a URL already carries the cache-buster parameter."""


@dataclass(frozen=True)
class Url:
    """Absolute URL without fragment.

    ``key`` is the cache key: scheme, host, path and the full query string.
    """

    scheme: str
    host: str
    path: str = "/"
    query: str = ""

    @classmethod
    def parse(cls, text: str | Url) -> Url:
        if isinstance(text, Url):
            return text
        if "://" not in text:
            text = "http://" + text
        parts = urlsplit(text)
        if not parts.hostname:
            raise HttpParseError(f"URL has no host: {text!r}")
        host = parts.hostname.lower()
        if parts.port:
            host = f"{host}:{parts.port}"
        return cls(parts.scheme.lower(), host, parts.path or "/", parts.query)

    @property
    def target(self) -> str:
        return self.path + (f"?{self.query}" if self.query else "")

    @property
    def display(self) -> str:
        """Scheme-less form used in logs, e.g. ``somesite.com/my.js?t=1``."""
        if self.path == "/" and not self.query:
            return self.host + "/"
        return self.host + self.target

    @property
    def key(self) -> str:
        return str(self)

    @property
    def extension(self) -> str:
        name = self.path.rsplit("/", 1)[-1]
        return name.rsplit(".", 1)[-1].lower() if "." in name else ""

    def query_params(self) -> list[tuple[str, str]]:
        return parse_qsl(self.query, keep_blank_values=True)

    def with_query(self, query: str) -> Url:
        return replace(self, query=query)

    def __str__(self) -> str:
        return f"{self.scheme}://{self.host}{self.target}"


@dataclass(frozen=True)
class HttpMessage:
    """A request or response.

    ``start`` is the method for requests and the integer status for
    responses. Header names keep their original spelling and order; lookups
    are case-insensitive.
    """

    kind: str
    start: str | int
    url: Url
    headers: tuple[tuple[str, str], ...] = ()
    body: bytes = b""

    def __post_init__(self):
        if self.kind not in ("request", "response"):
            raise ValueError(f"kind must be request or response, not {self.kind!r}")
        if self.kind == "response" and self.start not in ALLOWED_STATUSES:
            raise HttpParseError(f"status {self.start!r} not supported in the lab")
        object.__setattr__(self, "headers", tuple((str(n), str(v)) for n, v in self.headers))
        object.__setattr__(self, "url", Url.parse(self.url))

    @classmethod
    def request(cls, method: str, url: Url | str, headers=(), body: bytes = b"") -> HttpMessage:
        return cls("request", method, Url.parse(url), tuple(headers), body)

    @classmethod
    def response(cls, status: int, url: Url | str, headers=(), body: bytes = b"") -> HttpMessage:
        return cls("response", status, Url.parse(url), tuple(headers), body)

    @property
    def is_request(self) -> bool:
        return self.kind == "request"

    @property
    def method(self) -> str:
        if not self.is_request:
            raise AttributeError("responses have no method")
        return str(self.start)

    @property
    def status(self) -> int:
        if self.is_request:
            raise AttributeError("requests have no status")
        return int(self.start)

    @property
    def body_size(self) -> int:
        return len(self.body)

    def get(self, name: str, default: str | None = None) -> str | None:
        lname = name.lower()
        for n, v in self.headers:
            if n.lower() == lname:
                return v
        return default

    def get_all(self, name: str) -> list[str]:
        lname = name.lower()
        return [v for n, v in self.headers if n.lower() == lname]

    def has(self, name: str) -> bool:
        return self.get(name) is not None

    def without(self, *names: str) -> HttpMessage:
        drop = {n.lower() for n in names}
        return replace(self, headers=tuple(h for h in self.headers if h[0].lower() not in drop))

    def with_header(self, name: str, value: str) -> HttpMessage:
        """Replace every ``name`` header with a single one appended at the end."""
        kept = self.without(name).headers
        return replace(self, headers=kept + ((name, value),))

    def with_body(self, body: bytes) -> HttpMessage:
        return replace(self, body=body)

    @property
    def request_line(self) -> str:
        """Log form of a request, e.g. ``GET somesite.com/my.js``."""
        return f"{self.method} {self.url.display}"

    def serialize(self) -> bytes:
        if self.is_request:
            first = f"{self.start} {self.url} HTTP/1.1"
        else:
            first = f"HTTP/1.1 {self.start} {ALLOWED_STATUSES[int(self.start)]}"
        lines = [first] + [f"{n}: {v}" for n, v in self.headers]
        return ("\r\n".join(lines) + "\r\n\r\n").encode("latin-1") + self.body


def _split_head(raw: bytes) -> tuple[str, list[tuple[str, str]], bytes]:
    head, sep, rest = raw.partition(b"\r\n\r\n")
    if not sep:
        raise HttpParseError("incomplete message: no blank line after headers")
    lines = head.decode("latin-1").split("\r\n")
    headers = []
    for line in lines[1:]:
        name, colon, value = line.partition(":")
        if not colon or not _TOKEN.match(name):
            raise HttpParseError(f"malformed header line {line!r}")
        headers.append((name, value.strip(" \t")))
    return lines[0], headers, rest


def head_length(raw: bytes) -> int | None:
    """Total message length implied by the head, or None if the head is incomplete."""
    idx = raw.find(b"\r\n\r\n")
    if idx < 0:
        return None
    _, headers, _ = _split_head(raw[: idx + 4])
    length = 0
    for n, v in headers:
        if n.lower() == "content-length":
            length = int(v)
            break
    return idx + 4 + length


def parse_message(raw: bytes, url: Url | str | None = None) -> HttpMessage:
    """Parse the canonical serialization.

    A response does not carry its URL on the wire, so ``url`` must be given
    for responses. Any bytes past ``Content-Length`` are an error.
    """
    first, headers, body = _split_head(raw)
    for n, v in headers:
        if n.lower() == "content-length":
            if not v.isdigit() or int(v) != len(body):
                raise HttpParseError(
                    f"Content-Length {v!r} does not match body of {len(body)} bytes", "Content-Length")
    parts = first.split(" ", 2)
    if len(parts) < 2:
        raise HttpParseError(f"malformed start line {first!r}")
    if parts[0].startswith("HTTP/"):
        if url is None:
            raise HttpParseError("response URL must be supplied by the caller")
        if not parts[1].isdigit():
            raise HttpParseError(f"malformed status {parts[1]!r}")
        return HttpMessage.response(int(parts[1]), url, headers, body)
    if len(parts) != 3 or not parts[2].startswith("HTTP/"):
        raise HttpParseError(f"malformed request line {first!r}")
    return HttpMessage.request(parts[0], parts[1], headers, body)


def http_date(sim_time: int) -> str:
    return format_datetime(LAB_EPOCH + timedelta(microseconds=sim_time), usegmt=True)


def parse_http_date(value: str) -> int:
    try:
        dt = parsedate_to_datetime(value)
    except (TypeError, ValueError, IndexError) as exc:
        raise HttpParseError(f"bad HTTP date {value!r}") from exc
    if dt is None:
        raise HttpParseError(f"bad HTTP date {value!r}")
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    delta = dt - LAB_EPOCH
    return (delta.days * 86400 + delta.seconds) * SECOND + delta.microseconds


@dataclass(frozen=True)
class FreshnessInfo:
    max_age: int | None = None
    expires_at: int | None = None
    no_store: bool = False
    etag: str | None = None
    last_modified: int | None = None

    def lifetime(self, stored_at: int) -> int:
        """Freshness lifetime in microseconds for an entry stored at ``stored_at``."""
        if self.no_store:
            return 0
        if self.max_age is not None:
            return self.max_age * SECOND
        if self.expires_at is not None:
            return max(0, self.expires_at - stored_at)
        return 0

    def is_fresh(self, stored_at: int, now: int) -> bool:
        return now < stored_at + self.lifetime(stored_at)


def cache_control_directives(msg: HttpMessage) -> list[tuple[str, str | None]]:
    out = []
    for value in msg.get_all("Cache-Control"):
        for item in value.split(","):
            item = item.strip()
            if not item:
                continue
            name, eq, arg = item.partition("=")
            out.append((name.strip().lower(), arg.strip() if eq else None))
    return out


def parse_freshness(msg: HttpMessage, now: int) -> FreshnessInfo:
    """Read lifetime and validators from a response.

    An unparseable ``Expires`` means "already expired" and pins the expiry
    to ``now``. A malformed ``max-age`` raises.
    """
    if msg.is_request:
        raise ValueError("parse_freshness needs a response")
    max_age = None
    no_store = False
    for name, arg in cache_control_directives(msg):
        if name == "no-store":
            no_store = True
        elif name == "max-age" and max_age is None:
            raw = (arg or "").strip('"')
            if not raw.isdigit():
                raise HttpParseError(f"malformed max-age {arg!r}", "Cache-Control")
            max_age = int(raw)
    expires_at = None
    if max_age is None and (expires := msg.get("Expires")) is not None:
        try:
            expires_at = parse_http_date(expires)
        except HttpParseError:
            expires_at = now
    last_modified = None
    if (lm := msg.get("Last-Modified")) is not None:
        try:
            last_modified = parse_http_date(lm)
        except HttpParseError:
            last_modified = None
    return FreshnessInfo(max_age, expires_at, no_store, msg.get("ETag"), last_modified)


def strip_conditional_headers(req: HttpMessage) -> HttpMessage:
    if not req.is_request:
        raise ValueError("strip_conditional_headers needs a request")
    return req.without(*CONDITIONAL_HEADERS)


def add_cache_buster(url: Url | str, token: int, param: str = "t") -> Url:
    """Append ``param=<token>`` so the URL becomes a distinct cache key."""
    url = Url.parse(url)
    if token < 0:
        raise ValueError("token must be unsigned")
    if any(k == param for k, _ in url.query_params()):
        raise CacheBusterError(f"{url.display} already has a {param!r} parameter")
    query = f"{url.query}&{param}={token}" if url.query else f"{param}={token}"
    return url.with_query(query)
