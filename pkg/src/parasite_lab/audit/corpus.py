"""Snapshot corpora: one JSON record per (site, day)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

OBJECT_KINDS = ("js", "html", "other")


class CorpusError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True)
class WebObjectRecord:
    name: str
    hash: str
    kind: str = "js"

    def __post_init__(self):
        if self.kind not in OBJECT_KINDS:
            raise ValueError(f"object kind must be one of {OBJECT_KINDS}")


@dataclass
class SiteSnapshot:
    site: str
    day: int
    scheme: str = "https"
    ssl_version: str | None = None
    headers: list[tuple[str, str]] = field(default_factory=list)
    objects: list[WebObjectRecord] = field(default_factory=list)
    missing: bool = False

    def header_values(self, name: str) -> list[str]:
        name = name.lower()
        return [v for n, v in self.headers if n.lower() == name]

    def scripts(self) -> dict[str, str]:
        """Named (non-inline) scripts mapped to their hash; first occurrence wins."""
        out: dict[str, str] = {}
        for o in self.objects:
            if o.kind == "js" and o.name and o.name not in out:
                out[o.name] = o.hash
        return out

    def to_dict(self) -> dict:
        d = {"site": self.site, "day": self.day, "scheme": self.scheme,
             "ssl_version": self.ssl_version, "headers": [list(h) for h in self.headers],
             "objects": [{"name": o.name, "hash": o.hash, "kind": o.kind} for o in self.objects]}
        if self.missing:
            d["missing"] = True
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SiteSnapshot:
        if not isinstance(d, dict):
            raise ValueError("record must be an object")
        for key in ("site", "day"):
            if key not in d:
                raise ValueError(f"record lacks {key!r}")
        if not isinstance(d["day"], int) or d["day"] < 0:
            raise ValueError("day must be a non-negative integer")
        scheme = d.get("scheme", "https")
        if scheme not in ("http", "https"):
            raise ValueError(f"scheme must be http or https, not {scheme!r}")
        headers = [(str(n), str(v)) for n, v in d.get("headers", [])]
        objects = [WebObjectRecord(o.get("name", ""), o["hash"], o.get("kind", "js"))
                   for o in d.get("objects", [])]
        return cls(str(d["site"]).lower(), d["day"], scheme, d.get("ssl_version"), headers, objects,
                   bool(d.get("missing", False)))


class Corpus:
    """Snapshots indexed by site and day. Day 0 of the corpus is its smallest day index."""

    def __init__(self, snapshots: Iterable[SiteSnapshot] = ()):
        self._by_site: dict[str, dict[int, SiteSnapshot]] = {}
        for s in snapshots:
            self.add(s)

    def add(self, snap: SiteSnapshot, line: int | None = None) -> None:
        days = self._by_site.setdefault(snap.site, {})
        if snap.day in days:
            raise CorpusError(f"duplicate record for {snap.site} day {snap.day}", line)
        days[snap.day] = snap

    @property
    def sites(self) -> list[str]:
        return sorted(self._by_site)

    def __len__(self) -> int:
        return len(self._by_site)

    def days_of(self, site: str) -> dict[int, SiteSnapshot]:
        return self._by_site[site]

    @property
    def first_day(self) -> int:
        return min(min(d) for d in self._by_site.values())

    @property
    def last_day(self) -> int:
        return max(max(d) for d in self._by_site.values())

    @property
    def span(self) -> int:
        if not self._by_site:
            return 0
        return self.last_day - self.first_day + 1

    def latest(self, site: str) -> SiteSnapshot | None:
        days = self._by_site[site]
        for day in sorted(days, reverse=True):
            if not days[day].missing:
                return days[day]
        return None

    @classmethod
    def loads(cls, text: str) -> Corpus:
        return cls.from_lines(text.splitlines())

    @classmethod
    def load(cls, path: str | Path) -> Corpus:
        with open(path, encoding="utf-8") as fh:
            return cls.from_lines(fh)

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> Corpus:
        corpus = cls()
        for lineno, line in enumerate(lines, 1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"not JSON: {exc.msg}", lineno) from None
            if isinstance(d, dict) and "_meta" in d:
                continue
            try:
                snap = SiteSnapshot.from_dict(d)
            except (KeyError, TypeError, ValueError) as exc:
                raise CorpusError(f"bad record: {exc}", lineno) from None
            corpus.add(snap, lineno)
        return corpus

    def dumps(self, meta: dict | None = None) -> str:
        out = []
        if meta is not None:
            out.append(json.dumps({"_meta": meta}, separators=(",", ":")))
        for site in self.sites:
            for day in sorted(self._by_site[site]):
                out.append(json.dumps(self._by_site[site][day].to_dict(), separators=(",", ":")))
        return "\n".join(out) + "\n"
