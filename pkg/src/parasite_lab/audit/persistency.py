"""How long script names and contents stay put, measured from the corpus's first day.

A run for a script starts on day 0 and lasts while the script is present
every day (and, for content, while its hash equals the day-0 hash). A
missing or absent day ends the run.
"""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import Corpus


class WindowRangeError(ValueError):
    pass


@dataclass(frozen=True)
class PersistencyCurve:
    sites: int
    points: dict[int, tuple[float, float]]  # window -> (name fraction, content fraction)

    def name(self, window: int) -> float:
        return self.points[window][0]

    def content(self, window: int) -> float:
        return self.points[window][1]

    def to_dict(self) -> dict:
        return {str(w): {"name": n, "content": c} for w, (n, c) in sorted(self.points.items())}


def script_runs(corpus: Corpus, site: str) -> dict[str, tuple[int, int]]:
    """Per script name: (name run, content run) in days from day 0."""
    day0 = corpus.first_day
    days = corpus.days_of(site)
    first = days.get(day0)
    if first is None or first.missing:
        return {}
    base = first.scripts()
    runs = {name: [1, 1] for name in base}
    alive_name = set(base)
    alive_content = set(base)
    day = day0 + 1
    while alive_name:
        snap = days.get(day)
        if snap is None or snap.missing:
            break
        scripts = snap.scripts()
        alive_name &= scripts.keys()
        alive_content = {n for n in alive_content & alive_name if scripts[n] == base[n]}
        for n in alive_name:
            runs[n][0] += 1
        for n in alive_content:
            runs[n][1] += 1
        day += 1
    return {n: (r[0], r[1]) for n, r in runs.items()}


def site_runs(corpus: Corpus, site: str) -> tuple[int, int]:
    runs = script_runs(corpus, site).values()
    return max((r[0] for r in runs), default=0), max((r[1] for r in runs), default=0)


def _check_window(corpus: Corpus, window: int) -> None:
    if len(corpus) == 0:
        raise ValueError("corpus is empty")
    if window < 1:
        raise WindowRangeError("window must be at least one day")
    if window > corpus.span:
        raise WindowRangeError(f"window of {window} days exceeds the corpus span of {corpus.span} days")


def persistency_curve(corpus: Corpus, max_window: int, windows=None) -> PersistencyCurve:
    """Name and content persistency fractions for windows 1..max_window (or ``windows``)."""
    _check_window(corpus, max_window)
    wanted = sorted(set(windows)) if windows else list(range(1, max_window + 1))
    for w in wanted:
        _check_window(corpus, w)
    runs = [site_runs(corpus, s) for s in corpus.sites]
    n = len(runs)
    points = {}
    for w in wanted:
        name = sum(1 for r in runs if r[0] >= w)
        content = sum(1 for r in runs if r[1] >= w)
        points[w] = (name / n, content / n)
    return PersistencyCurve(n, points)


def select_targets(corpus: Corpus, window: int) -> dict[str, list[str]]:
    """Scripts present on every day of the window, most hash-stable first."""
    _check_window(corpus, window)
    day0 = corpus.first_day
    out = {}
    for site in corpus.sites:
        runs = script_runs(corpus, site)
        days = corpus.days_of(site)
        ranked = []
        for name, (name_run, _) in runs.items():
            if name_run < window:
                continue
            base = days[day0].scripts()[name]
            same = sum(1 for d in range(day0, day0 + window) if days[d].scripts()[name] == base)
            ranked.append((-same / window, name))
        out[site] = [name for _, name in sorted(ranked)]
    return out
