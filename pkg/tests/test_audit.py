import json

import pytest
from hypothesis import given, settings, strategies as st

from parasite_lab.audit import (Corpus, CorpusError, CorpusTargets, SiteSnapshot, UnrepresentableError,
                                WebObjectRecord, count_for, generate_corpus, header_audit, parse_csp,
                                persistency_curve, select_targets)
from parasite_lab.audit.headers import csp_status, hsts_status, normalize_ssl
from parasite_lab.audit.persistency import WindowRangeError


def js(name, h):
    return WebObjectRecord(name, h, "js")


def snap(site, day, scripts=(), headers=(), scheme="https", ssl="TLS1.2", missing=False):
    return SiteSnapshot(site, day, scheme, ssl if scheme == "https" else None, list(headers),
                        [js(n, h) for n, h in scripts], missing)


def stable_corpus(stable_sites, churn_sites, days=10):
    c = Corpus()
    for i in range(stable_sites):
        for d in range(days):
            c.add(snap(f"stable{i}.test", d, [("/a.js", "h0")]))
    for i in range(churn_sites):
        for d in range(days):
            c.add(snap(f"churn{i}.test", d, [(f"/a.{d}.js", "h0")]))
    return c


def test_seven_of_eight():
    c = stable_corpus(7, 1)
    curve = persistency_curve(c, 10, [5])
    assert curve.name(5) == 0.875 and curve.content(5) == 0.875


def test_no_named_scripts_is_zero():
    c = Corpus()
    for d in range(5):
        c.add(SiteSnapshot("inline.test", d, objects=[WebObjectRecord("", "x", "js")]))
    assert persistency_curve(c, 5).points == {w: (0.0, 0.0) for w in range(1, 6)}


def test_total_churn():
    curve = persistency_curve(stable_corpus(0, 4), 10)
    assert curve.name(1) == 1.0  # day 0 always counts for itself
    assert all(curve.name(w) == 0.0 for w in range(2, 11))


def test_content_change_breaks_content_only():
    c = Corpus()
    for d in range(6):
        c.add(snap("s.test", d, [("/a.js", "h0" if d < 3 else "h1")]))
    curve = persistency_curve(c, 6)
    assert curve.name(6) == 1.0
    assert curve.content(3) == 1.0 and curve.content(4) == 0.0


def test_missing_day_ends_run():
    c = Corpus()
    for d in range(6):
        c.add(snap("s.test", d, [("/a.js", "h0")], missing=(d == 2)))
    assert persistency_curve(c, 6).name(2) == 1.0
    assert persistency_curve(c, 6).name(3) == 0.0


def test_window_range():
    c = stable_corpus(1, 0, days=5)
    with pytest.raises(WindowRangeError):
        persistency_curve(c, 6)
    with pytest.raises(WindowRangeError):
        persistency_curve(c, 0)
    with pytest.raises(WindowRangeError):
        select_targets(c, 9)


def test_select_targets_ranks_by_stability():
    c = Corpus()
    for d in range(10):
        c.add(snap("s.test", d, [("/stable.js", "a" if d < 9 else "b"),
                                 ("/jumpy.js", "a" if d < 4 else f"v{d}"),
                                 ("/gone.js", "a")] if d < 6 else
                   [("/stable.js", "a" if d < 9 else "b"), ("/jumpy.js", f"v{d}")]))
    assert select_targets(c, 10) == {"s.test": ["/stable.js", "/jumpy.js"]}
    assert select_targets(c, 6)["s.test"] == ["/gone.js", "/stable.js", "/jumpy.js"]


# independent oracle: scan every (site, window) directly from day 0


def brute_curve(records, days, w):
    by = {}
    for r in records:
        by.setdefault(r.site, {})[r.day] = r
    name_ok = content_ok = 0
    for site, snaps in by.items():
        base = snaps.get(0)
        best_name = best_content = False
        if base is not None and not base.missing:
            base_scripts = {o.name: o.hash for o in reversed(base.objects) if o.kind == "js" and o.name}
            for script, h in base_scripts.items():
                window = [snaps.get(d) for d in range(w)]
                if all(s is not None and not s.missing and any(o.name == script and o.kind == "js"
                                                               for o in s.objects) for s in window):
                    best_name = True
                    if all(next(o.hash for o in s.objects if o.name == script and o.kind == "js") == h
                           for s in window):
                        best_content = True
        name_ok += best_name
        content_ok += best_content
    return name_ok / len(by), content_ok / len(by)


@st.composite
def random_corpus(draw):
    n_sites = draw(st.integers(1, 50))
    days = draw(st.integers(1, 30))
    names = ["/a.js", "/b.js", "/c.js"]
    recs = []
    for i in range(n_sites):
        present = draw(st.lists(st.sampled_from(names), max_size=3, unique=True))
        for d in range(days):
            if d and draw(st.integers(0, 9)) == 0:
                present = draw(st.lists(st.sampled_from(names), max_size=3, unique=True))
            missing = d > 0 and draw(st.integers(0, 19)) == 0
            objs = [js(n, f"h{draw(st.integers(0, 1)) if d else 0}") for n in present]
            recs.append(SiteSnapshot(f"s{i}.test", d, objects=objs, missing=missing))
    return recs, days


@settings(max_examples=60, deadline=None)
@given(random_corpus())
def test_curve_matches_brute_force(data):
    recs, days = data
    curve = persistency_curve(Corpus(recs), days)
    for w in range(1, days + 1):
        assert curve.points[w] == pytest.approx(brute_curve(recs, days, w))


@settings(max_examples=60, deadline=None)
@given(random_corpus())
def test_monotone_and_content_below_name(data):
    recs, days = data
    c = Corpus(recs)
    curve = persistency_curve(c, days)
    for w in range(1, days + 1):
        assert curve.content(w) <= curve.name(w)
        if w > 1:
            assert curve.name(w) <= curve.name(w - 1)
            assert curve.content(w) <= curve.content(w - 1)
    for w in (1, days):
        chosen = select_targets(c, w)
        persistent = {s for s, names in chosen.items() if names}
        assert len(persistent) / len(c) == curve.name(w)


# headers


def audit_of(snaps, preload=()):
    return header_audit(Corpus(snaps), set(preload))


def test_no_https_fraction():
    snaps = [snap(f"s{i}.test", 0, scheme="http" if i < 21 else "https") for i in range(100)]
    assert audit_of(snaps).no_https_fraction == 0.21


def test_latest_snapshot_is_used():
    snaps = [snap("s.test", 0, scheme="http"), snap("s.test", 1, scheme="https"),
             snap("s.test", 2, scheme="http", missing=True)]
    assert audit_of(snaps).no_https_fraction == 0.0


def test_deprecated_csp_variant():
    r = audit_of([snap("s.test", 0, headers=[("X-Webkit-CSP", "default-src 'self'")])])
    assert r.csp["present"] == 1 and r.csp_variant["x_webkit_csp"] == 1


def test_standard_csp_wins_over_deprecated():
    s = snap("s.test", 0, headers=[("X-Content-Security-Policy", "connect-src *"),
                                    ("Content-Security-Policy", "connect-src 'self'")])
    presence, variant, policy = csp_status(s)
    assert (presence, variant, policy["connect-src"]) == ("present", "standard", ["'self'"])


def test_connect_src_partition():
    heads = {
        "a": "default-src 'self'; connect-src *",
        "b": "connect-src * https://api.b.test",
        "c": "connect-src 'self'",
        "d": "default-src 'self'",
        "e": "",
    }
    snaps = [snap(f"{k}.test", 0, headers=[("Content-Security-Policy", v)]) for k, v in heads.items()]
    snaps.append(snap("f.test", 0))
    r = audit_of(snaps)
    assert r.connect_src == {"bare_wildcard": 1, "mixed_wildcard": 1, "restricted": 1, "not_used": 3}
    assert r.connect_src_uses == 3 and r.connect_src_wildcards == 1
    assert r.csp == {"present": 4, "empty": 1, "absent": 1, "malformed": 0}


def test_hsts_and_ssl():
    assert hsts_status(snap("a", 0, headers=[("strict-transport-security", "max-age=300")])) == "present"
    assert hsts_status(snap("a", 0, headers=[("Strict-Transport-Security", "includeSubDomains")])) == "malformed"
    assert hsts_status(snap("a", 0)) == "absent"
    assert [normalize_ssl(v) for v in ("SSLv3", "SSL 3.0", "ssl2", "TLSv1.2", "TLS1.3")] == \
        ["ssl3", "ssl3", "ssl2", "tls1.2", "tls1.3"]


def test_parse_csp():
    assert parse_csp("default-src 'self'; Connect-Src *; connect-src 'none' ;;") == \
        {"default-src": ["'self'"], "connect-src": ["*"]}
    assert parse_csp("") == {}


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["http", "https"]),
                          st.sampled_from(["SSLv3", "TLS1.2", "ssl2", None]),
                          st.lists(st.sampled_from([
                              ("Strict-Transport-Security", "max-age=1"),
                              ("Strict-Transport-Security", "bogus"),
                              ("Content-Security-Policy", "connect-src *"),
                              ("X-Webkit-CSP", "connect-src * x"),
                              ("X-Content-Security-Policy", "img-src 'self'"),
                              ("Content-Security-Policy", "  "),
                              ("Content-Security-Policy", "b@d-directive x"),
                          ]), max_size=4)), min_size=1, max_size=40))
def test_partitions_sum_to_site_count(rows):
    snaps = [SiteSnapshot(f"s{i}.test", 0, scheme, ssl, headers) for i, (scheme, ssl, headers) in enumerate(rows)]
    r = audit_of(snaps, preload=["s0.test"])
    for name, buckets in r.partitions().items():
        assert sum(buckets.values()) == len(rows), name


# corpus files


def test_corpus_round_trip_and_errors():
    c = stable_corpus(2, 1, days=3)
    again = Corpus.loads(c.dumps({"tool": "x"}))
    assert again.dumps() == c.dumps()
    with pytest.raises(CorpusError) as exc:
        Corpus.loads('{"site":"a","day":0}\n{"site": oops}\n')
    assert exc.value.line == 2
    with pytest.raises(CorpusError, match="duplicate"):
        Corpus.loads('{"site":"a","day":0}\n{"site":"a","day":0}\n')
    with pytest.raises(CorpusError, match="scheme"):
        Corpus.loads('{"site":"a","day":0,"scheme":"ftp"}\n')


# generator


def test_generator_closure_exact():
    t = CorpusTargets(sites=40, days=12, name_persistency={5: 0.75, 12: 0.5},
                      content_persistency={5: 0.5, 12: 0.25}, no_https=0.25, vulnerable_ssl=0.05,
                      no_hsts=0.5, preload=0.1, csp_presence=0.5, csp_deprecated=0.5, connect_src=0.5,
                      connect_src_wildcard=0.2)
    corpus, preload = generate_corpus(t, seed=3)
    curve = persistency_curve(corpus, 12, [5, 12])
    assert curve.points == {5: (0.75, 0.5), 12: (0.5, 0.25)}
    r = header_audit(corpus, set(preload))
    assert r.no_https_fraction == 0.25
    assert r.vulnerable_ssl_fraction == 0.05
    assert r.no_hsts_fraction == 0.5
    assert r.preload["listed"] == 4
    assert r.csp_presence_fraction == 0.5
    assert r.csp_variant["x_csp"] + r.csp_variant["x_webkit_csp"] == 10
    assert r.connect_src_uses == 10 and r.connect_src_wildcards == 2


def test_generator_is_deterministic():
    t = CorpusTargets(sites=10, days=4, name_persistency={2: 0.5})
    assert generate_corpus(t, 5)[0].dumps() == generate_corpus(t, 5)[0].dumps()


def test_unrepresentable_fraction():
    with pytest.raises(UnrepresentableError) as exc:
        generate_corpus(CorpusTargets(sites=7, days=6, name_persistency={5: 0.875}))
    assert exc.value.nearest == pytest.approx(6 / 7)
    assert count_for("x", 0.875, 7, allow_rounding=True) == 6
    assert count_for("x", 0.875, 8) == 7


def test_generator_rejects_inconsistent_targets():
    with pytest.raises(ValueError):
        generate_corpus(CorpusTargets(sites=4, days=5, name_persistency={2: 0.25, 4: 0.5}))
    with pytest.raises(ValueError):
        generate_corpus(CorpusTargets(sites=4, days=5, name_persistency={2: 0.25}, content_persistency={2: 0.5}))
    with pytest.raises(ValueError):
        generate_corpus(CorpusTargets(sites=4, days=5, no_https=1.0, no_hsts=0.5))
    with pytest.raises(ValueError, match="unknown"):
        CorpusTargets.from_dict({"sitez": 3})


def test_targets_dict_round_trip():
    t = CorpusTargets(sites=8, name_persistency={5: 0.875})
    assert CorpusTargets.from_dict(json.loads(json.dumps(t.to_dict()))) == t
