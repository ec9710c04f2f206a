"""End-to-end acceptance checks, one test per criterion.

Each test writes a single ``ACCEPTANCE <n> PASS|FAIL`` line to the terminal.
"""

import contextlib
import random
import time
from collections import Counter, OrderedDict

import pytest

from parasite_lab.audit import CorpusTargets, generate_corpus, header_audit, persistency_curve
from parasite_lab.browser_cache import BrowserCache, BrowserProfile, get_profile, junk_response
from parasite_lab.c2_codec import (MAX_DIM, ImageCodeword, channel_throughput, decode_downstream, encode_downstream,
                                   measure_svg, render_svg)
from parasite_lab.http_core import HttpMessage, strip_conditional_headers
from parasite_lab.netsim import EventKind, Scenario, Simulation, dumps_log, propagate_iframes, \
    propagate_shared_cache, propagate_shared_script, run_scenario
from parasite_lab.parasite import ONE_YEAR, InfectionPolicy, ParasitePayload, rewrite_response
from parasite_lab.tcp_inject import MSS, SEQ_MOD, ConnState, TcpSegment, Verdict, accept, observe, split_payload
from conftest import GOLDEN, SCENARIOS
from test_netsim import SHARED_SITES, iframe_scenario, primed, shared_cache_scenario, shared_script_scenario

KiB, MiB = 1024, 1024 * 1024


@pytest.fixture
def criterion(request):
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    @contextlib.contextmanager
    def check(n, title):
        start = time.perf_counter()
        try:
            yield
        except BaseException as exc:
            line = f"ACCEPTANCE {n} FAIL  {title}: {type(exc).__name__}: {exc}"
            raise
        else:
            line = f"ACCEPTANCE {n} PASS  {title} ({time.perf_counter() - start:.2f}s)"
        finally:
            if reporter is not None:
                reporter.write_line(line)
            print(line)

    return check


def test_c1_c2_codec(criterion):
    with criterion(1, "C&C codec round trip, worked example, SVG size, throughput"):
        rng = random.Random(1)
        edges = [0, 1, 2, 3, 4, 5, 7, 8, 64 * KiB - 1, 64 * KiB]
        # log-uniform sizes cover every order of magnitude up to 64 KiB
        sizes = edges + [min(64 * KiB, int(2 ** rng.uniform(0, 16))) for _ in range(10_000 - len(edges))]
        longest_svg = 0
        for size in sizes:
            data = rng.randbytes(size)
            frame = encode_downstream(data)
            words = list(frame.codewords)
            if size % 7 == 0:
                rng.shuffle(words)
            assert decode_downstream(words) == data
        for w, h in ((0, 0), (MAX_DIM, MAX_DIM), (57005, 48879)):
            doc = render_svg(ImageCodeword(1, w, h))
            longest_svg = max(longest_svg, len(doc))
            assert measure_svg(doc) == (w, h)
        assert longest_svg <= 130
        word = encode_downstream(bytes.fromhex("DEADBEEF")).codewords[1]
        assert (word.width, word.height) == (57005, 48879)
        t0 = time.perf_counter()
        assert channel_throughput(25600) == 102_400 == 100 * KiB
        assert time.perf_counter() - t0 < 1


class RecencyOracle:
    def __init__(self, capacity):
        self.capacity = capacity
        self.order = OrderedDict()

    def put(self, key, size):
        self.order.pop(key, None)
        self.order[key] = size
        out = []
        while sum(self.order.values()) > self.capacity:
            out.append(next(iter(self.order)))
            del self.order[out[-1]]
        return out

    def get(self, key):
        if key in self.order:
            self.order.move_to_end(key)
            return True
        return False


def _obj(url, size):
    return HttpMessage.response(200, url, [("Cache-Control", "max-age=3600")], bytes(size))


def test_c2_eviction(criterion):
    with criterion(2, "junk eviction on the Chrome profile and LRU oracle"):
        rng = random.Random(2)
        chrome = get_profile("chrome")
        assert chrome.capacity == 320 * MiB
        worst = 0
        for trial in range(12):
            cache = BrowserCache(chrome)
            fill = rng.randint(0, 300)
            keys = []
            for i in range(fill):
                url = f"http://site{i}.test/asset{i}.bin"
                cache.store_response(_obj(url, rng.randint(1, 1024) * KiB), 0)
                keys.append(url)
            target_at = rng.randint(0, len(keys))
            target = "http://victim.test/target.js"
            keys.insert(target_at, target)
            cache.store_response(_obj(target, 100 * KiB), 0)
            for url in keys[target_at + 1:]:
                cache.lookup(url, 0)  # older than the target again: target lands mid-recency
            before = [k for k in keys if cache.peek(k) is not None]
            n = 0
            while cache.peek(target) is not None:
                n += 1
                cache.store_response(junk_response(f"attacker.com/junk{n}.jpg", MiB), 0)
            worst = max(worst, n)
            assert n <= 321
            while n < cache.junk_count(MiB):
                n += 1
                cache.store_response(junk_response(f"attacker.com/junk{n}.jpg", MiB), 0)
            assert all(not cache.lookup(k, 0).hit for k in before)

        start = time.perf_counter()
        cache = BrowserCache(BrowserProfile("oracle", 5000))
        oracle = RecencyOracle(5000)
        for _ in range(10_000):
            url = f"http://o.test/{rng.randint(0, 40)}"
            if rng.random() < 0.5:
                size = rng.randint(1, 900)
                assert [e.key for e in cache.store_response(_obj(url, size), 0)] == oracle.put(url, size)
            else:
                assert cache.lookup(url, 0).hit == oracle.get(url)
            assert cache.keys() == list(oracle.order)
        assert time.perf_counter() - start < 5


def test_c3_tcp_injection(criterion):
    with criterion(3, "mirror-rule injection wins, later genuine reply ignored"):
        rng = random.Random(3)
        start = time.perf_counter()
        verdicts = Counter()
        for _ in range(10_000):
            seq = rng.choice([rng.randrange(SEQ_MOD), SEQ_MOD - rng.randint(1, 4000)])
            req = TcpSegment(rng.randint(1024, 65535), rng.choice([80, 8080]), seq,
                             rng.randrange(SEQ_MOD), rng.randbytes(rng.randint(1, 1500)))
            conn = ConnState(req.src_port, req.dst_port, req.ack)
            params = observe(req)
            forged = rng.randbytes(rng.randint(1, 3 * MSS))
            genuine = rng.randbytes(rng.randint(1, len(forged)))
            for seg in split_payload(params, forged, arrival_time=1):
                assert accept(conn, seg).verdict is Verdict.DELIVERED
            for seg in split_payload(params, genuine, arrival_time=2):
                v = accept(conn, seg).verdict
                verdicts[v] += 1
                assert v is Verdict.IGNORED_DUPLICATE
            assert conn.delivered == forged
        assert time.perf_counter() - start < 5
        assert set(verdicts) == {Verdict.IGNORED_DUPLICATE}


def test_c4_parasite_construction(criterion, tmp_path):
    from parasite_lab.cli import main

    with criterion(4, "golden infection flow, rewrite rules, forced 200s"):
        out = tmp_path / "infection.ndjson"
        assert main(["sim", "--scenario", str(SCENARIOS / "infection.json"), "--out", str(out)]) == 0
        golden = (GOLDEN / "infection.ndjson").read_bytes()
        assert out.read_bytes() == golden
        assert b'"request":"GET somesite.com/my.js?t=500198"' in golden

        rng = random.Random(4)
        policy = InfectionPolicy()
        payload = ParasitePayload.marked("acc", "steal()")
        security = [("Content-Security-Policy", "default-src 'self'"), ("X-Frame-Options", "DENY"),
                    ("Strict-Transport-Security", "max-age=600")]
        for i in range(500):
            body = rng.randbytes(rng.randint(0, 2000)).replace(b"/*", b"")
            resp = HttpMessage.response(200, f"http://s{i}.test/a.js",
                                        [("Content-Type", "application/javascript"),
                                         ("Cache-Control", "max-age=60")] + security, body)
            out_resp = rewrite_response(resp, policy, payload)
            assert out_resp.body == body + b"; " + payload.code_bytes + b";"
            assert not any(out_resp.has(h) for h, _ in security)
            assert out_resp.get("Cache-Control") == f"max-age={ONE_YEAR}"
            assert out_resp.get("Content-Length") == str(len(out_resp.body))

        sim = Simulation(Scenario.load(SCENARIOS / "infection.json"))
        objects = [(host, obj) for host, site in sim.scenario.sites.items() if site.role != "attacker"
                   for obj in site.objects.values()]
        assert len(objects) >= 5
        for host, obj in objects:
            url = f"http://{host}{obj.url.path}"
            for cond in ([("If-None-Match", obj.etag)], [("If-Modified-Since", "Thu, 01 Jan 1970 00:00:00 GMT")],
                         [("If-None-Match", obj.etag), ("If-Modified-Since", "x")]):
                req = HttpMessage.request("GET", url, [("Host", host)] + cond)
                assert sim._origin_response(strip_conditional_headers(req)).status == 200
            assert sim._origin_response(HttpMessage.request("GET", url, [("If-None-Match", obj.etag)])).status == 304


def test_c5_propagation(criterion):
    with criterion(5, "shared cache, iframes and partitioned isolation"):
        sim = primed(shared_cache_scenario())
        injects = len([e for e in sim.events if e.kind is EventKind.INJECT])
        assert propagate_shared_cache(sim, "squid", ["c2", "c3"], "news.example/") == ["c2", "c3"]
        assert len([e for e in sim.events if e.kind is EventKind.INJECT]) == injects

        sim = primed(iframe_scenario())
        keys = propagate_iframes(sim, "blog.example", ["top1.com/", "top2.com/", "top3.com/", "bank.example/"])
        assert keys == [f"http://top{i}.com/persistent.js" for i in (1, 2, 3)]
        assert [e.detail["url"] for e in sim.events if e.kind is EventKind.BLOCKED] == ["bank.example/"]

        sim = primed(shared_script_scenario("chrome-partitioned"))
        mark = len(sim.events)
        fired = propagate_shared_script(sim, "analytics.test/ga.js", SHARED_SITES)
        cross = [e for e in sim.events[mark:] if e.kind is EventKind.ATTACK_DISPATCH
                 and e.detail["page"].split("/")[0] != "s1.test"]
        assert fired == {"s1.test"} and cross == []


def test_c6_persistence(criterion):
    with criterion(6, "dispatch after the attacker leaves, until cookies are cleared"):
        events = run_scenario(Scenario.load(SCENARIOS / "persistence.json"))
        leave = next(e for e in events if e.kind is EventKind.NOTE and e.detail["what"] == "attacker_leave")
        cookies = next(e for e in events if e.kind is EventKind.CLEAR and e.detail["mode"] == "clear_cookies")
        cache_clear = next(e for e in events if e.kind is EventKind.CLEAR and e.detail["mode"] == "clear_cache")
        dispatch = [e for e in events if e.kind is EventKind.ATTACK_DISPATCH]
        phase2 = [e for e in dispatch if e.seq > leave.seq]
        assert any(e.seq < cache_clear.seq for e in phase2)
        assert any(cache_clear.seq < e.seq < cookies.seq for e in phase2)
        assert not [e for e in dispatch if e.seq > cookies.seq]
        assert not [e for e in events if e.kind is EventKind.INJECT and e.seq > leave.seq]


HEADLINE = CorpusTargets(
    sites=1000, days=100,
    name_persistency={5: 0.875, 100: 0.753},
    no_https=0.21, no_hsts=0.6792, csp_presence=0.0433,
    connect_src=1.0, connect_src_wildcard=17 / 160,
)


def test_c7_audit_closure(criterion):
    with criterion(7, "generated 1000-site corpus audits back to the targets"):
        start = time.perf_counter()
        corpus, preload = generate_corpus(HEADLINE, seed=1, allow_rounding=True)
        curve = persistency_curve(corpus, 100, [5, 100])
        report = header_audit(corpus, set(preload))
        elapsed = time.perf_counter() - start
        n = HEADLINE.sites
        one_site = 1 / n
        for w, target in HEADLINE.name_persistency.items():
            assert abs(curve.name(w) - target) <= one_site
        assert abs(report.no_https_fraction - 0.21) <= one_site
        assert abs(report.no_hsts_fraction - 0.6792) <= one_site
        assert abs(report.csp_presence_fraction - 0.0433) <= one_site
        users = report.connect_src_uses
        assert abs(report.connect_src_wildcards - 17 / 160 * users) <= 1
        assert elapsed < 10


def test_c8_determinism(criterion):
    with criterion(8, "every scenario replays bit-identically"):
        for path in sorted(SCENARIOS.glob("*.json")):
            sc = Scenario.load(path)
            for seed in (None, 0, 12345):
                assert dumps_log(run_scenario(sc, seed)) == dumps_log(run_scenario(Scenario.load(path), seed))
