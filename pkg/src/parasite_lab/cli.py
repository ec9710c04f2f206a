"""``parasite-lab`` command line: sim, audit, gen-corpus and report.

Exit codes: 0 success, 1 internal error, 2 bad input.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import TOOL, __version__
from .audit import Corpus, CorpusError, CorpusTargets, UnrepresentableError, generate_corpus, \
    header_audit, load_preload, persistency_curve
from .audit.persistency import WindowRangeError
from .netsim import Scenario, ScenarioError, read_log, run_scenario, summarize, write_log

log = logging.getLogger("parasite_lab")


class UserError(Exception):
    """Bad input; reported on stderr with exit status 2."""


def _digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _meta(seed: int, **inputs) -> dict:
    return {"tool": TOOL, "version": __version__, "seed": seed, **inputs}


def _write(out: str | None, text: str) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _read_path(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UserError(f"{what} {path}: no such file")
    return p


def _windows(values: list[str] | None) -> list[int]:
    out = []
    for v in values or []:
        for part in v.split(","):
            if part.strip():
                try:
                    out.append(int(part))
                except ValueError:
                    raise UserError(f"--window expects integers, got {part!r}") from None
    return out


def cmd_sim(args) -> int:
    path = _read_path(args.scenario, "scenario")
    try:
        scenario = Scenario.load(path)
    except ScenarioError as exc:
        for line in exc.diagnostics():
            print(line, file=sys.stderr)
        return 2
    seed = scenario.seed if args.seed is None else args.seed
    events = run_scenario(scenario, seed)
    meta = _meta(seed, scenario=path.name, scenario_sha256=scenario.digest)
    if args.out and args.out != "-":
        with open(args.out, "w", encoding="utf-8") as fh:
            write_log(events, fh, meta)
    else:
        write_log(events, sys.stdout, meta)
    summary = summarize(events)
    print(_render({"_meta": meta, **summary}, args.format), file=sys.stderr if not args.out else sys.stdout,
          end="")
    return 0


def _load_corpus(path: str) -> Corpus:
    p = _read_path(path, "corpus")
    try:
        corpus = Corpus.load(p)
    except CorpusError as exc:
        raise UserError(f"{path}:{exc.line or 1}: {exc}") from None
    if len(corpus) == 0:
        raise UserError(f"{path}: corpus is empty")
    return corpus


def cmd_audit(args) -> int:
    corpus = _load_corpus(args.corpus)
    preload = set()
    inputs = {"corpus_sha256": _digest(args.corpus)}
    if args.preload:
        preload = load_preload(_read_path(args.preload, "preload list"))
        inputs["preload_sha256"] = _digest(args.preload)
    report = header_audit(corpus, preload)
    windows = _windows(args.window)
    if windows:
        try:
            curve = persistency_curve(corpus, max(windows), windows)
        except WindowRangeError as exc:
            raise UserError(str(exc)) from None
        report.persistency = curve.to_dict()
    meta = _meta(args.seed, **inputs)
    if args.format == "table":
        _write(args.out, report.to_table())
    else:
        _write(args.out, json.dumps({"_meta": meta, **report.to_dict()}, indent=2) + "\n")
    if args.out and args.out != "-" and args.format == "json":
        sys.stdout.write(report.to_table())
    return 0


def _parse_window_fraction(values: list[str] | None, flag: str) -> dict[int, float]:
    out = {}
    for v in values or []:
        w, eq, f = v.partition("=")
        try:
            out[int(w)] = float(f)
        except ValueError:
            raise UserError(f"{flag} expects WINDOW=FRACTION, got {v!r}") from None
        if not eq:
            raise UserError(f"{flag} expects WINDOW=FRACTION, got {v!r}")
    return out


def cmd_gen_corpus(args) -> int:
    data = {}
    if args.targets:
        try:
            data = json.loads(_read_path(args.targets, "targets file").read_text())
        except json.JSONDecodeError as exc:
            raise UserError(f"{args.targets}:{exc.lineno}: {exc.msg}") from None
    for key in ("sites", "days", "no_https", "no_hsts", "vulnerable_ssl", "preload", "csp_presence",
                "csp_deprecated", "connect_src", "connect_src_wildcard"):
        value = getattr(args, key)
        if value is not None:
            data[key] = value
    for key, flag in (("name_persistency", "--name-persistency"),
                      ("content_persistency", "--content-persistency")):
        extra = _parse_window_fraction(getattr(args, key), flag)
        if extra:
            data.setdefault(key, {}).update({str(w): f for w, f in extra.items()})
    try:
        targets = CorpusTargets.from_dict(data)
        corpus, preload = generate_corpus(targets, args.seed, args.allow_rounding)
    except UnrepresentableError as exc:
        raise UserError(f"{exc}; pass --allow-rounding to accept it") from None
    except (TypeError, ValueError) as exc:
        raise UserError(str(exc)) from None
    meta = _meta(args.seed, targets=targets.to_dict(), rounding=args.allow_rounding)
    _write(args.out, corpus.dumps(meta))
    if args.preload_out:
        Path(args.preload_out).write_text("".join(h + "\n" for h in preload), encoding="utf-8")
    return 0


def cmd_report(args) -> int:
    if not args.log and not args.corpus:
        raise UserError("report needs --log or --corpus")
    if args.corpus:
        return cmd_audit(args)
    path = _read_path(args.log, "event log")
    lines = path.read_text(encoding="utf-8").splitlines()
    meta = {}
    if lines and lines[0].startswith('{"_meta"'):
        meta = json.loads(lines[0])["_meta"]
    try:
        events = read_log(lines)
    except (ValueError, KeyError) as exc:
        raise UserError(f"{args.log}: not an event log ({exc})") from None
    summary = summarize(events)
    by_kind: dict[str, int] = {}
    for e in events:
        by_kind[e.kind.value] = by_kind.get(e.kind.value, 0) + 1
    _write(args.out, _render({"_meta": meta, **summary, "by_kind": by_kind}, args.format))
    return 0


def _render(d: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(d, indent=2) + "\n"
    rows = []
    for k, v in d.items():
        if k == "_meta":
            continue
        if isinstance(v, dict):
            rows += [(f"{k}.{kk}", vv) for kk, vv in v.items()]
        else:
            rows.append((k, v))
    width = max((len(k) for k, _ in rows), default=0)
    return "".join(f"{k.ljust(width)}  {v}\n" for k, v in rows)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog=TOOL, description="Cache-infection attack lab (simulation only).")
    p.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_default=0):
        sp.add_argument("--out", help="output path (default stdout)")
        sp.add_argument("--seed", type=int, default=seed_default)
        sp.add_argument("--format", choices=("json", "table"), default="table")

    sp = sub.add_parser("sim", help="run a scenario and write its event log")
    sp.add_argument("--scenario", required=True)
    common(sp, seed_default=None)
    sp.set_defaults(func=cmd_sim)

    sp = sub.add_parser("audit", help="persistency and header statistics of a corpus")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--preload", help="newline-delimited HSTS preload host list")
    sp.add_argument("--window", action="append", help="persistency window(s) in days")
    common(sp)
    sp.set_defaults(func=cmd_audit, format="json")

    sp = sub.add_parser("gen-corpus", help="synthesize a corpus with prescribed statistics")
    sp.add_argument("--targets", help="JSON file of target statistics")
    sp.add_argument("--sites", type=int)
    sp.add_argument("--days", type=int)
    sp.add_argument("--name-persistency", dest="name_persistency", action="append", metavar="W=F")
    sp.add_argument("--content-persistency", dest="content_persistency", action="append", metavar="W=F")
    for flag in ("no-https", "no-hsts", "vulnerable-ssl", "preload", "csp-presence", "csp-deprecated",
                 "connect-src", "connect-src-wildcard"):
        sp.add_argument(f"--{flag}", dest=flag.replace("-", "_"), type=float)
    sp.add_argument("--preload-out", help="write the generated preload list here")
    sp.add_argument("--allow-rounding", action="store_true",
                    help="round unrepresentable fractions to the nearest site count")
    common(sp)
    sp.set_defaults(func=cmd_gen_corpus)

    sp = sub.add_parser("report", help="summarize an event log or a corpus")
    sp.add_argument("--log")
    sp.add_argument("--corpus")
    sp.add_argument("--preload")
    sp.add_argument("--window", action="append")
    common(sp)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UserError as exc:
        print(f"{TOOL}: error: {exc}", file=sys.stderr)
        return 2
    except Exception:  # noqa: BLE001
        log.exception("internal error")
        return 1


if __name__ == "__main__":
    sys.exit(main())
