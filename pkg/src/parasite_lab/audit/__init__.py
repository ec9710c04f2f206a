"""Persistency and security-header analysis of snapshot corpora."""

from .corpus import Corpus, CorpusError, SiteSnapshot, WebObjectRecord
from .generate import CorpusTargets, UnrepresentableError, count_for, generate_corpus
from .headers import AuditReport, csp_status, header_audit, hsts_status, is_bare_wildcard, \
    is_mixed_wildcard, load_preload, normalize_ssl, parse_csp
from .persistency import PersistencyCurve, WindowRangeError, persistency_curve, script_runs, \
    select_targets, site_runs

__all__ = [
    "Corpus", "CorpusError", "SiteSnapshot", "WebObjectRecord",
    "CorpusTargets", "UnrepresentableError", "count_for", "generate_corpus",
    "AuditReport", "csp_status", "header_audit", "hsts_status", "is_bare_wildcard",
    "is_mixed_wildcard", "load_preload", "normalize_ssl", "parse_csp",
    "PersistencyCurve", "WindowRangeError", "persistency_curve", "script_runs",
    "select_targets", "site_runs",
]
