"""Deterministic network simulation of the cache-infection attack."""

from .caches import CACHE_CATALOG, CacheNodeClass, Support, cache_class
from .engine import Delivery, Simulation, run_scenario, summarize
from .events import EventKind, SimEvent, dumps_log, read_log, write_log
from .propagation import propagate_iframes, propagate_shared_cache, propagate_shared_script
from .scenario import Scenario, ScenarioError, Violation

__all__ = [
    "CACHE_CATALOG", "CacheNodeClass", "Support", "cache_class",
    "Delivery", "Simulation", "run_scenario", "summarize",
    "EventKind", "SimEvent", "dumps_log", "read_log", "write_log",
    "propagate_iframes", "propagate_shared_cache", "propagate_shared_script",
    "Scenario", "ScenarioError", "Violation",
]
