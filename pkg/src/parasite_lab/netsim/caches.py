"""Shared network cache classes (client-side proxies through CDNs and mobile cores)."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class Support(str, Enum):
    DEFAULT = "default"
    OPTIONAL = "optional"
    NONE = "none"
    UNDOCUMENTED = "undocumented"


@dataclass(frozen=True)
class CacheNodeClass:
    name: str
    caches_http: Support
    caches_https: Support
    instance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "caches_http", Support(self.caches_http))
        object.__setattr__(self, "caches_https", Support(self.caches_https))

    def permits(self, scheme: str, *, tls_intercept: bool = False, optional_enabled: bool = True,
                undocumented_as: Support | str = Support.NONE) -> bool:
        """Whether a node of this class stores responses fetched over ``scheme``."""
        support = self.caches_https if scheme == "https" else self.caches_http
        if support is Support.UNDOCUMENTED:
            support = Support(undocumented_as)
        if scheme == "https":
            if support is Support.DEFAULT:
                return True
            return support is Support.OPTIONAL and tls_intercept
        if support is Support.DEFAULT:
            return True
        return support is Support.OPTIONAL and optional_enabled


_D, _O, _N, _U = Support.DEFAULT, Support.OPTIONAL, Support.NONE, Support.UNDOCUMENTED

CACHE_CATALOG: dict[str, CacheNodeClass] = {
    c.instance: c
    for c in (
        CacheNodeClass("transparent_proxy", _D, _O, "squid"),
        CacheNodeClass("web_filter", _D, _O, "cisco_wsa"),
        CacheNodeClass("web_filter", _D, _O, "mcafee_web_gateway"),
        CacheNodeClass("web_filter", _D, _U, "citrix_netscaler"),
        CacheNodeClass("web_filter", _D, _N, "barracuda_web_filter"),
        CacheNodeClass("web_filter", _D, _N, "bluecoat_proxysg"),
        CacheNodeClass("firewall", _D, _O, "sophos_utm"),
        CacheNodeClass("firewall", _O, _O, "fortigate"),
        CacheNodeClass("firewall", _O, _N, "barracuda_f_series"),
        CacheNodeClass("firewall", _O, _N, "cisco_asa"),
        CacheNodeClass("firewall", _O, _N, "pfsense"),
        CacheNodeClass("transport", _O, _U, "airplane"),
        CacheNodeClass("transport", _O, _U, "cruise_vessel"),
        CacheNodeClass("reverse_proxy", _O, _O, "cdn"),
        CacheNodeClass("reverse_proxy", _O, _O, "varnish"),
        CacheNodeClass("reverse_proxy", _O, _O, "f5_bigip"),
        CacheNodeClass("reverse_proxy", _O, _O, "sitecelerate"),
        CacheNodeClass("web_application_firewall", _O, _U, "godaddy_waf"),
        CacheNodeClass("isp", _O, _N, "cachemara"),
        CacheNodeClass("mobile", _U, _N, "lte"),
        CacheNodeClass("mobile", _U, _N, "5g"),
    )
}


def cache_class(spec: str | dict) -> CacheNodeClass:
    """Catalog instance by name, or an explicit ``{type, http, https}`` mapping."""
    if isinstance(spec, str):
        try:
            return CACHE_CATALOG[spec]
        except KeyError:
            raise KeyError(f"unknown cache class {spec!r}; known: {sorted(CACHE_CATALOG)}") from None
    return CacheNodeClass(spec["type"], spec.get("http", "none"), spec.get("https", "none"),
                          spec.get("instance", spec["type"]))
