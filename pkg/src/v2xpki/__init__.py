"""Dual-standard vehicular PKI toolkit.

Certificate provisioning for the two major V2X credential management
designs: the IEEE 1609.2.1-style SCMS (deep hierarchy, butterfly key
expansion, zip-batched downloads) and the ETSI TS 102 941-style CCMS
(flat hierarchy, double-signed PSK-encrypted exchanges), over a shared
certificate format, envelope codec and P-256 crypto core. A benchmark
harness compares message lengths and client-side computation times
between the two flows.
"""

__version__ = "0.1.0"

__all__ = [
    "bench",
    "ccms",
    "cert",
    "codec",
    "crypto",
    "curve",
    "scms",
    "service",
    "wire",
]
