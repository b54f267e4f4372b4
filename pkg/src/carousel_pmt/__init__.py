"""Carousel private-membership-test engine.

A dictionary of hashed identifiers is compiled into a compact public
representation (sequence of differences, Bloom filter, or 4-ary cuckoo
table), cycled in fixed-size chunks through a small trusted application,
and queried privately: every admitted query rides exactly one full cycle
while the chunk stream is processed with data-independent access patterns,
so the operator learns nothing about which entries a client asked for.
A Path-ORAM-backed cuckoo table provides the classical per-query-private
baseline for comparison.
"""

from .core import (
    Dictionary,
    HashFamily,
    PmtParams,
    check_item,
    generate_dictionary,
    oracle_member,
    random_items,
    truncate_hash,
    truncate_many,
)
from .reprs import (
    DictRepresentation,
    MacMismatch,
    ReprFormatError,
    ReprKind,
    StashOverflow,
    build_bloom,
    build_cuckoo4,
    build_seqdiff,
    deserialize,
    fpr_bloom,
    fpr_cuckoo4,
    fpr_naive,
    probe_any,
    serialize,
)
from .carousel import (
    CapacityExceeded,
    CarouselTa,
    TaConfig,
    chunk_plan,
    ta_config_for,
)
from .oblivious import AccessCounter, CounterTotals, ObliviousPage
from .oram import (
    OramConfigError,
    OramParams,
    OramState,
    audit_invariant,
    coo_query,
    coo_query_many,
    oram_access,
    oram_init,
    oram_params_for,
)
from .wire import SecureChannel, TaIdentity, fixed_measurement
from .service import LookupService, PmtClient, SocketServer, TaEnclave
from . import bench

__version__ = "0.1.0"

__all__ = [
    "AccessCounter",
    "CapacityExceeded",
    "CarouselTa",
    "CounterTotals",
    "Dictionary",
    "DictRepresentation",
    "HashFamily",
    "LookupService",
    "MacMismatch",
    "ObliviousPage",
    "OramConfigError",
    "OramParams",
    "OramState",
    "PmtClient",
    "PmtParams",
    "ReprFormatError",
    "ReprKind",
    "SecureChannel",
    "SocketServer",
    "StashOverflow",
    "TaConfig",
    "TaEnclave",
    "TaIdentity",
    "audit_invariant",
    "bench",
    "build_bloom",
    "build_cuckoo4",
    "build_seqdiff",
    "check_item",
    "chunk_plan",
    "coo_query",
    "coo_query_many",
    "deserialize",
    "fixed_measurement",
    "fpr_bloom",
    "fpr_cuckoo4",
    "fpr_naive",
    "generate_dictionary",
    "oracle_member",
    "oram_access",
    "oram_init",
    "oram_params_for",
    "probe_any",
    "random_items",
    "serialize",
    "ta_config_for",
    "truncate_hash",
    "truncate_many",
]
