"""Path ORAM baseline and the cuckoo-on-ORAM membership front-end.

A cuckoo-table payload is sliced into fixed-size byte blocks stored in one
(or four) binary trees of encrypted nodes. Every access reads one full
root-to-leaf path into the stash, remaps the block to a fresh uniform leaf,
and greedily writes the path back from the leaf end, re-encrypting every
node with a fresh nonce. The position map lives on a deterministic number
of pages that are touched uniformly on every access. Costs are recorded as
counted node/page/stash operations; a membership query performs exactly
four sequential block reads.
"""

from __future__ import annotations

import hashlib
import hmac as hmac_mod
import random
import struct
from dataclasses import dataclass, replace

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .core import ceil_log2, check_item
from .reprs import (DictRepresentation, ReprKind, StashOverflow,
                    cuckoo_candidates, cuckoo_fingerprints)

EMPTY_ID = 0xFFFFFFFF
DEFAULT_STASH_LIMIT = 64
NONCE_BYTES = 16
TAG_BYTES = 16


class OramConfigError(Exception):
    """Parameterization cannot hold or address the table."""


@dataclass(frozen=True)
class OramParams:
    """Shape of one tree (all trees share it when tree_count is 4).

    tree_levels counts the nodes on the longest root-to-leaf path; the
    conventional edge height is tree_levels - 1. Nodes form a binary heap
    (node i has children 2i+1, 2i+2), so node_count need not be 2^k - 1.
    """

    block_bytes: int
    blocks_per_node: int           # Z
    node_count: int
    tree_levels: int
    tree_count: int = 1
    stash_limit: int = DEFAULT_STASH_LIMIT
    page_bytes: int = 4096

    def __post_init__(self):
        if self.block_bytes < 1 or self.blocks_per_node < 1 or self.node_count < 1:
            raise OramConfigError("block_bytes, Z and node_count must be positive")
        if self.tree_count not in (1, 4):
            raise OramConfigError("tree_count must be 1 or 4")
        if self.tree_levels != ceil_log2(self.node_count + 1):
            raise OramConfigError("tree_levels inconsistent with node_count")

    @property
    def edge_height(self) -> int:
        return self.tree_levels - 1

    @property
    def first_leaf(self) -> int:
        return self.node_count // 2

    @property
    def leaf_count(self) -> int:
        return self.node_count - self.node_count // 2

    @property
    def node_capacity_blocks(self) -> int:
        return self.node_count * self.blocks_per_node


def oram_params_for(table_bytes: int, block_bytes: int = 4096, z: int = 4,
                    tree_count: int = 1, complete: bool = False,
                    node_slack: float = 1.0,
                    stash_limit: int = DEFAULT_STASH_LIMIT,
                    page_bytes: int = 4096) -> OramParams:
    """Derive tree shape from the table size.

    Defaults reproduce the cost-model parametrization (nodes = exactly the
    buckets the blocks need). `complete=True` rounds the tree up to 2^k - 1
    nodes so every path has the same length; `node_slack` over-provisions
    buckets, which a functional stash needs at scale (the minimal tree runs
    at ~100% slot utilization, where no constant stash bound can hold).
    """
    blocks_total = -(-table_bytes // block_bytes)
    per_tree = -(-blocks_total // tree_count)
    nodes = max(-(-per_tree // z), int(-(-per_tree * node_slack // z)))
    if complete:
        nodes = (1 << ceil_log2(nodes + 1)) - 1
    levels = ceil_log2(nodes + 1)
    params = OramParams(block_bytes=block_bytes, blocks_per_node=z,
                        node_count=nodes, tree_levels=levels,
                        tree_count=tree_count, stash_limit=stash_limit,
                        page_bytes=page_bytes)
    if params.node_capacity_blocks < per_tree:
        raise OramConfigError("tree cannot hold all blocks")
    return params


@dataclass
class OramCounter:
    """Counted operations; inputs are public (paths, page counts, bounds)."""

    node_reads: int = 0
    node_writes: int = 0
    posmap_reads: int = 0
    posmap_writes: int = 0
    stash_selects: int = 0
    query_selects: int = 0
    accesses: int = 0

    def snapshot(self):
        return (self.node_reads, self.node_writes, self.posmap_reads,
                self.posmap_writes, self.stash_selects, self.query_selects,
                self.accesses)

    def reset(self):
        self.node_reads = self.node_writes = 0
        self.posmap_reads = self.posmap_writes = 0
        self.stash_selects = self.query_selects = self.accesses = 0


def _parent(i: int) -> int:
    return (i - 1) // 2


def _on_path_fast(node1: int, leaf1: int) -> bool:
    """Ancestor-or-self test on one-based heap labels (bit-prefix check)."""
    shift = leaf1.bit_length() - node1.bit_length()
    return shift >= 0 and (leaf1 >> shift) == node1


def _path_nodes(leaf_node: int):
    """Node indices from the root down to leaf_node."""
    path = [leaf_node]
    while path[-1] != 0:
        path.append(_parent(path[-1]))
    path.reverse()
    return path


def _on_path(node: int, leaf_node: int) -> bool:
    return _on_path_fast(node + 1, leaf_node + 1)


class _Tree:
    """One encrypted node heap plus its position map and stash."""

    def __init__(self, index: int, params: OramParams, block_count: int):
        self.index = index
        self.params = params
        self.block_count = block_count
        self.nodes = [b""] * params.node_count
        self.posmap = np.zeros(block_count, dtype=np.uint16)
        self.posmap_pages = max(1, -(-block_count * 2 // params.page_bytes))
        self.stash: dict[int, bytes] = {}


class OramState:
    """Trees, keys and counters for one cuckoo-on-ORAM instance."""

    def __init__(self, params: OramParams, rep_meta: DictRepresentation,
                 enc_key: bytes, mac_key: bytes, seed: int):
        self.params = params
        self.meta = rep_meta
        self.enc_key = enc_key
        self.mac_key = mac_key
        self.counter = OramCounter()
        self.rng = random.Random(seed ^ 0x9E3779B9)
        self.trees: list[_Tree] = []
        self._nonce = 0
        if params.leaf_count > 0xFFFF:
            raise OramConfigError("leaf index does not fit the position map entry")
        # One reusable ECB context generates all CTR keystream; a pre-keyed
        # HMAC is copied per node. Both avoid per-node primitive setup, which
        # otherwise dominates access time.
        self._ecb = Cipher(algorithms.AES(enc_key), modes.ECB()).encryptor()
        self._mac_base = hmac_mod.new(mac_key, digestmod=hashlib.sha256)
        self._ctr_cache: dict[int, np.ndarray] = {}

    def _keystream_xor(self, nonce: bytes, data: bytes) -> bytes:
        """AES-CTR with `nonce` as the initial counter block (big-endian)."""
        nblocks = -(-len(data) // 16)
        hi = int.from_bytes(nonce[:8], "big")
        lo = int.from_bytes(nonce[8:], "big")
        if lo + nblocks > 0xFFFFFFFFFFFFFFFF:
            raise OramConfigError("CTR counter would wrap the low word")
        if lo:
            ctr = np.empty((nblocks, 2), dtype=">u8")
            ctr[:, 1] = lo + np.arange(nblocks, dtype=np.uint64)
        else:
            ctr = self._ctr_cache.get(nblocks)
            if ctr is None:
                ctr = np.empty((nblocks, 2), dtype=">u8")
                ctr[:, 1] = np.arange(nblocks, dtype=np.uint64)
                self._ctr_cache[nblocks] = ctr
        ctr[:, 0] = hi
        ks = self._ecb.update(ctr.tobytes())
        pad = nblocks * 16 - len(data)
        buf = np.frombuffer(data + b"\0" * pad if pad else data, dtype=np.uint64)
        out = buf ^ np.frombuffer(ks, dtype=np.uint64)
        return out.tobytes()[:len(data)] if pad else out.tobytes()

    @property
    def slot_aligned(self) -> bool:
        return (self.params.block_bytes * 8) % self.meta.item_bits == 0

    # -- node crypto ---------------------------------------------------------

    def _fresh_nonce(self) -> bytes:
        self._nonce += 1
        return self._nonce.to_bytes(NONCE_BYTES, "little")

    def _seal_node(self, tree: int, node: int, blocks) -> bytes:
        bb = self.params.block_bytes
        z = self.params.blocks_per_node
        parts = []
        for bid, data in blocks:
            parts.append(struct.pack("<I", bid))
            parts.append(data)
        for _ in range(z - len(blocks)):
            parts.append(struct.pack("<I", EMPTY_ID))
            parts.append(bytes(bb))
        pt = b"".join(parts)
        nonce = self._fresh_nonce()
        ct = self._keystream_xor(nonce, pt)
        mac = self._mac_base.copy()
        mac.update(struct.pack("<II", tree, node) + nonce + ct)
        return nonce + mac.digest()[:TAG_BYTES] + ct

    def _open_node(self, tree: int, node: int, blob: bytes):
        bb = self.params.block_bytes
        z = self.params.blocks_per_node
        nonce, tag, ct = (blob[:NONCE_BYTES],
                          blob[NONCE_BYTES:NONCE_BYTES + TAG_BYTES],
                          blob[NONCE_BYTES + TAG_BYTES:])
        mac = self._mac_base.copy()
        mac.update(struct.pack("<II", tree, node) + nonce + ct)
        if not hmac_mod.compare_digest(mac.digest()[:TAG_BYTES], tag):
            raise OramConfigError(f"node ({tree},{node}) failed authentication")
        pt = self._keystream_xor(nonce, ct)
        out = []
        stride = 4 + bb
        for s in range(z):
            bid = struct.unpack_from("<I", pt, s * stride)[0]
            if bid != EMPTY_ID:
                out.append((bid, pt[s * stride + 4:(s + 1) * stride]))
        return out

    # -- position map --------------------------------------------------------

    def _posmap_get_and_remap(self, t: _Tree, block_id: int) -> int:
        """Uniform touch of every map page: full read, one update, full write."""
        leaf = int(t.posmap[block_id])
        scan = t.posmap.copy()           # read every entry
        scan[block_id] = self.rng.randrange(self.params.leaf_count)
        t.posmap = scan                  # write every entry back
        self.counter.posmap_reads += t.posmap_pages
        self.counter.posmap_writes += t.posmap_pages
        return leaf


def derive_oram_keys(seed: int) -> tuple[bytes, bytes]:
    enc = hashlib.sha256(b"pmt-oram-enc" + seed.to_bytes(8, "little")).digest()[:16]
    mac = hashlib.sha256(b"pmt-oram-mac" + seed.to_bytes(8, "little")).digest()
    return enc, mac


def oram_init(rep: DictRepresentation, params: OramParams | None = None,
              block_bytes: int = 4096, tree_count: int = 1,
              complete: bool = False, node_slack: float = 1.0,
              stash_limit: int = DEFAULT_STASH_LIMIT, seed: int = 0) -> OramState:
    """Slice a cuckoo table into blocks and place them on encrypted trees."""
    if rep.kind != ReprKind.CUCKOO4:
        raise ValueError("the ORAM front-end stores 4-ary cuckoo tables")
    if tree_count == 4 and not rep.partitioned:
        raise OramConfigError("four trees require a partitioned table")
    if params is None:
        if tree_count == 4:
            per_tree_bytes = _region_bytes(rep)
        else:
            per_tree_bytes = len(rep.payload)
        params = oram_params_for(per_tree_bytes, block_bytes=block_bytes,
                                 z=4, tree_count=1, complete=complete,
                                 node_slack=node_slack, stash_limit=stash_limit)
        params = OramParams(block_bytes=params.block_bytes,
                            blocks_per_node=params.blocks_per_node,
                            node_count=params.node_count,
                            tree_levels=params.tree_levels,
                            tree_count=tree_count,
                            stash_limit=params.stash_limit,
                            page_bytes=params.page_bytes)
    enc_key, mac_key = derive_oram_keys(seed)
    state = OramState(params, _strip_payload(rep), enc_key, mac_key, seed)
    slices = _tree_slices(rep, params)
    for ti, data in enumerate(slices):
        tree = _build_tree(state, ti, data)
        state.trees.append(tree)
    state.counter.reset()
    return state


def _strip_payload(rep: DictRepresentation) -> DictRepresentation:
    return replace(rep, payload=b"")


def _region_bytes(rep: DictRepresentation) -> int:
    bits = rep.region_slots * rep.item_bits
    if bits % 8:
        raise OramConfigError("region boundaries must be byte aligned")
    return bits // 8


def _tree_slices(rep: DictRepresentation, params: OramParams):
    if params.tree_count == 1:
        return [rep.payload]
    rb = _region_bytes(rep)
    return [rep.payload[i * rb:(i + 1) * rb] for i in range(4)]


def _build_tree(state: OramState, index: int, data: bytes) -> _Tree:
    p = state.params
    bb = p.block_bytes
    blocks = -(-len(data) // bb)
    if blocks > p.node_capacity_blocks:
        raise OramConfigError("tree cannot hold all blocks")
    tree = _Tree(index, p, blocks)
    leaves = [state.rng.randrange(p.leaf_count) for _ in range(blocks)]
    tree.posmap[:] = np.asarray(leaves, dtype=np.uint16) if blocks else 0
    pending = [[] for _ in range(p.node_count)]
    for bid in range(blocks):
        chunk = data[bid * bb:(bid + 1) * bb]
        if len(chunk) < bb:
            chunk = chunk + bytes(bb - len(chunk))
        placed = False
        for node in reversed(_path_nodes(p.first_leaf + leaves[bid])):
            if len(pending[node]) < p.blocks_per_node:
                pending[node].append((bid, chunk))
                placed = True
                break
        if not placed:
            tree.stash[bid] = chunk
    if len(tree.stash) > p.stash_limit:
        raise StashOverflow(
            f"initial placement leaves {len(tree.stash)} blocks stashed")
    for node in range(p.node_count):
        tree.nodes[node] = state._seal_node(index, node, pending[node])
    return tree


def oram_access(state: OramState, block_id: int, op: str = "read",
                data: bytes | None = None, tree: int = 0) -> bytes:
    """One Path ORAM access: read path, remap, evict greedily, write path."""
    p = state.params
    t = state.trees[tree]
    if not 0 <= block_id < t.block_count:
        raise ValueError("block_id out of range")
    if op not in ("read", "write"):
        raise ValueError("op must be 'read' or 'write'")
    leaf = state._posmap_get_and_remap(t, block_id)
    path = _path_nodes(p.first_leaf + leaf)
    for node in path:
        for bid, blk in state._open_node(tree, node, t.nodes[node]):
            t.stash[bid] = blk
        state.counter.node_reads += 1
    if block_id not in t.stash:
        raise OramConfigError(f"block {block_id} missing from path and stash")
    if op == "write":
        if data is None or len(data) != p.block_bytes:
            raise ValueError("write needs exactly block_bytes of data")
        t.stash[block_id] = bytes(data)
    result = bytes(t.stash[block_id])
    first_leaf1 = p.first_leaf + 1
    for node in reversed(path):
        # Node assembly scans the whole stash bound, not the current content:
        # a fixed number of counted copy-or-dummy operations per entry line.
        state.counter.stash_selects += p.stash_limit
        node1 = node + 1
        chosen = []
        for bid in list(t.stash):
            if len(chosen) == p.blocks_per_node:
                break
            if _on_path_fast(node1, first_leaf1 + int(t.posmap[bid])):
                chosen.append((bid, t.stash.pop(bid)))
        t.nodes[node] = state._seal_node(tree, node, chosen)
        state.counter.node_writes += 1
    state.counter.accesses += 1
    if len(t.stash) > p.stash_limit:
        raise StashOverflow(
            f"stash grew to {len(t.stash)} blocks (bound {p.stash_limit})")
    return result


def audit_invariant(state: OramState) -> bool:
    """Desk-scale check of the main invariant: every block on its path or stashed."""
    p = state.params
    for ti, t in enumerate(state.trees):
        located = dict(t.stash)
        for node in range(p.node_count):
            for bid, blk in state._open_node(ti, node, t.nodes[node]):
                if bid in located:
                    raise AssertionError(f"block {bid} duplicated in tree {ti}")
                if not _on_path(node, p.first_leaf + int(t.posmap[bid])):
                    raise AssertionError(
                        f"block {bid} at node {node} is off its mapped path")
                located[bid] = blk
        if set(located) != set(range(t.block_count)):
            raise AssertionError(f"tree {ti} lost blocks")
    return True


def read_table_block(state: OramState, tree: int, block_id: int) -> bytes:
    """Plaintext block content via a normal access (test/oracle helper)."""
    return oram_access(state, block_id, "read", tree=tree)


def _field_at(data: bytes, bit_off: int, width: int) -> int:
    """Extract one field laid down by the payload packer (MSB-first fields
    on an LSB-first-within-byte stream)."""
    val = 0
    for i in range(width):
        sb = bit_off + i
        val = (val << 1) | ((data[sb >> 3] >> (sb & 7)) & 1)
    return val


def _coo_probe(state: OramState, cand, fp: int) -> int:
    """Four sequential block reads for one precomputed candidate set."""
    meta = state.meta
    hit = 0
    stash = meta.stash
    if stash is not None:
        cs = tuple(sorted(int(c) for c in cand))
        for slots4, efp in stash.entries:
            hit |= int(slots4 == cs and efp == fp)
        state.counter.query_selects += stash.capacity
    block_bits = state.params.block_bytes * 8
    w = meta.item_bits
    for slot in cand:
        s = int(slot)
        if state.params.tree_count == 4:
            tree, local = divmod(s, meta.region_slots)
        else:
            tree, local = 0, s
        bit = local * w
        bid, within = divmod(bit, block_bits)
        data = oram_access(state, bid, "read", tree=tree)
        hit |= int(_field_at(data, within, w) == fp)
    return hit


def coo_query(state: OramState, item: bytes) -> int:
    """Membership bit via exactly four sequential ORAM block reads."""
    if not state.slot_aligned:
        raise OramConfigError(
            "block bit length must be a multiple of the field width")
    meta = state.meta
    check_item(item)
    row = np.frombuffer(item, dtype=np.uint8).reshape(1, 16)
    cand = cuckoo_candidates(row, meta.seeds, meta.table_slots, meta.partitioned)[0]
    fp = int(cuckoo_fingerprints(row, meta.item_bits)[0])
    return _coo_probe(state, cand, fp)


def coo_query_many(state: OramState, items: np.ndarray) -> np.ndarray:
    """Membership bits for an (n, 16) item array; the candidate hashing is
    vectorized once, the ORAM accesses stay strictly sequential per query."""
    if not state.slot_aligned:
        raise OramConfigError(
            "block bit length must be a multiple of the field width")
    meta = state.meta
    items = np.ascontiguousarray(items, dtype=np.uint8)
    if items.ndim != 2 or items.shape[1] != 16:
        raise ValueError("items must be an (n, 16) uint8 array")
    cands = cuckoo_candidates(items, meta.seeds, meta.table_slots,
                              meta.partitioned)
    fps = cuckoo_fingerprints(items, meta.item_bits)
    out = np.empty(len(items), dtype=np.uint8)
    for i in range(len(items)):
        out[i] = _coo_probe(state, cands[i], int(fps[i]))
    return out
