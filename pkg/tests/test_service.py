"""Lookup service: routing, scheduling, transcript shape, socket transport."""

from __future__ import annotations

import socket

import pytest

from carousel_pmt import wire
from carousel_pmt.carousel import ta_config_for
from carousel_pmt.core import random_items
from carousel_pmt.service import (LookupService, PmtClient, SocketServer,
                                  run_carousel_loop)

import oracles

CHUNK = 1024


def make_service(blobs_4k, name="bloom", **kw):
    return LookupService(blobs_4k[name], chunk_bytes=CHUNK, **kw)


# ---------------------------------------------------------------------------
# End-to-end correctness
# ---------------------------------------------------------------------------

def test_bits_match_oracle_two_replicas(blobs_4k, reps_4k, dict_4k):
    service = make_service(blobs_4k, num_tas=2)
    client = PmtClient(service)
    members = [bytes(r) for r in dict_4k.items[:6]]
    strangers = [bytes(r) for r in random_items(6, seed=31, exclude=dict_4k)]
    arrivals = {0: members + strangers}
    results, tags = run_carousel_loop(service, client, arrivals, cycles=2)
    assert len(tags) == 12
    rep = reps_4k["bloom"]
    for tag, item in zip(tags, members + strangers):
        assert results[tag] == oracles.ref_probe(rep, item, dict_4k.n, 10)
    for item in members:
        assert results[tags[(members + strangers).index(item)]] == 1


def test_all_variants_roundtrip_through_service(blobs_4k, reps_4k, dict_4k):
    probes = [bytes(dict_4k.items[77]), bytes(random_items(1, seed=8)[0])]
    for name, rep in reps_4k.items():
        service = make_service(blobs_4k, name)
        client = PmtClient(service)
        results, tags = run_carousel_loop(service, client, {0: probes}, cycles=2)
        want = [oracles.ref_probe(rep, it, dict_4k.n, 10) for it in probes]
        assert [results[t] for t in tags] == want, name


# ---------------------------------------------------------------------------
# Scheduling and latency
# ---------------------------------------------------------------------------

def test_batch_answered_on_cycle_boundary(blobs_4k, dict_4k):
    service = make_service(blobs_4k)
    client = PmtClient(service)
    n_chunks = service.num_chunks
    tags = [client.submit(bytes(r)) for r in dict_4k.items[:5]]
    for step in range(n_chunks):
        for t in tags:
            assert client.poll(t) is None, f"answered early at step {step}"
        service.step()
    assert all(client.poll(t) == 1 for t in tags)
    last = service.transcript[-1]
    assert last.responses_out == 5
    assert sum(e.responses_out for e in service.transcript) == 5


def test_single_query_waits_exactly_one_lap(blobs_4k):
    service = make_service(blobs_4k)
    client = PmtClient(service)
    n_chunks = service.num_chunks
    for _ in range(3):  # move mid-cycle
        service.step()
    tag = client.submit(bytes(16))
    steps = 0
    while client.poll(tag) is None:
        service.step()
        steps += 1
        assert steps <= 2 * n_chunks
    assert steps == n_chunks


def test_round_robin_across_enclaves(blobs_4k):
    service = make_service(blobs_4k, num_tas=3)
    client = PmtClient(service)
    items = [bytes([i]) + bytes(15) for i in range(9)]
    results, tags = run_carousel_loop(service, client, {0: items}, cycles=2)
    assert len(results) == 9
    arrivals = [e for e in service.transcript if e.queries_in]
    assert sorted(e.ta_id for e in arrivals) == [0, 1, 2]
    assert all(e.queries_in == 3 for e in arrivals)


def test_chunk_payload_wraps_cyclically(blobs_4k):
    service = make_service(blobs_4k)
    n = service.num_chunks
    for i in range(n):
        assert service.chunk_payload(i) == service.chunk_payload(i + n)
    sizes = [len(service.chunk_payload(i)) for i in range(n)]
    assert all(s == CHUNK for s in sizes[:-1])


# ---------------------------------------------------------------------------
# Capacity rejection
# ---------------------------------------------------------------------------

def test_rejects_over_capacity_then_retry(blobs_4k, reps_4k, dict_4k):
    cfg = ta_config_for(reps_4k["bloom"], chunk_bytes=CHUNK, capacity=2)
    service = make_service(blobs_4k, config=cfg)
    client = PmtClient(service)
    items = [bytes(r) for r in dict_4k.items[:4]]
    results, tags = run_carousel_loop(service, client, {0: items}, cycles=2)
    assert [results[t] for t in tags] == [1, 1, "rejected", "rejected"]
    retry = [client.submit(it) for it in items[2:]]
    for _ in range(2 * service.num_chunks):
        service.step()
    assert [client.poll(t) for t in retry] == [1, 1]


# ---------------------------------------------------------------------------
# What the host observes
# ---------------------------------------------------------------------------

def _observable(service):
    return [(e.ta_id, e.chunk_index, e.chunk_bytes, e.queries_in,
             e.query_frame_bytes, e.responses_out, e.rejects_out,
             e.out_frame_bytes) for e in service.transcript]


def test_transcript_identical_under_query_value_permutation(blobs_4k, dict_4k):
    """Same arrival schedule, different secret values: same host view."""
    def run(seed):
        service = make_service(blobs_4k)
        client = PmtClient(service)
        items = [bytes(r) for r in random_items(7, seed=seed)]
        arrivals = {0: items[:3], 2: items[3:5], 9: items[5:]}
        run_carousel_loop(service, client, arrivals, cycles=3)
        return _observable(service)

    a, b, c = run(1), run(2), run(3)
    assert a == b == c


def test_transcript_reflects_arrival_times_not_values(blobs_4k):
    def run(arrival_step):
        service = make_service(blobs_4k)
        client = PmtClient(service)
        run_carousel_loop(service, client, {arrival_step: [bytes(16)]}, cycles=2)
        return _observable(service)

    assert run(0) != run(1)


def test_empty_workload_is_perfectly_periodic(blobs_4k):
    service = make_service(blobs_4k)
    PmtClient(service)
    service.run_cycles(3)
    n = service.num_chunks
    entries = _observable(service)
    assert len(entries) == 3 * n
    # chunk_index counts globally; everything else repeats cycle for cycle.
    folded = [(tid, ci % n, cb, qi, qf, ro, rj, of)
              for (tid, ci, cb, qi, qf, ro, rj, of) in entries]
    assert folded == folded[:n] * 3
    assert [e[1] for e in entries] == list(range(3 * n))
    assert all(e[5] == 0 and e[6] == 0 for e in entries)


def test_transcript_can_be_disabled(blobs_4k):
    service = make_service(blobs_4k, record_transcript=False)
    PmtClient(service)
    service.run_cycles(1)
    assert service.transcript is None


# ---------------------------------------------------------------------------
# Frame discipline
# ---------------------------------------------------------------------------

def test_enclave_rejects_non_query_frames(blobs_4k):
    service = make_service(blobs_4k)
    client = PmtClient(service)
    chan = client.channels[0]
    frame = chan.seal(wire.FRAME_RESPONSE, wire.pack_response(0, 1))
    with pytest.raises(wire.ChannelError):
        service.deliver(client.conns[0], frame)


def test_handshake_demands_hello(blobs_4k):
    service = make_service(blobs_4k)
    conn = service.open_connection()
    with pytest.raises(wire.ChannelError):
        service.handshake(conn, wire.encode_frame(wire.FRAME_QUERY, b""))


def test_tampered_query_frame_drops_at_channel(blobs_4k):
    service = make_service(blobs_4k)
    client = PmtClient(service)
    frame = bytearray(client.channels[0].seal(
        wire.FRAME_QUERY, wire.pack_query(bytes(16), 0)))
    frame[10] ^= 0x01
    with pytest.raises(wire.ChannelError):
        service.deliver(client.conns[0], bytes(frame))


# ---------------------------------------------------------------------------
# Socket transport
# ---------------------------------------------------------------------------

def test_socket_server_end_to_end(blobs_4k, reps_4k, dict_4k):
    service = make_service(blobs_4k)
    server = SocketServer(service, step_interval=0.002)
    server.start()
    items = [bytes(dict_4k.items[0]), bytes(dict_4k.items[1]),
             bytes(random_items(1, seed=50)[0])]
    try:
        sock = socket.create_connection(server.addr, timeout=5)
        sock.settimeout(10)
        hello, hs = wire.client_hello()
        sock.sendall(hello)
        reader = wire.FrameReader()
        channel = None
        while channel is None:
            for ftype, payload in reader.feed(sock.recv(65536)):
                assert ftype == wire.FRAME_ATTEST
                channel = wire.client_finish(payload, hs, service.trust_root)
        for i, item in enumerate(items):
            sock.sendall(channel.seal(wire.FRAME_QUERY, wire.pack_query(item, i)))
        results = {}
        while len(results) < len(items):
            data = sock.recv(65536)
            assert data, "server closed early"
            for ftype, payload in reader.feed(data):
                tag, bit = wire.unpack_response(channel.open(ftype, payload))
                results[tag] = bit
        sock.close()
    finally:
        server.stop()
    rep = reps_4k["bloom"]
    for i, item in enumerate(items):
        assert results[i] == oracles.ref_probe(rep, item, dict_4k.n, 10)
