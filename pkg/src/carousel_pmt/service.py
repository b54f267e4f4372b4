"""Untrusted lookup service and the trusted-application wrapper it hosts.

The service owns only public material: the serialized representation, the
chunk plan derived from its public header, and ciphertext mailboxes. Each
TaEnclave couples one carousel engine with the wire endpoints: it terminates
secure channels, decrypts queries, and seals responses, so the service sees
nothing but frame counts and sizes. Scheduling is chunk-synchronous: frames
delivered since the last step are attached to the next chunk invocation of
their enclave, and released answers travel back on the owning channel.
"""

from __future__ import annotations

import socket
import threading
import time
from dataclasses import dataclass

from .carousel import CarouselTa, InvokeResult, TaConfig, chunk_plan
from .reprs import deserialize, serialized_payload_offset
from . import wire


@dataclass(frozen=True)
class TranscriptEntry:
    """What the untrusted host can observe about one invocation."""

    ta_id: int
    chunk_index: int
    chunk_bytes: int
    queries_in: int
    query_frame_bytes: tuple
    responses_out: int
    rejects_out: int
    out_frame_bytes: tuple


class TaEnclave:
    """One TA replica: carousel engine plus channel termination."""

    def __init__(self, ta_id: int, serialized_repr: bytes,
                 config: TaConfig | None = None,
                 identity: wire.TaIdentity | None = None,
                 mac_key: bytes | None = None, chunk_bytes: int | None = None):
        self.ta_id = ta_id
        self.identity = identity or wire.TaIdentity.generate()
        self.mac_key = mac_key or wire.provider_mac_key()
        self.ta = CarouselTa(serialized_repr, config, mac_key=self.mac_key,
                             chunk_bytes=chunk_bytes)
        self.channels: dict[int, wire.SecureChannel] = {}
        self._pending: list[tuple[int, bytes, int, int]] = []  # qid, item, conn, tag
        self._route: dict[int, tuple[int, int]] = {}           # qid -> (conn, tag)
        self._next_qid = 0

    def handshake(self, conn_id: int, hello_payload: bytes) -> bytes:
        attest_frame, channel = wire.ta_accept(hello_payload, self.identity)
        self.channels[conn_id] = channel
        return attest_frame

    def submit_frame(self, conn_id: int, ftype: int, payload: bytes):
        if ftype != wire.FRAME_QUERY:
            raise wire.ChannelError("only QUERY frames are accepted here")
        channel = self.channels[conn_id]
        item, tag = wire.unpack_query(channel.open(ftype, payload))
        qid = self._next_qid
        self._next_qid += 1
        self._pending.append((qid, item, conn_id, tag))
        self._route[qid] = (conn_id, tag)

    def invoke_chunk(self, chunk: bytes
                     ) -> tuple[InvokeResult, list[tuple[int, bytes]]]:
        """Run one chunk; returns the result and per-connection out frames."""
        batch = [(qid, item) for qid, item, _, _ in self._pending]
        self._pending.clear()
        result = self.ta.invoke(chunk, batch)
        out = []
        for qid, bit in result.responses:
            conn, tag = self._route.pop(qid)
            out.append((conn, self.channels[conn].seal(
                wire.FRAME_RESPONSE, wire.pack_response(tag, bit))))
        for qid in result.rejected:
            conn, tag = self._route.pop(qid)
            out.append((conn, self.channels[conn].seal(
                wire.FRAME_REJECT, wire.pack_reject(tag))))
        return result, out


class LookupService:
    """Hosts Y, schedules chunks into the enclaves, and routes ciphertext."""

    def __init__(self, serialized_repr: bytes, num_tas: int = 1,
                 config: TaConfig | None = None, chunk_bytes: int = 1 << 20,
                 identity: wire.TaIdentity | None = None,
                 mac_key: bytes | None = None, record_transcript: bool = True):
        self.repr_bytes = serialized_repr
        public = deserialize(serialized_repr, verify=False)
        self.plan = chunk_plan(public, chunk_bytes)
        self._payload_off = serialized_payload_offset(public)
        self.identity = identity or wire.TaIdentity.generate()
        self.enclaves = [
            TaEnclave(i, serialized_repr, config, identity=self.identity,
                      mac_key=mac_key, chunk_bytes=chunk_bytes)
            for i in range(num_tas)
        ]
        self.transcript: list[TranscriptEntry] | None = (
            [] if record_transcript else None)
        self._mailboxes: dict[int, list[bytes]] = {}
        self._conn_ta: dict[int, int] = {}
        self._next_conn = 0
        self._frames_in: dict[int, list[int]] = {i: [] for i in range(num_tas)}

    @property
    def trust_root(self) -> bytes:
        return self.identity.verify_key_bytes()

    @property
    def num_chunks(self) -> int:
        return self.plan.num_chunks

    # -- connection plane ----------------------------------------------------

    def open_connection(self, ta_id: int | None = None) -> int:
        conn_id = self._next_conn
        self._next_conn += 1
        ta = conn_id % len(self.enclaves) if ta_id is None else ta_id
        self._mailboxes[conn_id] = []
        self._conn_ta[conn_id] = ta
        return conn_id

    def handshake(self, conn_id: int, hello_frame: bytes) -> bytes:
        ftype, payload, _ = wire.decode_frame(hello_frame)
        if ftype != wire.FRAME_HELLO:
            raise wire.ChannelError("expected HELLO")
        ta = self._conn_ta[conn_id]
        return self.enclaves[ta].handshake(conn_id, payload)

    def deliver(self, conn_id: int, frame: bytes):
        ftype, payload, _ = wire.decode_frame(frame)
        ta = self._conn_ta[conn_id]
        self.enclaves[ta].submit_frame(conn_id, ftype, payload)
        self._frames_in[ta].append(len(frame))

    def fetch(self, conn_id: int) -> list[bytes]:
        box = self._mailboxes[conn_id]
        out, box[:] = list(box), []
        return out

    # -- chunk scheduling ------------------------------------------------------

    def chunk_payload(self, index: int) -> bytes:
        span = self.plan.spans[index % self.num_chunks]
        off = self._payload_off
        return self.repr_bytes[off + span.byte_lo:off + span.byte_hi]

    def step(self) -> list[InvokeResult]:
        """Advance every enclave by one chunk."""
        results = []
        for enclave in self.enclaves:
            idx = enclave.ta.next_chunk
            chunk = self.chunk_payload(idx)
            in_sizes = tuple(self._frames_in[enclave.ta_id])
            self._frames_in[enclave.ta_id] = []
            result, frames = enclave.invoke_chunk(chunk)
            sizes = []
            for conn, frame in frames:
                self._mailboxes[conn].append(frame)
                sizes.append(len(frame))
            if self.transcript is not None:
                self.transcript.append(TranscriptEntry(
                    ta_id=enclave.ta_id, chunk_index=result.chunk_index,
                    chunk_bytes=len(chunk), queries_in=len(in_sizes),
                    query_frame_bytes=in_sizes,
                    responses_out=len(result.responses),
                    rejects_out=len(result.rejected),
                    out_frame_bytes=tuple(sizes)))
            results.append(result)
        return results

    def run_cycles(self, cycles: int) -> list[InvokeResult]:
        out = []
        for _ in range(cycles * self.num_chunks):
            out.extend(self.step())
        return out


class PmtClient:
    """In-process client: one secure channel per enclave, round-robin queries."""

    def __init__(self, service: LookupService):
        self.service = service
        self.conns = []
        self.channels = []
        for _ in service.enclaves:
            conn = service.open_connection()
            hello, hs = wire.client_hello()
            attest = service.handshake(conn, hello)
            ftype, payload, _ = wire.decode_frame(attest)
            if ftype != wire.FRAME_ATTEST:
                raise wire.AttestationError("expected ATTEST")
            channel = wire.client_finish(payload, hs, service.trust_root)
            self.conns.append(conn)
            self.channels.append(channel)
        self._rr = 0
        self._next_tag = 0
        self._results: dict[int, int] = {}
        self._rejected: set[int] = set()
        self._tag_conn: dict[int, int] = {}

    def submit(self, item: bytes) -> int:
        slot = self._rr % len(self.conns)
        self._rr += 1
        tag = self._next_tag
        self._next_tag += 1
        frame = self.channels[slot].seal(wire.FRAME_QUERY, wire.pack_query(item, tag))
        self.service.deliver(self.conns[slot], frame)
        self._tag_conn[tag] = slot
        return tag

    def _drain(self):
        for slot, conn in enumerate(self.conns):
            for frame in self.service.fetch(conn):
                ftype, payload, _ = wire.decode_frame(frame)
                pt = self.channels[slot].open(ftype, payload)
                if ftype == wire.FRAME_RESPONSE:
                    tag, bit = wire.unpack_response(pt)
                    self._results[tag] = bit
                elif ftype == wire.FRAME_REJECT:
                    tag, _code = wire.unpack_reject(pt)
                    self._rejected.add(tag)
                else:
                    raise wire.ChannelError("unexpected frame type")

    def poll(self, tag: int):
        """Returns the bit, 'rejected', or None while pending."""
        self._drain()
        if tag in self._results:
            return self._results[tag]
        if tag in self._rejected:
            return "rejected"
        return None


def run_carousel_loop(service: LookupService, client: PmtClient,
                      arrivals: dict, cycles: int):
    """Drive the service: arrivals[step] items are submitted before that step.

    Returns (results keyed by client tag -- a bit or "rejected", submitted tags).
    """
    tags = []
    for step in range(cycles * service.num_chunks):
        for item in arrivals.get(step, ()):
            tags.append(client.submit(item))
        service.step()
    client._drain()
    results = dict(client._results)
    results.update({tag: "rejected" for tag in client._rejected})
    return results, tags


# -- socket transport ------------------------------------------------------------

class SocketServer:
    """Minimal threaded transport: one connection per client, shared stepper."""

    def __init__(self, service: LookupService, host: str = "127.0.0.1",
                 port: int = 0, step_interval: float = 0.005):
        self.service = service
        self.sock = socket.create_server((host, port))
        self.addr = self.sock.getsockname()
        self.step_interval = step_interval
        self._stop = threading.Event()
        self._lock = threading.Lock()
        self._threads = []

    def start(self):
        t = threading.Thread(target=self._accept_loop, daemon=True)
        t.start()
        self._threads.append(t)
        s = threading.Thread(target=self._step_loop, daemon=True)
        s.start()
        self._threads.append(s)

    def stop(self):
        self._stop.set()
        try:
            self.sock.close()
        except OSError:
            pass

    def _step_loop(self):
        while not self._stop.wait(self.step_interval):
            with self._lock:
                self.service.step()

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, _ = self.sock.accept()
            except OSError:
                return
            t = threading.Thread(target=self._serve_conn, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)

    def _serve_conn(self, sock: socket.socket):
        reader = wire.FrameReader()
        with self._lock:
            conn_id = self.service.open_connection()
        done = threading.Event()
        flusher = threading.Thread(target=self._flush_loop,
                                   args=(sock, conn_id, done), daemon=True)
        flusher.start()
        try:
            while not self._stop.is_set():
                data = sock.recv(65536)
                if not data:
                    return
                for ftype, payload in reader.feed(data):
                    with self._lock:
                        if ftype == wire.FRAME_HELLO:
                            out = self.service.handshake(
                                conn_id, wire.encode_frame(ftype, payload))
                            sock.sendall(out)
                        else:
                            self.service.deliver(
                                conn_id, wire.encode_frame(ftype, payload))
        except OSError:
            return
        finally:
            done.set()
            flusher.join(timeout=1.0)
            sock.close()

    def _flush_loop(self, sock: socket.socket, conn_id: int, done: threading.Event):
        while not (done.is_set() or self._stop.is_set()):
            with self._lock:
                frames = self.service.fetch(conn_id)
            try:
                for frame in frames:
                    sock.sendall(frame)
            except OSError:
                return
            time.sleep(0.002)
