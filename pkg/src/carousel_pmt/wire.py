"""Wire protocol: length-prefixed frames, attested key exchange (stubbed),
and authenticated-encrypted query channels.

Frames are `u32 LE length | u8 type | payload`. The handshake is HELLO /
ATTEST: the client sends a nonce and an ephemeral public key; the trusted
side answers with its measurement, its own ephemeral key, and a signature
binding both to its long-term identity (a stand-in for hardware
attestation). Both sides derive a 128-bit channel key; every later frame is
AES-CBC encrypted then MACed together with a strict per-direction sequence
number, so replayed, reordered, or cross-directed frames are rejected.

Setting PMT_TEST_KEYS (to any value, used as a label) pins the long-term
identity and the payload MAC key for reproducible tests; ephemeral keys
stay fresh, so session keys still differ between handshakes.
"""

from __future__ import annotations

import hashlib
import hmac as hmac_mod
import os
import struct
from dataclasses import dataclass, field

from cryptography.hazmat.primitives import padding
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey, Ed25519PublicKey)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey, X25519PublicKey)
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.hashes import SHA256
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

FRAME_HELLO = 1
FRAME_ATTEST = 2
FRAME_QUERY = 3
FRAME_RESPONSE = 4
FRAME_REJECT = 5

REJECT_CAPACITY = 1

_MEASUREMENT = hashlib.sha256(b"pmt-ta-measurement-v1").digest()
_HEADER = struct.Struct("<IB")

DIR_CLIENT_TO_TA = 1
DIR_TA_TO_CLIENT = 2


class ChannelError(Exception):
    """Authentication, replay, or framing failure; tear the channel down."""


class AttestationError(Exception):
    """The attestation evidence did not verify."""


def encode_frame(ftype: int, payload: bytes) -> bytes:
    return _HEADER.pack(len(payload), ftype) + payload


class FrameReader:
    """Incremental frame parser for stream transports."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes):
        self._buf.extend(data)
        out = []
        while True:
            if len(self._buf) < _HEADER.size:
                return out
            length, ftype = _HEADER.unpack_from(self._buf)
            end = _HEADER.size + length
            if len(self._buf) < end:
                return out
            out.append((ftype, bytes(self._buf[_HEADER.size:end])))
            del self._buf[:end]


def decode_frame(buf: bytes):
    """Parse exactly one frame; returns (type, payload, bytes_consumed)."""
    if len(buf) < _HEADER.size:
        raise ChannelError("short frame header")
    length, ftype = _HEADER.unpack_from(buf)
    end = _HEADER.size + length
    if len(buf) < end:
        raise ChannelError("truncated frame")
    return ftype, buf[_HEADER.size:end], end


# -- identity and measurement -------------------------------------------------

def fixed_measurement() -> bytes:
    return _MEASUREMENT


@dataclass
class TaIdentity:
    """Long-term signing identity standing in for a hardware-rooted one."""

    signing_key: Ed25519PrivateKey
    measurement: bytes = _MEASUREMENT

    @classmethod
    def generate(cls) -> "TaIdentity":
        label = os.environ.get("PMT_TEST_KEYS")
        if label:
            seed = hashlib.sha256(b"pmt-test-identity" + label.encode()).digest()
            return cls(Ed25519PrivateKey.from_private_bytes(seed[:32]))
        return cls(Ed25519PrivateKey.generate())

    def verify_key_bytes(self) -> bytes:
        return self.signing_key.public_key().public_bytes_raw()


from .reprs import provider_mac_key  # noqa: E402  (re-export: key lives with the format)


# -- secure channel ------------------------------------------------------------

@dataclass
class SecureChannel:
    session_id: bytes
    enc_key: bytes
    mac_key: bytes
    role: str                      # "client" or "ta"
    send_seq: int = 0
    recv_seq: int = 0

    def _dir(self, sending: bool) -> int:
        if self.role == "client":
            return DIR_CLIENT_TO_TA if sending else DIR_TA_TO_CLIENT
        return DIR_TA_TO_CLIENT if sending else DIR_CLIENT_TO_TA

    def _mac(self, direction: int, seq: int, ftype: int, blob: bytes) -> bytes:
        head = self.session_id + struct.pack("<BQB", direction, seq, ftype)
        return hmac_mod.new(self.mac_key, head + blob, hashlib.sha256).digest()[:16]

    def seal(self, ftype: int, plaintext: bytes) -> bytes:
        iv = os.urandom(16)
        padder = padding.PKCS7(128).padder()
        padded = padder.update(plaintext) + padder.finalize()
        enc = Cipher(algorithms.AES(self.enc_key), modes.CBC(iv)).encryptor()
        blob = iv + enc.update(padded) + enc.finalize()
        mac = self._mac(self._dir(True), self.send_seq, ftype, blob)
        self.send_seq += 1
        return encode_frame(ftype, blob + mac)

    def open(self, ftype: int, payload: bytes) -> bytes:
        if len(payload) < 16 + 16 + 16:
            raise ChannelError("ciphertext too short")
        blob, mac = payload[:-16], payload[-16:]
        want = self._mac(self._dir(False), self.recv_seq, ftype, blob)
        if not hmac_mod.compare_digest(want, mac):
            raise ChannelError("frame MAC failed (tamper, replay, or reorder)")
        self.recv_seq += 1
        iv, ct = blob[:16], blob[16:]
        if len(ct) % 16:
            raise ChannelError("ciphertext not block aligned")
        dec = Cipher(algorithms.AES(self.enc_key), modes.CBC(iv)).decryptor()
        padded = dec.update(ct) + dec.finalize()
        unpadder = padding.PKCS7(128).unpadder()
        try:
            return unpadder.update(padded) + unpadder.finalize()
        except ValueError as e:
            raise ChannelError("bad padding") from e


def _derive_channel(shared: bytes, client_nonce: bytes, measurement: bytes,
                    role: str) -> SecureChannel:
    okm = HKDF(algorithm=SHA256(), length=56, salt=client_nonce,
               info=b"pmt-channel-v1" + measurement).derive(shared)
    return SecureChannel(session_id=okm[48:56], enc_key=okm[:16],
                         mac_key=okm[16:48], role=role)


@dataclass
class ClientHandshake:
    nonce: bytes
    ephemeral: X25519PrivateKey


def client_hello() -> tuple[bytes, ClientHandshake]:
    """Returns the HELLO frame and the client-side handshake state."""
    hs = ClientHandshake(nonce=os.urandom(16), ephemeral=X25519PrivateKey.generate())
    payload = hs.nonce + hs.ephemeral.public_key().public_bytes_raw()
    return encode_frame(FRAME_HELLO, payload), hs


def ta_accept(hello_payload: bytes, identity: TaIdentity) -> tuple[bytes, SecureChannel]:
    """TA side: consume HELLO, emit ATTEST, derive the channel."""
    if len(hello_payload) != 48:
        raise ChannelError("malformed HELLO")
    client_nonce, client_pub = hello_payload[:16], hello_payload[16:]
    eph = X25519PrivateKey.generate()
    ta_pub = eph.public_key().public_bytes_raw()
    sig = identity.signing_key.sign(identity.measurement + client_nonce + ta_pub)
    shared = eph.exchange(X25519PublicKey.from_public_bytes(client_pub))
    channel = _derive_channel(shared, client_nonce, identity.measurement, "ta")
    payload = identity.measurement + ta_pub + sig
    return encode_frame(FRAME_ATTEST, payload), channel


def client_finish(attest_payload: bytes, hs: ClientHandshake,
                  trust_root: bytes,
                  expected_measurement: bytes = _MEASUREMENT) -> SecureChannel:
    """Client side: verify the ATTEST evidence and derive the channel."""
    if len(attest_payload) != 32 + 32 + 64:
        raise AttestationError("malformed ATTEST")
    measurement = attest_payload[:32]
    ta_pub = attest_payload[32:64]
    sig = attest_payload[64:]
    if measurement != expected_measurement:
        raise AttestationError("unexpected measurement")
    try:
        Ed25519PublicKey.from_public_bytes(trust_root).verify(
            sig, measurement + hs.nonce + ta_pub)
    except Exception as e:
        raise AttestationError("attestation signature invalid") from e
    shared = hs.ephemeral.exchange(X25519PublicKey.from_public_bytes(ta_pub))
    return _derive_channel(shared, hs.nonce, measurement, "client")


# -- application payloads -------------------------------------------------------

def pack_query(item: bytes, tag: int) -> bytes:
    if len(item) != 16:
        raise ValueError("items are 16 bytes")
    return item + struct.pack("<Q", tag)


def unpack_query(pt: bytes) -> tuple[bytes, int]:
    if len(pt) != 24:
        raise ChannelError("bad query payload")
    return pt[:16], struct.unpack("<Q", pt[16:])[0]


def pack_response(tag: int, bit: int) -> bytes:
    return struct.pack("<QB", tag, bit & 1)


def unpack_response(pt: bytes) -> tuple[int, int]:
    if len(pt) != 9:
        raise ChannelError("bad response payload")
    tag, bit = struct.unpack("<QB", pt)
    return tag, bit


def pack_reject(tag: int, code: int = REJECT_CAPACITY) -> bytes:
    return struct.pack("<QB", tag, code)


def unpack_reject(pt: bytes) -> tuple[int, int]:
    if len(pt) != 9:
        raise ChannelError("bad reject payload")
    tag, code = struct.unpack("<QB", pt)
    return tag, code
