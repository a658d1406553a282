"""Elliptic-curve and symmetric primitives shared by both provisioning stacks.

Everything runs on NIST P-256 with SHA-256. ECDSA uses deterministic
nonces (RFC 6979 derivation) so that signing is reproducible run to run;
ECIES follows a pinned IEEE-1363a-style profile (ECDH, SHA-256 KDF over
the shared x-coordinate and the compressed ephemeral key, XOR key wrap,
truncated HMAC tag). Payload encryption is AES-128-CCM with a 16-byte tag.

The whole module is pure functions over immutable values plus an explicit
randomness source, so it is safe for concurrent use.
"""

from __future__ import annotations

import hashlib
import hmac
import secrets
from dataclasses import dataclass
from random import Random
from typing import Callable

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESCCM

from . import curve
from .curve import N

RandFn = Callable[[int], bytes]

SYMMETRIC_KEY_BYTES = 16
AEAD_NONCE_BYTES = 12
AEAD_TAG_BYTES = 16
EXPANSION_KEY_BYTES = 16
HASHED_ID8_BYTES = 8
SCALAR_BYTES = 32
SIGNATURE_BYTES = 64
ENCAP_BYTES = curve.POINT_BYTES + SYMMETRIC_KEY_BYTES + AEAD_TAG_BYTES


class CryptoError(Exception):
    """Invalid key material or parameters."""


class AuthFailure(CryptoError):
    """An authentication tag failed to verify (wrong key or tampering)."""


class DegenerateKeyError(CryptoError):
    """A derived scalar reduced to zero; the result must be rejected."""


@dataclass(frozen=True)
class PrivateKey:
    scalar: int

    def __post_init__(self):
        if not 0 < self.scalar < N:
            raise CryptoError("private scalar out of range")

    def to_bytes(self) -> bytes:
        return self.scalar.to_bytes(SCALAR_BYTES, "big")

    @classmethod
    def from_bytes(cls, data: bytes) -> "PrivateKey":
        if len(data) != SCALAR_BYTES:
            raise CryptoError(f"private key must be {SCALAR_BYTES} bytes")
        return cls(int.from_bytes(data, "big"))

    def public_key(self) -> "PublicKey":
        point = curve.base_mult(self.scalar)
        return PublicKey(point[0], point[1])


@dataclass(frozen=True)
class PublicKey:
    x: int
    y: int

    def __post_init__(self):
        if not curve.is_on_curve((self.x, self.y)):
            raise CryptoError("public key is not a point on the curve")

    def point(self):
        return (self.x, self.y)

    def encode(self) -> bytes:
        return curve.encode_point((self.x, self.y))

    @classmethod
    def decode(cls, data: bytes) -> "PublicKey":
        try:
            x, y = curve.decode_point(data)
        except ValueError as exc:
            raise CryptoError(str(exc)) from exc
        return cls(x, y)


@dataclass(frozen=True)
class Signature:
    # Range checks happen at verification time, not construction, so that
    # out-of-range wire values decode into rejectable (never crashing) values.
    r: int
    s: int

    def encode(self) -> bytes:
        return self.r.to_bytes(SCALAR_BYTES, "big") + self.s.to_bytes(SCALAR_BYTES, "big")

    @classmethod
    def decode(cls, data: bytes) -> "Signature":
        if len(data) != SIGNATURE_BYTES:
            raise CryptoError(f"signature must be {SIGNATURE_BYTES} bytes")
        return cls(int.from_bytes(data[:SCALAR_BYTES], "big"), int.from_bytes(data[SCALAR_BYTES:], "big"))


@dataclass(frozen=True)
class EciesEncap:
    """A key encapsulated toward a recipient public key."""

    ephemeral_public: PublicKey
    wrapped_key: bytes
    tag: bytes

    def __post_init__(self):
        if len(self.wrapped_key) != SYMMETRIC_KEY_BYTES:
            raise CryptoError("wrapped key must be 16 bytes")
        if len(self.tag) != AEAD_TAG_BYTES:
            raise CryptoError("encapsulation tag must be 16 bytes")

    def encode(self) -> bytes:
        return self.ephemeral_public.encode() + self.wrapped_key + self.tag

    @classmethod
    def decode(cls, data: bytes) -> "EciesEncap":
        if len(data) != ENCAP_BYTES:
            raise CryptoError(f"encapsulation must be {ENCAP_BYTES} bytes")
        return cls(
            PublicKey.decode(data[: curve.POINT_BYTES]),
            data[curve.POINT_BYTES : curve.POINT_BYTES + SYMMETRIC_KEY_BYTES],
            data[curve.POINT_BYTES + SYMMETRIC_KEY_BYTES :],
        )


@dataclass(frozen=True)
class ButterflyKeyMaterial:
    """Caterpillar keypair plus the expansion key shared with the RA."""

    caterpillar_private: PrivateKey
    caterpillar_public: PublicKey
    expansion_key: bytes

    def __post_init__(self):
        if len(self.expansion_key) != EXPANSION_KEY_BYTES:
            raise CryptoError("expansion key must be 16 bytes")


def deterministic_rand(seed: int) -> RandFn:
    """Seeded byte source for reproducible tests and benchmark runs.

    Not suitable for production key material.
    """
    rng = Random(seed)
    return rng.randbytes


def _random_scalar(rand: RandFn) -> int:
    while True:
        candidate = int.from_bytes(rand(SCALAR_BYTES), "big")
        if 1 <= candidate < N:
            return candidate


def generate_keypair(rand: RandFn = secrets.token_bytes) -> tuple[PrivateKey, PublicKey]:
    private = PrivateKey(_random_scalar(rand))
    return private, private.public_key()


def hashed_id8(data: bytes) -> bytes:
    """Low-order 8 bytes of SHA-256, the compact identifier both stacks use."""
    return hashlib.sha256(data).digest()[-HASHED_ID8_BYTES:]


# --- ECDSA ------------------------------------------------------------------

_sign_calls = 0


def sign_call_count() -> int:
    """Total ecdsa_sign invocations in this process.

    The flow builders are characterised by how many signatures they
    produce; tests and the benchmark take deltas of this counter.
    """
    return _sign_calls


def _rfc6979_nonces(scalar: int, digest: bytes):
    # HMAC-SHA256 DRBG from RFC 6979 section 3.2; qlen = hlen = 256 bits,
    # so bits2int is the identity on a full digest.
    x = scalar.to_bytes(SCALAR_BYTES, "big")
    h1 = (int.from_bytes(digest, "big") % N).to_bytes(SCALAR_BYTES, "big")
    v = b"\x01" * 32
    k = b"\x00" * 32
    k = hmac.new(k, v + b"\x00" + x + h1, hashlib.sha256).digest()
    v = hmac.new(k, v, hashlib.sha256).digest()
    k = hmac.new(k, v + b"\x01" + x + h1, hashlib.sha256).digest()
    v = hmac.new(k, v, hashlib.sha256).digest()
    while True:
        v = hmac.new(k, v, hashlib.sha256).digest()
        candidate = int.from_bytes(v, "big")
        if 1 <= candidate < N:
            yield candidate
        k = hmac.new(k, v + b"\x00", hashlib.sha256).digest()
        v = hmac.new(k, v, hashlib.sha256).digest()


def ecdsa_sign(key: PrivateKey, message: bytes) -> Signature:
    """ECDSA-SHA256 with deterministic nonces; same inputs, same signature."""
    global _sign_calls
    _sign_calls += 1
    digest = hashlib.sha256(message).digest()
    e = int.from_bytes(digest, "big")
    for k in _rfc6979_nonces(key.scalar, digest):
        point = curve.base_mult(k)
        r = point[0] % N
        if r == 0:
            continue
        s = pow(k, -1, N) * (e + r * key.scalar) % N
        if s == 0:
            continue
        return Signature(r, s)
    raise AssertionError("unreachable")


def ecdsa_verify(key: PublicKey, message: bytes, sig: Signature) -> bool:
    """True iff sig is a valid ECDSA-SHA256 signature on message under key."""
    if not (0 < sig.r < N and 0 < sig.s < N):
        return False
    if not curve.is_on_curve(key.point()):
        return False
    e = int.from_bytes(hashlib.sha256(message).digest(), "big")
    w = pow(sig.s, -1, N)
    u1 = e * w % N
    u2 = sig.r * w % N
    point = curve.point_add(curve.base_mult(u1), curve.scalar_mult(u2, key.point()))
    if point is None:
        return False
    return point[0] % N == sig.r


# --- ECIES key encapsulation ------------------------------------------------


def _check_symmetric_key(key: bytes) -> None:
    if len(key) != SYMMETRIC_KEY_BYTES:
        raise CryptoError(f"symmetric key must be {SYMMETRIC_KEY_BYTES} bytes")


def _ecies_kdf(shared_x: int, ephemeral_encoded: bytes) -> tuple[bytes, bytes]:
    okm = hashlib.sha256(shared_x.to_bytes(SCALAR_BYTES, "big") + ephemeral_encoded).digest()
    return okm[:16], okm[16:]


def ecies_encapsulate(recipient: PublicKey, key: bytes, rand: RandFn = secrets.token_bytes) -> EciesEncap:
    """Wrap a 16-byte key toward the recipient under a fresh ephemeral key."""
    _check_symmetric_key(key)
    ephemeral_private, ephemeral_public = generate_keypair(rand)
    shared = curve.scalar_mult(ephemeral_private.scalar, recipient.point())
    kek, tag_key = _ecies_kdf(shared[0], ephemeral_public.encode())
    wrapped = bytes(a ^ b for a, b in zip(key, kek))
    tag = hmac.new(tag_key, wrapped, hashlib.sha256).digest()[:AEAD_TAG_BYTES]
    return EciesEncap(ephemeral_public, wrapped, tag)


def ecies_decapsulate(recipient: PrivateKey, encap: EciesEncap) -> bytes:
    """Recover the wrapped key; raises AuthFailure unless the tag verifies."""
    shared = curve.scalar_mult(recipient.scalar, encap.ephemeral_public.point())
    if shared is None:
        raise AuthFailure("degenerate shared secret")
    kek, tag_key = _ecies_kdf(shared[0], encap.ephemeral_public.encode())
    expected = hmac.new(tag_key, encap.wrapped_key, hashlib.sha256).digest()[:AEAD_TAG_BYTES]
    if not hmac.compare_digest(expected, encap.tag):
        raise AuthFailure("encapsulation tag mismatch")
    return bytes(a ^ b for a, b in zip(encap.wrapped_key, kek))


# --- AEAD payload encryption --------------------------------------------------


def aead_encrypt(key: bytes, nonce: bytes, plaintext: bytes) -> bytes:
    """AES-128-CCM; returns ciphertext plus a 16-byte tag."""
    _check_symmetric_key(key)
    if len(nonce) != AEAD_NONCE_BYTES:
        raise CryptoError(f"nonce must be {AEAD_NONCE_BYTES} bytes")
    return AESCCM(key, tag_length=AEAD_TAG_BYTES).encrypt(nonce, plaintext, None)


def aead_decrypt(key: bytes, nonce: bytes, ciphertext: bytes) -> bytes:
    _check_symmetric_key(key)
    if len(nonce) != AEAD_NONCE_BYTES:
        raise CryptoError(f"nonce must be {AEAD_NONCE_BYTES} bytes")
    if len(ciphertext) < AEAD_TAG_BYTES:
        raise AuthFailure("ciphertext shorter than the tag")
    try:
        return AESCCM(key, tag_length=AEAD_TAG_BYTES).decrypt(nonce, ciphertext, None)
    except InvalidTag as exc:
        raise AuthFailure("payload tag mismatch") from exc


# --- Butterfly / cocoon key arithmetic ----------------------------------------


def expand_scalar(expansion_key: bytes, index: int) -> int:
    """Deterministic per-index expansion scalar f(ck, i).

    Hash-based PRF: SHA-256 of the expansion key and the big-endian index,
    reduced mod the group order.
    """
    if len(expansion_key) != EXPANSION_KEY_BYTES:
        raise CryptoError("expansion key must be 16 bytes")
    if not 0 <= index < 2**32:
        raise CryptoError("expansion index out of range")
    digest = hashlib.sha256(expansion_key + index.to_bytes(4, "big")).digest()
    return int.from_bytes(digest, "big") % N


def cocoon_derive(material: ButterflyKeyMaterial, index: int) -> tuple[PrivateKey, PublicKey]:
    """Per-index cocoon keypair derived from the caterpillar keypair."""
    f = expand_scalar(material.expansion_key, index)
    scalar = (material.caterpillar_private.scalar + f) % N
    if scalar == 0:
        raise DegenerateKeyError(f"cocoon scalar for index {index} is zero")
    private = PrivateKey(scalar)
    return private, private.public_key()


def cocoon_public_derive(caterpillar_public: PublicKey, expansion_key: bytes, index: int) -> PublicKey:
    """Public half of cocoon_derive, computable without the private key."""
    f = expand_scalar(expansion_key, index)
    point = curve.point_add(caterpillar_public.point(), curve.base_mult(f))
    if point is None:
        raise DegenerateKeyError(f"cocoon point for index {index} is the identity")
    return PublicKey(point[0], point[1])


def butterfly_finalize(cocoon_private: PrivateKey, private_key_info: bytes) -> PrivateKey:
    """Fold the issuer's additive contribution into the cocoon private key."""
    if len(private_key_info) != SCALAR_BYTES:
        raise CryptoError("private key info must be a 32-byte scalar")
    c = int.from_bytes(private_key_info, "big")
    if c >= N:
        raise CryptoError("private key info exceeds the group order")
    scalar = (cocoon_private.scalar + c) % N
    if scalar == 0:
        raise DegenerateKeyError("butterfly scalar is zero")
    return PrivateKey(scalar)
