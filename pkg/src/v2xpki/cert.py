"""Explicit certificates, issuance and chain validation.

One certificate format serves both hierarchies; the deep IEEE-style tree
and the flat ETSI-style tree differ only in who issues what. A chain is
ordered leaf first, root last, and every link must hash-match, verify and
nest its validity inside the issuer's.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .crypto import PrivateKey, PublicKey, Signature, ecdsa_sign, ecdsa_verify, hashed_id8
from .wire import DecodeError, Reader, Writer

MAX_SUBJECT_NAME = 32
MAX_SSP = 31

# Default validity durations in seconds, overridable by callers.
ROOT_VALIDITY_S = 10 * 365 * 86400
INTERMEDIATE_VALIDITY_S = 5 * 365 * 86400
ENROLLMENT_VALIDITY_S = 3 * 365 * 86400
AUTHORIZATION_VALIDITY_S = 7 * 86400


class CertError(Exception):
    pass


class ValidityError(CertError):
    """Requested validity does not nest inside the issuer's."""


class ChainError(CertError):
    """Chain validation failure; reason is one of
    bad-signature, broken-link, expired, untrusted-root."""

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


@dataclass(frozen=True)
class PsidSsp:
    psid: int
    ssp: bytes = b""

    def write(self, w: Writer) -> None:
        if len(self.ssp) > MAX_SSP:
            raise ValueError(f"ssp longer than {MAX_SSP} bytes")
        w.u32(self.psid)
        w.bytes_field(self.ssp)

    @classmethod
    def read(cls, r: Reader) -> "PsidSsp":
        psid = r.u32("psid")
        ssp = r.bytes_field("ssp")
        if len(ssp) > MAX_SSP:
            raise DecodeError(r.offset - len(ssp), f"ssp longer than {MAX_SSP} bytes")
        return cls(psid, ssp)


@dataclass(frozen=True)
class Validity:
    start: int  # Time64
    duration: int  # seconds

    @property
    def end(self) -> int:
        return self.start + self.duration * 1_000_000

    def contains(self, at: int) -> bool:
        return self.start <= at <= self.end

    def encloses(self, other: "Validity") -> bool:
        return self.start <= other.start and other.end <= self.end

    def write(self, w: Writer) -> None:
        if self.duration <= 0:
            raise ValueError("validity duration must be positive")
        w.u64(self.start)
        w.u32(self.duration)

    @classmethod
    def read(cls, r: Reader) -> "Validity":
        start = r.u64("validity start")
        duration = r.u32("validity duration")
        if duration == 0:
            raise DecodeError(r.offset - 4, "validity duration must be positive")
        return cls(start, duration)


@dataclass(frozen=True)
class TbsCertificate:
    subject_name: bytes
    app_permissions: tuple[PsidSsp, ...]
    validity: Validity
    verification_key: PublicKey
    encryption_key: Optional[PublicKey] = None

    def write(self, w: Writer) -> None:
        if len(self.subject_name) > MAX_SUBJECT_NAME:
            raise ValueError(f"subject name longer than {MAX_SUBJECT_NAME} bytes")
        w.bytes_field(self.subject_name)
        w.list_count(len(self.app_permissions))
        for perm in self.app_permissions:
            perm.write(w)
        self.validity.write(w)
        w.raw(self.verification_key.encode())
        if self.encryption_key is None:
            w.u8(0)
        else:
            w.u8(1)
            w.raw(self.encryption_key.encode())

    @classmethod
    def read(cls, r: Reader) -> "TbsCertificate":
        name = r.bytes_field("subject name")
        if len(name) > MAX_SUBJECT_NAME:
            raise DecodeError(r.offset - len(name), f"subject name longer than {MAX_SUBJECT_NAME} bytes")
        count = r.list_count("app permissions")
        permissions = tuple(PsidSsp.read(r) for _ in range(count))
        validity = Validity.read(r)
        verification_key = read_public_key(r, "verification key")
        flag = r.u8("encryption-key flag")
        if flag == 0:
            encryption_key = None
        elif flag == 1:
            encryption_key = read_public_key(r, "encryption key")
        else:
            raise DecodeError(r.offset - 1, f"bad optional flag {flag}")
        return cls(name, permissions, validity, verification_key, encryption_key)

    def encode(self) -> bytes:
        w = Writer()
        self.write(w)
        return w.getvalue()


_ISSUER_SELF = 0
_ISSUER_DIGEST = 1


@dataclass(frozen=True)
class Certificate:
    issuer: Optional[bytes]  # HashedId8 of the issuer certificate; None when self-signed
    tbs: TbsCertificate
    signature: Signature

    def write(self, w: Writer) -> None:
        if self.issuer is None:
            w.u8(_ISSUER_SELF)
        else:
            if len(self.issuer) != 8:
                raise ValueError("issuer digest must be 8 bytes")
            w.u8(_ISSUER_DIGEST)
            w.raw(self.issuer)
        self.tbs.write(w)
        w.raw(self.signature.encode())

    @classmethod
    def read(cls, r: Reader) -> "Certificate":
        tag = r.u8("issuer tag")
        if tag == _ISSUER_SELF:
            issuer = None
        elif tag == _ISSUER_DIGEST:
            issuer = r.take(8, "issuer digest")
        else:
            raise DecodeError(r.offset - 1, f"bad issuer tag {tag}")
        tbs = TbsCertificate.read(r)
        signature = Signature.decode(r.take(64, "certificate signature"))
        return cls(issuer, tbs, signature)

    def encode(self) -> bytes:
        w = Writer()
        self.write(w)
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "Certificate":
        r = Reader(data)
        cert = cls.read(r)
        r.expect_end()
        return cert

    def hashed_id(self) -> bytes:
        return hashed_id8(self.encode())

    @property
    def is_self_signed(self) -> bool:
        return self.issuer is None


def read_public_key(r: Reader, what: str = "public key") -> PublicKey:
    from .crypto import CryptoError

    start = r.offset
    data = r.take(33, what)
    try:
        return PublicKey.decode(data)
    except CryptoError as exc:
        raise DecodeError(start, f"{what}: {exc}") from exc


CertificateChain = tuple  # leaf first, root last


def self_sign_root(keypair: tuple[PrivateKey, PublicKey], name: bytes, validity: Validity,
                   app_permissions: tuple[PsidSsp, ...] = ()) -> Certificate:
    private, public = keypair
    tbs = TbsCertificate(name, app_permissions, validity, public)
    return Certificate(None, tbs, ecdsa_sign(private, tbs.encode()))


def issue(issuer_private: PrivateKey, issuer_cert: Certificate, subject_tbs: TbsCertificate) -> Certificate:
    if not issuer_cert.tbs.validity.encloses(subject_tbs.validity):
        raise ValidityError(
            f"subject validity [{subject_tbs.validity.start}, {subject_tbs.validity.end}] "
            f"exceeds issuer validity [{issuer_cert.tbs.validity.start}, {issuer_cert.tbs.validity.end}]"
        )
    return Certificate(issuer_cert.hashed_id(), subject_tbs, ecdsa_sign(issuer_private, subject_tbs.encode()))


def verify_certificate(cert: Certificate, issuer_cert: Certificate) -> bool:
    """Signature check of cert under issuer_cert (which may be cert itself)."""
    if cert.is_self_signed:
        if issuer_cert != cert:
            return False
    elif cert.issuer != issuer_cert.hashed_id():
        return False
    return ecdsa_verify(issuer_cert.tbs.verification_key, cert.tbs.encode(), cert.signature)


def verify_chain(chain: Sequence[Certificate], trust_anchor: Certificate, now: int) -> None:
    """Validate a leaf-first chain against a trust anchor at time `now`.

    Raises ChainError with reason bad-signature, broken-link, expired or
    untrusted-root; returns None on acceptance.
    """
    if not chain:
        raise ChainError("untrusted-root", "empty chain")
    if chain[-1] != trust_anchor:
        raise ChainError("untrusted-root", "chain does not end at the trust anchor")

    root = chain[-1]
    if not root.is_self_signed:
        raise ChainError("broken-link", "root is not self-signed")
    if not ecdsa_verify(root.tbs.verification_key, root.tbs.encode(), root.signature):
        raise ChainError("bad-signature", "root self-signature")
    if not root.tbs.validity.contains(now):
        raise ChainError("expired", "root certificate")

    for position in range(len(chain) - 1):
        cert = chain[position]
        issuer_cert = chain[position + 1]
        if cert.issuer != issuer_cert.hashed_id():
            raise ChainError("broken-link", f"certificate {position} does not link to its issuer")
        if not issuer_cert.tbs.validity.encloses(cert.tbs.validity):
            raise ChainError("expired", f"certificate {position} validity exceeds its issuer's")
        if not cert.tbs.validity.contains(now):
            raise ChainError("expired", f"certificate {position}")
        if not ecdsa_verify(issuer_cert.tbs.verification_key, cert.tbs.encode(), cert.signature):
            raise ChainError("bad-signature", f"certificate {position}")
