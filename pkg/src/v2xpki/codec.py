"""Envelope family and flow-message codec.

Deterministic, byte-exact binary encoding for every structure exchanged
in the two provisioning flows. Exact parity with the standards' ASN.1
COER is out of scope; what matters here is that equal values encode to
identical bytes, decoding is the exact inverse, and malformed input is
rejected with an offset instead of crashing.

The envelope family mirrors the tagged data containers both standards
use: unsecured, signed, encrypted, and signed-external-payload (where
the to-be-signed payload is the 32-byte digest of content carried
elsewhere).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Optional, Type, TypeVar, Union

from .cert import Certificate, PsidSsp, Validity, read_public_key
from .crypto import (
    AEAD_NONCE_BYTES,
    EXPANSION_KEY_BYTES,
    EciesEncap,
    PublicKey,
    Signature,
)
from .wire import DecodeError, Reader, Writer

T = TypeVar("T")

# Provisioning traffic shares one application id in this toolkit.
PSID_PROVISIONING = 0x23

EXTERNAL_DIGEST_BYTES = 32
ETSI_REQUEST_HASH_BYTES = 16


def encode(value) -> bytes:
    w = Writer()
    value.write(w)
    return w.getvalue()


def decode(data: bytes, cls: Type[T]) -> T:
    """Decode a complete structure; trailing bytes are an error."""
    r = Reader(data)
    value = cls.read(r)
    r.expect_end()
    return value


# --- signer identifiers -------------------------------------------------------

_SIGNER_SELF = 0
_SIGNER_DIGEST = 1
_SIGNER_CERTIFICATE = 2


@dataclass(frozen=True)
class SignerSelf:
    pass


@dataclass(frozen=True)
class SignerDigest:
    digest: bytes  # HashedId8 of the signer's certificate


@dataclass(frozen=True)
class SignerCertificate:
    certificate: Certificate


SignerIdentifier = Union[SignerSelf, SignerDigest, SignerCertificate]


def _write_signer(w: Writer, signer: SignerIdentifier) -> None:
    if isinstance(signer, SignerSelf):
        w.u8(_SIGNER_SELF)
    elif isinstance(signer, SignerDigest):
        if len(signer.digest) != 8:
            raise ValueError("signer digest must be 8 bytes")
        w.u8(_SIGNER_DIGEST)
        w.raw(signer.digest)
    elif isinstance(signer, SignerCertificate):
        w.u8(_SIGNER_CERTIFICATE)
        signer.certificate.write(w)
    else:
        raise ValueError(f"not a signer identifier: {signer!r}")


def _read_signer(r: Reader) -> SignerIdentifier:
    tag = r.u8("signer tag")
    if tag == _SIGNER_SELF:
        return SignerSelf()
    if tag == _SIGNER_DIGEST:
        return SignerDigest(r.take(8, "signer digest"))
    if tag == _SIGNER_CERTIFICATE:
        return SignerCertificate(Certificate.read(r))
    raise DecodeError(r.offset - 1, f"unknown signer tag {tag}")


# --- envelopes ----------------------------------------------------------------

TAG_UNSECURED = 0
TAG_SIGNED = 1
TAG_ENCRYPTED = 2
TAG_SIGNED_EXTERNAL = 3


@dataclass(frozen=True)
class TbsData:
    """Payload plus header info; the byte-string a signature covers."""

    payload: bytes
    psid: int = PSID_PROVISIONING
    generation_time: int = 0

    def write(self, w: Writer) -> None:
        w.bytes_field(self.payload)
        w.u32(self.psid)
        w.u64(self.generation_time)

    @classmethod
    def read(cls, r: Reader) -> "TbsData":
        payload = r.bytes_field("tbs payload")
        psid = r.u32("psid")
        generation_time = r.u64("generation time")
        return cls(payload, psid, generation_time)

    def encode(self) -> bytes:
        w = Writer()
        self.write(w)
        return w.getvalue()


@dataclass(frozen=True)
class Unsecured:
    payload: bytes

    def write(self, w: Writer) -> None:
        w.u8(TAG_UNSECURED)
        w.bytes_field(self.payload)

    @classmethod
    def read(cls, r: Reader) -> "Unsecured":
        _expect_tag(r, TAG_UNSECURED, "unsecured")
        return cls(r.bytes_field("unsecured payload"))


@dataclass(frozen=True)
class SignedData:
    """Signed envelope; `external` marks the signed-external-payload form,
    whose tbs payload is a digest of content carried out of band."""

    signer: SignerIdentifier
    tbs: TbsData
    signature: Signature
    external: bool = False

    def write(self, w: Writer) -> None:
        if self.external and len(self.tbs.payload) != EXTERNAL_DIGEST_BYTES:
            raise ValueError("external payload form requires a 32-byte digest payload")
        w.u8(TAG_SIGNED_EXTERNAL if self.external else TAG_SIGNED)
        _write_signer(w, self.signer)
        self.tbs.write(w)
        w.raw(self.signature.encode())

    @classmethod
    def read(cls, r: Reader) -> "SignedData":
        start = r.offset
        tag = r.u8("envelope tag")
        if tag not in (TAG_SIGNED, TAG_SIGNED_EXTERNAL):
            raise DecodeError(start, f"expected a signed envelope, got tag {tag}")
        external = tag == TAG_SIGNED_EXTERNAL
        signer = _read_signer(r)
        tbs = TbsData.read(r)
        if external and len(tbs.payload) != EXTERNAL_DIGEST_BYTES:
            raise DecodeError(start, "external payload form requires a 32-byte digest payload")
        signature = Signature.decode(r.take(64, "signature"))
        return cls(signer, tbs, signature, external)


_RECIPIENT_CERT = 0
_RECIPIENT_PSK = 1


@dataclass(frozen=True)
class CertRecipient:
    recipient_id: bytes  # HashedId8 of the recipient certificate or public key
    encap: EciesEncap


@dataclass(frozen=True)
class PskRecipient:
    recipient_id: bytes  # HashedId8 of the pre-shared key itself


RecipientInfo = Union[CertRecipient, PskRecipient]


def _write_recipient(w: Writer, recipient: RecipientInfo) -> None:
    if len(recipient.recipient_id) != 8:
        raise ValueError("recipient id must be 8 bytes")
    if isinstance(recipient, CertRecipient):
        w.u8(_RECIPIENT_CERT)
        w.raw(recipient.recipient_id)
        w.raw(recipient.encap.encode())
    elif isinstance(recipient, PskRecipient):
        w.u8(_RECIPIENT_PSK)
        w.raw(recipient.recipient_id)
    else:
        raise ValueError(f"not a recipient info: {recipient!r}")


def _read_recipient(r: Reader) -> RecipientInfo:
    tag = r.u8("recipient tag")
    if tag == _RECIPIENT_CERT:
        recipient_id = r.take(8, "recipient id")
        start = r.offset
        from .crypto import CryptoError, ENCAP_BYTES

        try:
            encap = EciesEncap.decode(r.take(ENCAP_BYTES, "key encapsulation"))
        except CryptoError as exc:
            raise DecodeError(start, f"key encapsulation: {exc}") from exc
        return CertRecipient(recipient_id, encap)
    if tag == _RECIPIENT_PSK:
        return PskRecipient(r.take(8, "recipient id"))
    raise DecodeError(r.offset - 1, f"unknown recipient tag {tag}")


@dataclass(frozen=True)
class EncryptedData:
    recipients: tuple[RecipientInfo, ...]
    nonce: bytes
    ciphertext: bytes

    def write(self, w: Writer) -> None:
        if not self.recipients:
            raise ValueError("encrypted envelope needs at least one recipient")
        if len(self.nonce) != AEAD_NONCE_BYTES:
            raise ValueError("nonce must be 12 bytes")
        w.u8(TAG_ENCRYPTED)
        w.list_count(len(self.recipients))
        for recipient in self.recipients:
            _write_recipient(w, recipient)
        w.raw(self.nonce)
        w.bytes_field(self.ciphertext)

    @classmethod
    def read(cls, r: Reader) -> "EncryptedData":
        _expect_tag(r, TAG_ENCRYPTED, "encrypted")
        count = r.list_count("recipients")
        if count == 0:
            raise DecodeError(r.offset - 1, "encrypted envelope needs at least one recipient")
        recipients = tuple(_read_recipient(r) for _ in range(count))
        nonce = r.take(AEAD_NONCE_BYTES, "nonce")
        ciphertext = r.bytes_field("ciphertext")
        return cls(recipients, nonce, ciphertext)


Envelope = Union[Unsecured, SignedData, EncryptedData]

_ENVELOPE_READERS = {
    TAG_UNSECURED: Unsecured,
    TAG_SIGNED: SignedData,
    TAG_ENCRYPTED: EncryptedData,
    TAG_SIGNED_EXTERNAL: SignedData,
}


def _expect_tag(r: Reader, tag: int, name: str) -> None:
    start = r.offset
    got = r.u8("envelope tag")
    if got != tag:
        raise DecodeError(start, f"expected {name} envelope (tag {tag}), got tag {got}")


def read_envelope(r: Reader) -> Envelope:
    tag = r.peek_u8("envelope tag")
    cls = _ENVELOPE_READERS.get(tag)
    if cls is None:
        raise DecodeError(r.offset, f"unknown envelope tag {tag}")
    return cls.read(r)


def decode_envelope(data: bytes) -> Envelope:
    r = Reader(data)
    envelope = read_envelope(r)
    r.expect_end()
    return envelope


# --- shared field helpers -----------------------------------------------------


def _write_permissions(w: Writer, permissions: tuple[PsidSsp, ...]) -> None:
    w.list_count(len(permissions))
    for perm in permissions:
        perm.write(w)


def _read_permissions(r: Reader) -> tuple[PsidSsp, ...]:
    count = r.list_count("app permissions")
    return tuple(PsidSsp.read(r) for _ in range(count))


def _write_optional_certificate(w: Writer, cert: Optional[Certificate]) -> None:
    if cert is None:
        w.u8(0)
    else:
        w.u8(1)
        cert.write(w)


def _read_optional_certificate(r: Reader) -> Optional[Certificate]:
    flag = r.u8("certificate flag")
    if flag == 0:
        return None
    if flag == 1:
        return Certificate.read(r)
    raise DecodeError(r.offset - 1, f"bad optional flag {flag}")


# --- IEEE-side flow messages --------------------------------------------------


@dataclass(frozen=True)
class EeEcaCertRequest:
    app_permissions: tuple[PsidSsp, ...]
    verification_key: PublicKey
    requested_validity: Validity

    def write(self, w: Writer) -> None:
        _write_permissions(w, self.app_permissions)
        w.raw(self.verification_key.encode())
        self.requested_validity.write(w)

    @classmethod
    def read(cls, r: Reader) -> "EeEcaCertRequest":
        permissions = _read_permissions(r)
        key = read_public_key(r, "verification key")
        validity = Validity.read(r)
        return cls(permissions, key, validity)


@dataclass(frozen=True)
class EcaEeCertResponse:
    request_hash: bytes  # HashedId8 of the triggering request bytes
    eca_cert_chain: tuple[Certificate, ...]  # leaf first, root last
    enrollment_certificate: Certificate

    def write(self, w: Writer) -> None:
        if len(self.request_hash) != 8:
            raise ValueError("request hash must be 8 bytes")
        w.raw(self.request_hash)
        w.list_count(len(self.eca_cert_chain))
        for cert in self.eca_cert_chain:
            cert.write(w)
        self.enrollment_certificate.write(w)

    @classmethod
    def read(cls, r: Reader) -> "EcaEeCertResponse":
        request_hash = r.take(8, "request hash")
        count = r.list_count("certificate chain")
        chain = tuple(Certificate.read(r) for _ in range(count))
        ec = Certificate.read(r)
        return cls(request_hash, chain, ec)


@dataclass(frozen=True)
class ButterflyParams:
    caterpillar_public: PublicKey
    expansion_key: bytes

    def write(self, w: Writer) -> None:
        if len(self.expansion_key) != EXPANSION_KEY_BYTES:
            raise ValueError("expansion key must be 16 bytes")
        w.raw(self.caterpillar_public.encode())
        w.raw(self.expansion_key)

    @classmethod
    def read(cls, r: Reader) -> "ButterflyParams":
        key = read_public_key(r, "caterpillar public key")
        expansion = r.take(EXPANSION_KEY_BYTES, "expansion key")
        return cls(key, expansion)


@dataclass(frozen=True)
class EeRaCertRequest:
    app_permissions: tuple[PsidSsp, ...]
    butterfly_params: ButterflyParams
    cert_count: int
    requested_start: int  # Time64

    def write(self, w: Writer) -> None:
        if self.cert_count < 1:
            raise ValueError("cert count must be at least 1")
        _write_permissions(w, self.app_permissions)
        self.butterfly_params.write(w)
        w.u8(self.cert_count)
        w.u64(self.requested_start)

    @classmethod
    def read(cls, r: Reader) -> "EeRaCertRequest":
        permissions = _read_permissions(r)
        params = ButterflyParams.read(r)
        count = r.u8("cert count")
        if count < 1:
            raise DecodeError(r.offset - 1, "cert count must be at least 1")
        start = r.u64("requested start")
        return cls(permissions, params, count, start)


class AckResult(IntEnum):
    OK = 0
    MALFORMED = 1
    BAD_SIGNATURE = 2
    UNKNOWN_SIGNER = 3
    EXPIRED = 4
    DUPLICATE = 5
    DENIED = 6


@dataclass(frozen=True)
class RaEeCertAck:
    request_hash: bytes
    result: AckResult
    download_time: int  # Time64, meaningful when result is OK

    def write(self, w: Writer) -> None:
        if len(self.request_hash) != 8:
            raise ValueError("request hash must be 8 bytes")
        w.raw(self.request_hash)
        w.u8(int(self.result))
        w.u64(self.download_time)

    @classmethod
    def read(cls, r: Reader) -> "RaEeCertAck":
        request_hash = r.take(8, "request hash")
        raw = r.u8("ack result")
        try:
            result = AckResult(raw)
        except ValueError:
            raise DecodeError(r.offset - 1, f"unknown ack result {raw}") from None
        download_time = r.u64("download time")
        return cls(request_hash, result, download_time)


@dataclass(frozen=True)
class RaEeCertInfo:
    request_hash: bytes
    generation_time: int
    current_i: int
    next_di_time: int

    def write(self, w: Writer) -> None:
        if len(self.request_hash) != 8:
            raise ValueError("request hash must be 8 bytes")
        if self.next_di_time <= self.generation_time:
            raise ValueError("next download time must follow the generation time")
        w.raw(self.request_hash)
        w.u64(self.generation_time)
        w.u32(self.current_i)
        w.u64(self.next_di_time)

    @classmethod
    def read(cls, r: Reader) -> "RaEeCertInfo":
        request_hash = r.take(8, "request hash")
        generation_time = r.u64("generation time")
        current_i = r.u32("current period")
        next_di_time = r.u64("next download time")
        if next_di_time <= generation_time:
            raise DecodeError(r.offset - 8, "next download time must follow the generation time")
        return cls(request_hash, generation_time, current_i, next_di_time)


@dataclass(frozen=True)
class AcaEeCertResponse:
    generation_time: int
    private_key_info: bytes  # 32-byte additive scalar contribution
    authorization_certificate: Certificate

    def write(self, w: Writer) -> None:
        if len(self.private_key_info) != 32:
            raise ValueError("private key info must be 32 bytes")
        w.u64(self.generation_time)
        w.raw(self.private_key_info)
        self.authorization_certificate.write(w)

    @classmethod
    def read(cls, r: Reader) -> "AcaEeCertResponse":
        generation_time = r.u64("generation time")
        info = r.take(32, "private key info")
        cert = Certificate.read(r)
        return cls(generation_time, info, cert)


@dataclass(frozen=True)
class RaAcaCertRequest:
    """RA-to-ACA expansion request for one cocoon index (internal plumbing)."""

    cocoon_public: PublicKey
    app_permissions: tuple[PsidSsp, ...]
    requested_validity: Validity

    def write(self, w: Writer) -> None:
        w.raw(self.cocoon_public.encode())
        _write_permissions(w, self.app_permissions)
        self.requested_validity.write(w)

    @classmethod
    def read(cls, r: Reader) -> "RaAcaCertRequest":
        key = read_public_key(r, "cocoon public key")
        permissions = _read_permissions(r)
        validity = Validity.read(r)
        return cls(key, permissions, validity)


# --- ETSI-side flow messages ----------------------------------------------------


class ResponseCode(IntEnum):
    OK = 0
    CANT_PARSE = 1
    BAD_CONTENT_TYPE = 2
    UNKNOWN_ITS = 3
    INVALID_SIGNATURE = 4
    INVALID_ENCRYPTION_KEY = 5
    BAD_ITS_STATUS = 6
    DENIED_PERMISSIONS = 7
    INTERNAL_SERVER_ERROR = 8


def _read_response_code(r: Reader) -> ResponseCode:
    raw = r.u8("response code")
    try:
        return ResponseCode(raw)
    except ValueError:
        raise DecodeError(r.offset - 1, f"unknown response code {raw}") from None


@dataclass(frozen=True)
class InnerEcRequest:
    its_id: bytes
    app_permissions: tuple[PsidSsp, ...]
    enrolment_public_key: PublicKey
    requested_validity: Validity

    def write(self, w: Writer) -> None:
        if len(self.its_id) > 32:
            raise ValueError("its id longer than 32 bytes")
        w.bytes_field(self.its_id)
        _write_permissions(w, self.app_permissions)
        w.raw(self.enrolment_public_key.encode())
        self.requested_validity.write(w)

    @classmethod
    def read(cls, r: Reader) -> "InnerEcRequest":
        its_id = r.bytes_field("its id")
        if len(its_id) > 32:
            raise DecodeError(r.offset - len(its_id), "its id longer than 32 bytes")
        permissions = _read_permissions(r)
        key = read_public_key(r, "enrolment public key")
        validity = Validity.read(r)
        return cls(its_id, permissions, key, validity)


def _check_code_credential(code: ResponseCode, cert: Optional[Certificate], what: str):
    if (code == ResponseCode.OK) != (cert is not None):
        raise ValueError(f"{what} present iff the response code is ok")


@dataclass(frozen=True)
class InnerEcResponse:
    request_hash: bytes  # low-order 16 bytes of SHA-256 of the request
    response_code: ResponseCode
    enrolment_credential: Optional[Certificate] = None

    def write(self, w: Writer) -> None:
        if len(self.request_hash) != ETSI_REQUEST_HASH_BYTES:
            raise ValueError("request hash must be 16 bytes")
        _check_code_credential(self.response_code, self.enrolment_credential, "credential")
        w.raw(self.request_hash)
        w.u8(int(self.response_code))
        _write_optional_certificate(w, self.enrolment_credential)

    @classmethod
    def read(cls, r: Reader) -> "InnerEcResponse":
        request_hash = r.take(ETSI_REQUEST_HASH_BYTES, "request hash")
        code = _read_response_code(r)
        credential = _read_optional_certificate(r)
        if (code == ResponseCode.OK) != (credential is not None):
            raise DecodeError(r.offset, "credential present iff the response code is ok")
        return cls(request_hash, code, credential)


@dataclass(frozen=True)
class SharedAtRequest:
    ea_id: bytes  # HashedId8 of the EA certificate
    key_tag: bytes  # 16 opaque bytes
    app_permissions: tuple[PsidSsp, ...]
    requested_validity: Validity

    def write(self, w: Writer) -> None:
        if len(self.ea_id) != 8:
            raise ValueError("ea id must be 8 bytes")
        if len(self.key_tag) != 16:
            raise ValueError("key tag must be 16 bytes")
        w.raw(self.ea_id)
        w.raw(self.key_tag)
        _write_permissions(w, self.app_permissions)
        self.requested_validity.write(w)

    @classmethod
    def read(cls, r: Reader) -> "SharedAtRequest":
        ea_id = r.take(8, "ea id")
        key_tag = r.take(16, "key tag")
        permissions = _read_permissions(r)
        validity = Validity.read(r)
        return cls(ea_id, key_tag, permissions, validity)


@dataclass(frozen=True)
class InnerAtRequest:
    authorization_public_key: PublicKey
    shared_at_request: SharedAtRequest
    ec_signature: bytes  # encoded encrypted envelope, opaque to the AA

    def write(self, w: Writer) -> None:
        w.raw(self.authorization_public_key.encode())
        self.shared_at_request.write(w)
        w.bytes_field(self.ec_signature)

    @classmethod
    def read(cls, r: Reader) -> "InnerAtRequest":
        key = read_public_key(r, "authorization public key")
        shared = SharedAtRequest.read(r)
        ec_signature = r.bytes_field("ec signature")
        return cls(key, shared, ec_signature)


@dataclass(frozen=True)
class InnerAtResponse:
    request_hash: bytes
    response_code: ResponseCode
    authorization_ticket: Optional[Certificate] = None

    def write(self, w: Writer) -> None:
        if len(self.request_hash) != ETSI_REQUEST_HASH_BYTES:
            raise ValueError("request hash must be 16 bytes")
        _check_code_credential(self.response_code, self.authorization_ticket, "ticket")
        w.raw(self.request_hash)
        w.u8(int(self.response_code))
        _write_optional_certificate(w, self.authorization_ticket)

    @classmethod
    def read(cls, r: Reader) -> "InnerAtResponse":
        request_hash = r.take(ETSI_REQUEST_HASH_BYTES, "request hash")
        code = _read_response_code(r)
        ticket = _read_optional_certificate(r)
        if (code == ResponseCode.OK) != (ticket is not None):
            raise DecodeError(r.offset, "ticket present iff the response code is ok")
        return cls(request_hash, code, ticket)


@dataclass(frozen=True)
class AuthorizationValidationRequest:
    shared_at_request: SharedAtRequest
    ec_signature: bytes

    def write(self, w: Writer) -> None:
        self.shared_at_request.write(w)
        w.bytes_field(self.ec_signature)

    @classmethod
    def read(cls, r: Reader) -> "AuthorizationValidationRequest":
        shared = SharedAtRequest.read(r)
        ec_signature = r.bytes_field("ec signature")
        return cls(shared, ec_signature)


@dataclass(frozen=True)
class AuthorizationValidationResponse:
    request_hash: bytes
    response_code: ResponseCode

    def write(self, w: Writer) -> None:
        if len(self.request_hash) != ETSI_REQUEST_HASH_BYTES:
            raise ValueError("request hash must be 16 bytes")
        w.raw(self.request_hash)
        w.u8(int(self.response_code))

    @classmethod
    def read(cls, r: Reader) -> "AuthorizationValidationResponse":
        request_hash = r.take(ETSI_REQUEST_HASH_BYTES, "request hash")
        code = _read_response_code(r)
        return cls(request_hash, code)
