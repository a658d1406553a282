"""Deterministic golden-vector corpus for the wire codec.

One sample per wire structure, built from pinned seeds and a pinned
clock, stored as hex-dump files. The files are checked into the repo and
compared on every test run; they are regenerated only through the
explicit CLI command, never implicitly.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Callable

from . import crypto, service
from .cert import Certificate, PsidSsp, TbsCertificate, Validity, issue
from .codec import (
    AcaEeCertResponse,
    AckResult,
    AuthorizationValidationRequest,
    AuthorizationValidationResponse,
    ButterflyParams,
    CertRecipient,
    EcaEeCertResponse,
    EeEcaCertRequest,
    EeRaCertRequest,
    EncryptedData,
    InnerAtRequest,
    InnerAtResponse,
    InnerEcRequest,
    InnerEcResponse,
    PSID_PROVISIONING,
    PskRecipient,
    RaAcaCertRequest,
    RaEeCertAck,
    RaEeCertInfo,
    ResponseCode,
    SharedAtRequest,
    SignedData,
    SignerDigest,
    TbsData,
    Unsecured,
    encode,
)

GOLDEN_TIME64 = 690_000_000_000_000
DEFAULT_DIR = Path("testdata/golden")
_HEX_LINE_BYTES = 32


def _rand_for(name: str) -> crypto.RandFn:
    # independent stream per structure so vectors do not shift when the
    # corpus gains or loses entries
    seed = int.from_bytes(hashlib.sha256(b"golden:" + name.encode()).digest()[:8], "big")
    return crypto.deterministic_rand(seed)


def _keypair(name: str) -> tuple[crypto.PrivateKey, crypto.PublicKey]:
    return crypto.generate_keypair(_rand_for("key:" + name))


def _material() -> service.PkiMaterial:
    return service.build_topology(
        "ieee", rand=_rand_for("material"), clock=lambda: GOLDEN_TIME64)


_PERMISSIONS = (PsidSsp(0x20, b"\x01"), PsidSsp(0x23))
_VALIDITY = Validity(GOLDEN_TIME64, 90 * 86400)


def _sample_certificate() -> bytes:
    material = _material()
    eca = material.authorities["eca"]
    _, public = _keypair("certificate-subject")
    _, enc_public = _keypair("certificate-subject-enc")
    cert = issue(eca.private, eca.cert,
                 TbsCertificate(b"sample", _PERMISSIONS, _VALIDITY, public, enc_public))
    return cert.encode()


def _sample_signed() -> bytes:
    private, _ = _keypair("signed")
    tbs = TbsData(b"signed payload", PSID_PROVISIONING, GOLDEN_TIME64)
    return encode(SignedData(SignerDigest(b"\x11" * 8), tbs,
                             crypto.ecdsa_sign(private, tbs.encode())))


def _sample_signed_external() -> bytes:
    private, _ = _keypair("signed-external")
    digest = hashlib.sha256(b"external content").digest()
    tbs = TbsData(digest, PSID_PROVISIONING, GOLDEN_TIME64)
    return encode(SignedData(SignerDigest(b"\x22" * 8), tbs,
                             crypto.ecdsa_sign(private, tbs.encode()), external=True))


def _sample_encrypted() -> bytes:
    rand = _rand_for("encrypted")
    _, recipient_public = _keypair("encrypted-recipient")
    data_key = rand(16)
    nonce = rand(12)
    encap = crypto.ecies_encapsulate(recipient_public, data_key, rand)
    return encode(EncryptedData(
        (CertRecipient(b"\x33" * 8, encap), PskRecipient(crypto.hashed_id8(data_key))),
        nonce, crypto.aead_encrypt(data_key, nonce, b"encrypted payload")))


def _sample_ee_eca_cert_request() -> bytes:
    _, public = _keypair("ee-enroll")
    return encode(EeEcaCertRequest(_PERMISSIONS, public, _VALIDITY))


def _sample_eca_ee_cert_response() -> bytes:
    material = _material()
    eca = material.authorities["eca"]
    _, public = _keypair("ee-enroll")
    ec = issue(eca.private, eca.cert, TbsCertificate(b"", _PERMISSIONS, _VALIDITY, public))
    return encode(EcaEeCertResponse(b"\x44" * 8, eca.chain, ec))


def _sample_ee_ra_cert_request() -> bytes:
    rand = _rand_for("butterfly")
    _, caterpillar = _keypair("caterpillar")
    return encode(EeRaCertRequest(
        _PERMISSIONS, ButterflyParams(caterpillar, rand(16)), 5, GOLDEN_TIME64))


def _sample_ra_ee_cert_ack() -> bytes:
    return encode(RaEeCertAck(b"\x55" * 8, AckResult.OK, GOLDEN_TIME64 + 1_000_000))


def _sample_ra_ee_cert_info() -> bytes:
    return encode(RaEeCertInfo(b"\x66" * 8, GOLDEN_TIME64, 1140, GOLDEN_TIME64 + 604_800_000_000))


def _sample_info_spdu() -> bytes:
    return encode(Unsecured(_sample_ra_ee_cert_info()))


def _sample_aca_ee_cert_response() -> bytes:
    material = _material()
    aca = material.authorities["aca"]
    _, public = _keypair("butterfly-public")
    at = issue(aca.private, aca.cert, TbsCertificate(b"", _PERMISSIONS, _VALIDITY, public))
    scalar = crypto.expand_scalar(b"\x77" * 16, 9)
    return encode(AcaEeCertResponse(GOLDEN_TIME64, scalar.to_bytes(32, "big"), at))


def _sample_ra_aca_cert_request() -> bytes:
    _, cocoon = _keypair("cocoon")
    return encode(RaAcaCertRequest(cocoon, _PERMISSIONS, _VALIDITY))


def _sample_inner_ec_request() -> bytes:
    _, public = _keypair("its-enrol")
    return encode(InnerEcRequest(b"golden-station", _PERMISSIONS, public, _VALIDITY))


def _sample_inner_ec_response() -> bytes:
    material = service.build_topology(
        "etsi", rand=_rand_for("etsi-material"), clock=lambda: GOLDEN_TIME64)
    ea = material.authorities["ea"]
    _, public = _keypair("its-enrol")
    credential = issue(ea.private, ea.cert,
                       TbsCertificate(b"golden-station", _PERMISSIONS, _VALIDITY, public))
    return encode(InnerEcResponse(b"\x88" * 16, ResponseCode.OK, credential))


def _sample_shared_at_request() -> bytes:
    return encode(SharedAtRequest(b"\x99" * 8, b"\xaa" * 16, _PERMISSIONS, _VALIDITY))


def _sample_inner_at_request() -> bytes:
    rand = _rand_for("inner-at")
    _, auth_public = _keypair("its-auth")
    _, ea_public = _keypair("ea-enc")
    shared = SharedAtRequest(b"\x99" * 8, b"\xaa" * 16, _PERMISSIONS, _VALIDITY)
    ec_private, _ = _keypair("its-enrol")
    digest = hashlib.sha256(encode(shared)).digest()
    tbs = TbsData(digest, PSID_PROVISIONING, GOLDEN_TIME64)
    ec_sig = SignedData(SignerDigest(b"\xbb" * 8), tbs,
                        crypto.ecdsa_sign(ec_private, tbs.encode()), external=True)
    data_key = rand(16)
    nonce = rand(12)
    encap = crypto.ecies_encapsulate(ea_public, data_key, rand)
    ec_sig_env = EncryptedData((CertRecipient(b"\x99" * 8, encap),), nonce,
                               crypto.aead_encrypt(data_key, nonce, encode(ec_sig)))
    return encode(InnerAtRequest(auth_public, shared, encode(ec_sig_env)))


def _sample_inner_at_response() -> bytes:
    material = service.build_topology(
        "etsi", rand=_rand_for("etsi-material"), clock=lambda: GOLDEN_TIME64)
    aa = material.authorities["aa"]
    _, public = _keypair("its-auth")
    ticket = issue(aa.private, aa.cert, TbsCertificate(b"", _PERMISSIONS, _VALIDITY, public))
    return encode(InnerAtResponse(b"\xcc" * 16, ResponseCode.OK, ticket))


def _sample_validation_request() -> bytes:
    shared = SharedAtRequest(b"\x99" * 8, b"\xaa" * 16, _PERMISSIONS, _VALIDITY)
    return encode(AuthorizationValidationRequest(shared, b"opaque ec signature"))


def _sample_validation_response() -> bytes:
    return encode(AuthorizationValidationResponse(b"\xdd" * 16, ResponseCode.OK))


BUILDERS: dict[str, Callable[[], bytes]] = {
    "unsecured_empty": lambda: encode(Unsecured(b"")),
    "unsecured": lambda: encode(Unsecured(b"unsecured payload")),
    "signed_data": _sample_signed,
    "signed_external_payload": _sample_signed_external,
    "encrypted_data": _sample_encrypted,
    "certificate": _sample_certificate,
    "ee_eca_cert_request": _sample_ee_eca_cert_request,
    "eca_ee_cert_response": _sample_eca_ee_cert_response,
    "ee_ra_cert_request": _sample_ee_ra_cert_request,
    "ra_ee_cert_ack": _sample_ra_ee_cert_ack,
    "ra_ee_cert_info": _sample_ra_ee_cert_info,
    "ra_ee_cert_info_spdu": _sample_info_spdu,
    "aca_ee_cert_response": _sample_aca_ee_cert_response,
    "ra_aca_cert_request": _sample_ra_aca_cert_request,
    "inner_ec_request": _sample_inner_ec_request,
    "inner_ec_response": _sample_inner_ec_response,
    "shared_at_request": _sample_shared_at_request,
    "inner_at_request": _sample_inner_at_request,
    "inner_at_response": _sample_inner_at_response,
    "authorization_validation_request": _sample_validation_request,
    "authorization_validation_response": _sample_validation_response,
}


# wire type each vector decodes as, for round-trip and truncation checks
DECODE_TYPES: dict[str, type] = {
    "unsecured_empty": Unsecured,
    "unsecured": Unsecured,
    "signed_data": SignedData,
    "signed_external_payload": SignedData,
    "encrypted_data": EncryptedData,
    "certificate": Certificate,
    "ee_eca_cert_request": EeEcaCertRequest,
    "eca_ee_cert_response": EcaEeCertResponse,
    "ee_ra_cert_request": EeRaCertRequest,
    "ra_ee_cert_ack": RaEeCertAck,
    "ra_ee_cert_info": RaEeCertInfo,
    "ra_ee_cert_info_spdu": Unsecured,
    "aca_ee_cert_response": AcaEeCertResponse,
    "ra_aca_cert_request": RaAcaCertRequest,
    "inner_ec_request": InnerEcRequest,
    "inner_ec_response": InnerEcResponse,
    "shared_at_request": SharedAtRequest,
    "inner_at_request": InnerAtRequest,
    "inner_at_response": InnerAtResponse,
    "authorization_validation_request": AuthorizationValidationRequest,
    "authorization_validation_response": AuthorizationValidationResponse,
}


def build_corpus() -> dict[str, bytes]:
    return {name: builder() for name, builder in BUILDERS.items()}


def dump_hex(data: bytes) -> str:
    lines = [data[i:i + _HEX_LINE_BYTES].hex()
             for i in range(0, len(data), _HEX_LINE_BYTES)]
    return "\n".join(lines) + "\n" if lines else "\n"


def load_hex(text: str) -> bytes:
    return bytes.fromhex("".join(text.split()))


def write_corpus(directory: Path | str = DEFAULT_DIR) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, data in build_corpus().items():
        path = directory / f"{name}.hex"
        path.write_text(dump_hex(data))
        written.append(path)
    return written


def check_corpus(directory: Path | str = DEFAULT_DIR) -> list[str]:
    """Compare freshly built vectors with the stored files; returns the
    names that differ or are missing."""
    directory = Path(directory)
    mismatches = []
    for name, data in build_corpus().items():
        path = directory / f"{name}.hex"
        if not path.exists() or load_hex(path.read_text()) != data:
            mismatches.append(name)
    return mismatches
