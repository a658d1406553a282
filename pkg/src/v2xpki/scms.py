"""IEEE-style provisioning flow: end entity, ECA, RA and ACA logic.

Enrollment is a single self-signed request answered with the enrollment
certificate plus the full authority chain. Authorization uses butterfly
expansion: the end entity sends caterpillar material once, the RA expands
it into per-index cocoon public keys (never seeing a private key), the
ACA adds a random contribution per certificate, and the end entity
downloads a zip archive of responses it alone can finish into butterfly
private keys.
"""

from __future__ import annotations

import io
import secrets
import threading
import zipfile
from dataclasses import dataclass, field
from typing import Optional, Protocol

from . import crypto, curve
from .cert import (
    AUTHORIZATION_VALIDITY_S,
    Certificate,
    ChainError,
    ENROLLMENT_VALIDITY_S,
    PsidSsp,
    TbsCertificate,
    Validity,
    issue,
    verify_chain,
)
from .codec import (
    AcaEeCertResponse,
    AckResult,
    ButterflyParams,
    CertRecipient,
    EcaEeCertResponse,
    EeEcaCertRequest,
    EeRaCertRequest,
    EncryptedData,
    PSID_PROVISIONING,
    RaAcaCertRequest,
    RaEeCertAck,
    RaEeCertInfo,
    SignedData,
    SignerCertificate,
    SignerDigest,
    SignerSelf,
    TbsData,
    Unsecured,
    decode,
    encode,
)
from .crypto import (
    ButterflyKeyMaterial,
    PrivateKey,
    PublicKey,
    RandFn,
    ecdsa_sign,
    ecdsa_verify,
    hashed_id8,
)
from .wire import Clock, DecodeError, WEEK_MICROS, time64_now

DEFAULT_APP_PERMISSIONS = (PsidSsp(0x20),)

INFO_ENTRY_NAME = "info.spdu"
ACA_ENTRY_FORMAT = "aca_{:04d}.spdu"


class FlowError(Exception):
    """Client-side processing failure; `reason` is a stable token."""

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


class RequestRejected(Exception):
    """Authority-side rejection of a request."""

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


class AcaChannel(Protocol):
    """How an RA reaches its ACA, in process or across a framed socket."""

    def request_cert(self, request: RaAcaCertRequest) -> bytes: ...


def _signed_spdu(signer, tbs: TbsData, private: PrivateKey) -> bytes:
    return encode(SignedData(signer, tbs, ecdsa_sign(private, tbs.encode())))


class EnrollmentCa:
    """ECA: verifies proof of possession and issues enrollment certificates."""

    def __init__(self, private: PrivateKey, cert: Certificate, chain: tuple[Certificate, ...],
                 *, clock: Clock = time64_now, max_validity_s: int = ENROLLMENT_VALIDITY_S):
        if chain[0] != cert:
            raise ValueError("chain must start at the ECA certificate")
        self._private = private
        self.cert = cert
        self.chain = chain
        self._clock = clock
        self._max_validity_s = max_validity_s

    def process_enrollment_request(self, request_bytes: bytes) -> bytes:
        try:
            spdu = decode(request_bytes, SignedData)
        except DecodeError as exc:
            raise RequestRejected("malformed", str(exc)) from exc
        if spdu.external or not isinstance(spdu.signer, SignerSelf):
            raise RequestRejected("malformed", "enrollment requests are plain self-signed data")
        try:
            request = decode(spdu.tbs.payload, EeEcaCertRequest)
        except DecodeError as exc:
            raise RequestRejected("malformed", str(exc)) from exc
        if not ecdsa_verify(request.verification_key, spdu.tbs.encode(), spdu.signature):
            raise RequestRejected("bad-signature", "proof of possession failed")
        if not request.app_permissions:
            raise RequestRejected("denied", "no application permissions requested")
        if request.requested_validity.duration > self._max_validity_s:
            raise RequestRejected("validity", "requested duration exceeds policy")
        if not self.cert.tbs.validity.encloses(request.requested_validity):
            raise RequestRejected("validity", "requested window exceeds the issuer certificate")

        ec = issue(self._private, self.cert, TbsCertificate(
            b"", request.app_permissions, request.requested_validity, request.verification_key))
        response = EcaEeCertResponse(hashed_id8(request_bytes), self.chain, ec)
        tbs = TbsData(encode(response), PSID_PROVISIONING, self._clock())
        return _signed_spdu(SignerCertificate(self.cert), tbs, self._private)


@dataclass
class _PendingJob:
    request: EeRaCertRequest
    current_i: int = 0
    responses: Optional[list[bytes]] = None
    archive: Optional[bytes] = None


class RegistrationAuthority:
    """RA: validates authorization requests, drives butterfly expansion at the
    ACA, and packages downloadable batches. Never handles an EE private key."""

    def __init__(self, private: PrivateKey, encryption_private: PrivateKey, cert: Certificate,
                 eca_chain: tuple[Certificate, ...], trust_anchor: Certificate, aca: AcaChannel,
                 *, clock: Clock = time64_now,
                 download_delay_us: int = 0, batch_period_us: int = WEEK_MICROS,
                 at_validity_s: int = AUTHORIZATION_VALIDITY_S):
        self._private = private
        self._encryption_private = encryption_private
        self.cert = cert
        self._eca_chain = eca_chain
        self._anchor = trust_anchor
        self._aca = aca
        self._clock = clock
        self._download_delay_us = download_delay_us
        self._batch_period_us = batch_period_us
        self._at_validity_s = at_validity_s
        self._known_ecs: dict[bytes, Certificate] = {}
        self._seen_hashes: set[bytes] = set()
        self._jobs: dict[bytes, _PendingJob] = {}
        self._lock = threading.Lock()
        self._expand_lock = threading.Lock()  # one expansion at a time per RA

    def register_enrollment_cert(self, ec: Certificate) -> None:
        """Make an EC resolvable by digest; stands in for the backend directory
        the deployed system would share between ECA and RA."""
        with self._lock:
            self._known_ecs[ec.hashed_id()] = ec

    def _decrypt(self, env) -> bytes:
        own_id = self.cert.hashed_id()
        for recipient in env.recipients:
            if isinstance(recipient, CertRecipient) and recipient.recipient_id == own_id:
                data_key = crypto.ecies_decapsulate(self._encryption_private, recipient.encap)
                return crypto.aead_decrypt(data_key, env.nonce, env.ciphertext)
        raise crypto.AuthFailure("no recipient entry addressed to this RA")

    def process_auth_request(self, request_bytes: bytes) -> bytes:
        """Returns an encoded RaEeCertAck whatever happens to the request."""
        request_hash = hashed_id8(request_bytes)
        now = self._clock()

        def ack(result: AckResult, download_time: int = 0) -> bytes:
            return encode(RaEeCertAck(request_hash, result, download_time))

        with self._lock:
            if request_hash in self._seen_hashes:
                return ack(AckResult.DUPLICATE)
        try:
            env = decode(request_bytes, EncryptedData)
            inner_bytes = self._decrypt(env)
            spdu = decode(inner_bytes, SignedData)
        except (DecodeError, crypto.CryptoError):
            return ack(AckResult.MALFORMED)
        if spdu.external or not isinstance(spdu.signer, SignerDigest):
            return ack(AckResult.MALFORMED)
        with self._lock:
            ec = self._known_ecs.get(spdu.signer.digest)
        if ec is None:
            return ack(AckResult.UNKNOWN_SIGNER)
        try:
            verify_chain((ec,) + self._eca_chain, self._anchor, now)
        except ChainError as exc:
            return ack(AckResult.EXPIRED if exc.reason == "expired" else AckResult.BAD_SIGNATURE)
        if not ecdsa_verify(ec.tbs.verification_key, spdu.tbs.encode(), spdu.signature):
            return ack(AckResult.BAD_SIGNATURE)
        try:
            request = decode(spdu.tbs.payload, EeRaCertRequest)
        except DecodeError:
            return ack(AckResult.MALFORMED)
        if not request.app_permissions or not set(p.psid for p in request.app_permissions) <= \
                set(p.psid for p in ec.tbs.app_permissions):
            return ack(AckResult.DENIED)

        with self._lock:
            self._seen_hashes.add(request_hash)
            self._jobs[request_hash] = _PendingJob(request)
        return ack(AckResult.OK, now + self._download_delay_us)

    def expand_and_collect(self, request_hash: bytes) -> None:
        """Derive cocoon public keys and gather one ACA response per index."""
        with self._lock:
            job = self._jobs.get(request_hash)
        if job is None:
            raise FlowError("unknown-request", request_hash.hex())
        with self._expand_lock:
            if job.responses is not None:
                return
            current_i = self._clock() // self._batch_period_us
            params = job.request.butterfly_params
            responses = []
            for j in range(job.request.cert_count):
                cocoon_public = crypto.cocoon_public_derive(
                    params.caterpillar_public, params.expansion_key, current_i + j)
                aca_request = RaAcaCertRequest(
                    cocoon_public, job.request.app_permissions,
                    Validity(job.request.requested_start, self._at_validity_s))
                responses.append(self._aca.request_cert(aca_request))
            with self._lock:
                job.current_i = current_i
                job.responses = responses

    def build_batch(self, request_hash: bytes) -> bytes:
        """Deterministic zip: info.spdu plus one stored entry per response."""
        with self._lock:
            job = self._jobs.get(request_hash)
        if job is None:
            raise FlowError("unknown-request", request_hash.hex())
        if job.responses is None:
            raise FlowError("not-collected", "expand_and_collect has not run")
        if job.archive is not None:
            return job.archive
        info = RaEeCertInfo(
            request_hash, self._clock(), job.current_i,
            (job.current_i + 1) * self._batch_period_us)
        entries = [(INFO_ENTRY_NAME, encode(Unsecured(encode(info))))]
        entries += [(ACA_ENTRY_FORMAT.format(j), data) for j, data in enumerate(job.responses)]
        archive = build_archive(entries)
        with self._lock:
            job.archive = archive
        return archive

    def handle_download(self, request_hash: bytes) -> bytes:
        """Pull-based download: the EE presents its request hash."""
        self.expand_and_collect(request_hash)
        return self.build_batch(request_hash)


class AuthorizationCa:
    """ACA: adds a random scalar per cocoon key and issues the matching
    authorization certificate, encrypted so only the cocoon holder reads it."""

    def __init__(self, private: PrivateKey, cert: Certificate,
                 *, clock: Clock = time64_now, rand: RandFn = secrets.token_bytes):
        self._private = private
        self.cert = cert
        self._clock = clock
        self._rand = rand
        self._lock = threading.Lock()

    def _contribution(self) -> int:
        # random additive scalar; non-zero so every butterfly key moves
        while True:
            candidate = int.from_bytes(self._rand(32), "big")
            if 1 <= candidate < crypto.N:
                return candidate

    def request_cert(self, request: RaAcaCertRequest) -> bytes:
        with self._lock:
            if not self.cert.tbs.validity.encloses(request.requested_validity):
                raise RequestRejected("validity", "requested window exceeds the ACA certificate")
            c = self._contribution()
            at_point = curve.point_add(request.cocoon_public.point(), curve.base_mult(c))
            if at_point is None:
                raise RequestRejected("degenerate-key")
            at = issue(self._private, self.cert, TbsCertificate(
                b"", request.app_permissions, request.requested_validity,
                PublicKey(at_point[0], at_point[1])))
            now = self._clock()
            response = AcaEeCertResponse(now, c.to_bytes(32, "big"), at)
            tbs = TbsData(encode(response), PSID_PROVISIONING, now)
            signed_bytes = _signed_spdu(SignerCertificate(self.cert), tbs, self._private)

            data_key = self._rand(16)
            nonce = self._rand(12)
            encap = crypto.ecies_encapsulate(request.cocoon_public, data_key, self._rand)
            env = EncryptedData(
                (CertRecipient(hashed_id8(request.cocoon_public.encode()), encap),),
                nonce, crypto.aead_encrypt(data_key, nonce, signed_bytes))
            return encode(env)


@dataclass
class DownloadResult:
    """Per-index outcome of unpacking a certificate batch."""

    items: list[tuple[int, PrivateKey, Certificate]] = field(default_factory=list)
    failures: dict[int, str] = field(default_factory=dict)
    current_i: int = 0
    next_di_time: int = 0


class EndEntity:
    """EE client state: enrollment keys and certificate, caterpillar
    material, and the bookkeeping needed to finish a batch download."""

    def __init__(self, trust_anchor: Certificate, *, clock: Clock = time64_now,
                 rand: RandFn = secrets.token_bytes,
                 app_permissions: tuple[PsidSsp, ...] = DEFAULT_APP_PERMISSIONS):
        self._anchor = trust_anchor
        self._clock = clock
        self._rand = rand
        self.app_permissions = app_permissions
        self.enrollment_certificate: Optional[Certificate] = None
        self._authority_chain: tuple[Certificate, ...] = ()
        self._caterpillar: Optional[ButterflyKeyMaterial] = None
        self._enroll_request_hash: Optional[bytes] = None
        self.auth_request_hash: Optional[bytes] = None
        self.last_download_time: Optional[int] = None
        self.next_di_time: Optional[int] = None
        self.last_auth_request_plaintext_len: Optional[int] = None
        self._cert_count = 0
        self.new_enrollment_keys()

    def new_enrollment_keys(self) -> None:
        self._enroll_private, self._enroll_public = crypto.generate_keypair(self._rand)

    @property
    def enrollment_public_key(self) -> PublicKey:
        return self._enroll_public

    # -- enrollment ------------------------------------------------------

    def build_enrollment_request(self, validity: Optional[Validity] = None) -> bytes:
        """Self-signed request carrying the key it asks to certify.

        Exactly one signature is produced."""
        now = self._clock()
        request = EeEcaCertRequest(
            self.app_permissions, self._enroll_public,
            validity or Validity(now, ENROLLMENT_VALIDITY_S))
        tbs = TbsData(encode(request), PSID_PROVISIONING, now)
        data = _signed_spdu(SignerSelf(), tbs, self._enroll_private)
        self._enroll_request_hash = hashed_id8(data)
        return data

    def process_enrollment_response(self, response_bytes: bytes) -> Certificate:
        try:
            spdu = decode(response_bytes, SignedData)
        except DecodeError as exc:
            raise FlowError("malformed", str(exc)) from exc
        if not isinstance(spdu.signer, SignerCertificate):
            raise FlowError("malformed", "expected a certificate signer")
        try:
            response = decode(spdu.tbs.payload, EcaEeCertResponse)
        except DecodeError as exc:
            raise FlowError("malformed", str(exc)) from exc
        if response.request_hash != self._enroll_request_hash:
            raise FlowError("request-hash-mismatch")
        now = self._clock()
        chain = response.eca_cert_chain
        try:
            verify_chain(chain, self._anchor, now)
        except ChainError as exc:
            raise FlowError(exc.reason, str(exc)) from exc
        if spdu.signer.certificate != chain[0]:
            raise FlowError("signer-mismatch", "response signer is not the chain leaf")
        if not ecdsa_verify(chain[0].tbs.verification_key, spdu.tbs.encode(), spdu.signature):
            raise FlowError("bad-signature", "response signature")
        ec = response.enrollment_certificate
        try:
            verify_chain((ec,) + chain, self._anchor, now)
        except ChainError as exc:
            raise FlowError(exc.reason, str(exc)) from exc
        if ec.tbs.verification_key != self._enroll_public:
            raise FlowError("key-mismatch", "issued certificate binds a different key")
        self.enrollment_certificate = ec
        self._authority_chain = chain
        return ec

    # -- authorization ---------------------------------------------------

    def build_auth_cert_request(self, ra_cert: Certificate, cert_count: int,
                                requested_start: Optional[int] = None) -> bytes:
        """Signed-then-encrypted request carrying fresh caterpillar material.

        Exactly one signature is produced; the data key is ECIES-wrapped
        toward the RA certificate."""
        if self.enrollment_certificate is None:
            raise FlowError("missing-ec", "enroll before requesting authorization certificates")
        if ra_cert.tbs.encryption_key is None:
            raise FlowError("no-encryption-key", "RA certificate cannot receive encrypted requests")
        caterpillar_private, caterpillar_public = crypto.generate_keypair(self._rand)
        expansion_key = self._rand(16)
        self._caterpillar = ButterflyKeyMaterial(caterpillar_private, caterpillar_public, expansion_key)
        now = self._clock()
        request = EeRaCertRequest(
            self.app_permissions,
            ButterflyParams(caterpillar_public, expansion_key),
            cert_count,
            requested_start if requested_start is not None else now)
        tbs = TbsData(encode(request), PSID_PROVISIONING, now)
        inner_bytes = _signed_spdu(
            SignerDigest(self.enrollment_certificate.hashed_id()), tbs, self._enroll_private)
        self.last_auth_request_plaintext_len = len(inner_bytes)

        data_key = self._rand(16)
        nonce = self._rand(12)
        encap = crypto.ecies_encapsulate(ra_cert.tbs.encryption_key, data_key, self._rand)
        env = EncryptedData(
            (CertRecipient(ra_cert.hashed_id(), encap),),
            nonce, crypto.aead_encrypt(data_key, nonce, inner_bytes))
        data = encode(env)
        self.auth_request_hash = hashed_id8(data)
        self._cert_count = cert_count
        return data

    def process_cert_ack(self, ack_bytes: bytes) -> RaEeCertAck:
        try:
            ack = decode(ack_bytes, RaEeCertAck)
        except DecodeError as exc:
            raise FlowError("malformed", str(exc)) from exc
        if ack.request_hash != self.auth_request_hash:
            raise FlowError("request-hash-mismatch")
        if ack.result == AckResult.OK:
            self.last_download_time = ack.download_time
        return ack

    def process_cert_info(self, info_bytes: bytes) -> RaEeCertInfo:
        try:
            envelope = decode(info_bytes, Unsecured)
            info = decode(envelope.payload, RaEeCertInfo)
        except DecodeError as exc:
            raise FlowError("malformed", str(exc)) from exc
        if info.request_hash != self.auth_request_hash:
            raise FlowError("request-hash-mismatch")
        self.next_di_time = info.next_di_time
        return info

    def process_aca_response(self, entry_index: int, current_i: int,
                             entry_bytes: bytes) -> tuple[PrivateKey, Certificate]:
        """Decrypt one batch entry with its cocoon key and finish the
        butterfly private key; checks it against the issued certificate."""
        if self._caterpillar is None:
            raise FlowError("missing-caterpillar")
        cocoon_private, cocoon_public = crypto.cocoon_derive(
            self._caterpillar, current_i + entry_index)
        try:
            env = decode(entry_bytes, EncryptedData)
        except DecodeError as exc:
            raise FlowError("malformed", str(exc)) from exc
        own_id = hashed_id8(cocoon_public.encode())
        encap = None
        for recipient in env.recipients:
            if isinstance(recipient, CertRecipient) and recipient.recipient_id == own_id:
                encap = recipient.encap
        if encap is None:
            raise FlowError("decrypt", "no recipient entry for this cocoon key")
        try:
            data_key = crypto.ecies_decapsulate(cocoon_private, encap)
            plaintext = crypto.aead_decrypt(data_key, env.nonce, env.ciphertext)
        except crypto.CryptoError as exc:
            raise FlowError("decrypt", str(exc)) from exc
        try:
            spdu = decode(plaintext, SignedData)
        except DecodeError as exc:
            raise FlowError("malformed", str(exc)) from exc
        if not isinstance(spdu.signer, SignerCertificate):
            raise FlowError("malformed", "expected a certificate signer")
        now = self._clock()
        aca_cert = spdu.signer.certificate
        intermediates = self._authority_chain[1:]
        try:
            verify_chain((aca_cert,) + intermediates, self._anchor, now)
        except ChainError as exc:
            raise FlowError(exc.reason, f"issuer certificate: {exc}") from exc
        if not ecdsa_verify(aca_cert.tbs.verification_key, spdu.tbs.encode(), spdu.signature):
            raise FlowError("bad-signature", "batch entry signature")
        try:
            response = decode(spdu.tbs.payload, AcaEeCertResponse)
        except DecodeError as exc:
            raise FlowError("malformed", str(exc)) from exc
        at = response.authorization_certificate
        butterfly_private = crypto.butterfly_finalize(cocoon_private, response.private_key_info)
        if butterfly_private.public_key() != at.tbs.verification_key:
            raise FlowError("key-mismatch", "butterfly key does not match the issued certificate")
        try:
            verify_chain((at, aca_cert) + intermediates, self._anchor, now)
        except ChainError as exc:
            raise FlowError(exc.reason, f"authorization certificate: {exc}") from exc
        return butterfly_private, at

    def download_and_unpack(self, archive_bytes: bytes) -> DownloadResult:
        """Open a batch archive; failures are reported per index so one bad
        entry cannot poison the rest."""
        try:
            archive = zipfile.ZipFile(io.BytesIO(archive_bytes))
            names = archive.namelist()
        except zipfile.BadZipFile as exc:
            raise FlowError("malformed-archive", str(exc)) from exc
        if INFO_ENTRY_NAME not in names:
            raise FlowError("malformed-archive", f"missing {INFO_ENTRY_NAME}")
        info = self.process_cert_info(archive.read(INFO_ENTRY_NAME))
        result = DownloadResult(current_i=info.current_i, next_di_time=info.next_di_time)
        entry_names = sorted(name for name in names if name != INFO_ENTRY_NAME)
        for index, name in enumerate(entry_names):
            if name != ACA_ENTRY_FORMAT.format(index):
                result.failures[index] = "bad-entry-name"
                continue
            try:
                private, at = self.process_aca_response(index, info.current_i, archive.read(name))
            except FlowError as exc:
                result.failures[index] = exc.reason
                continue
            result.items.append((index, private, at))
        return result


def build_archive(entries: list[tuple[str, bytes]]) -> bytes:
    """Deterministic zip: stored entries, fixed metadata, caller-fixed order."""
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as archive:
        for name, data in entries:
            member = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
            member.create_system = 3
            member.external_attr = 0o600 << 16
            archive.writestr(member, data)
    return buf.getvalue()


# -- orchestration -------------------------------------------------------


def run_enrollment(ee: EndEntity, eca) -> Certificate:
    """Full enrollment round trip against anything with the ECA interface."""
    request = ee.build_enrollment_request()
    response = eca.process_enrollment_request(request)
    return ee.process_enrollment_response(response)


def run_authorization(ee: EndEntity, ra, ra_cert: Certificate, cert_count: int) -> DownloadResult:
    """Full authorization round trip: request, ack, download, unpack."""
    request = ee.build_auth_cert_request(ra_cert, cert_count)
    ack = ee.process_cert_ack(ra.process_auth_request(request))
    if ack.result != AckResult.OK:
        raise FlowError(f"ack-{ack.result.name.lower().replace('_', '-')}")
    archive = ra.handle_download(ee.auth_request_hash)
    return ee.download_and_unpack(archive)
