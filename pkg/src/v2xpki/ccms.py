"""ETSI-style provisioning flow: ITS station, EA and AA logic.

Every request is encrypted toward the receiving authority and carries a
pre-shared key via ECIES; the authority reuses that key to encrypt its
response. Requests are double signed: an inner proof-of-possession
signature plus an outer signature by the identity the authority already
trusts (the canonical key at enrolment, the fresh authorization key at
authorization). The AA never sees enrolment credentials in the clear; it
forwards the opaque EcSignature to the EA for validation.
"""

from __future__ import annotations

import hashlib
import secrets
import threading
from dataclasses import dataclass
from typing import Optional, Protocol

from . import crypto
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
    AuthorizationValidationRequest,
    AuthorizationValidationResponse,
    CertRecipient,
    EncryptedData,
    ETSI_REQUEST_HASH_BYTES,
    InnerAtRequest,
    InnerAtResponse,
    InnerEcRequest,
    InnerEcResponse,
    PSID_PROVISIONING,
    PskRecipient,
    ResponseCode,
    SharedAtRequest,
    SignedData,
    SignerCertificate,
    SignerDigest,
    SignerSelf,
    TAG_ENCRYPTED,
    TbsData,
    decode,
    encode,
)
from .crypto import PrivateKey, PublicKey, RandFn, ecdsa_sign, ecdsa_verify, hashed_id8
from .scms import DEFAULT_APP_PERMISSIONS, FlowError, _signed_spdu
from .wire import Clock, DecodeError, Reader, time64_now


def etsi_request_hash(request_bytes: bytes) -> bytes:
    """Low-order 16 bytes of SHA-256 over the full encoded request."""
    return hashlib.sha256(request_bytes).digest()[-ETSI_REQUEST_HASH_BYTES:]


class EaChannel(Protocol):
    """How an AA reaches its EA; the EA object itself satisfies this."""

    def process_validation_request(self, request_bytes: bytes) -> bytes: ...


@dataclass
class _PendingRequest:
    psk: bytes
    request_hash: bytes
    authority_cert: Certificate


class _AuthorityBase:
    """Shared decrypt-and-respond plumbing for EA and AA."""

    def __init__(self, private: PrivateKey, encryption_private: PrivateKey, cert: Certificate,
                 *, clock: Clock = time64_now, rand: RandFn = secrets.token_bytes):
        self._private = private
        self._encryption_private = encryption_private
        self.cert = cert
        self._clock = clock
        self._rand = rand
        self._lock = threading.Lock()

    def _decrypt_request(self, env: EncryptedData) -> tuple[bytes, bytes]:
        """Returns (psk, plaintext); raises CryptoError family on failure."""
        own_id = self.cert.hashed_id()
        for recipient in env.recipients:
            if isinstance(recipient, CertRecipient) and recipient.recipient_id == own_id:
                psk = crypto.ecies_decapsulate(self._encryption_private, recipient.encap)
                return psk, crypto.aead_decrypt(psk, env.nonce, env.ciphertext)
        raise crypto.AuthFailure("no recipient entry addressed to this authority")

    def _sign_payload(self, payload: bytes) -> bytes:
        tbs = TbsData(payload, PSID_PROVISIONING, self._clock())
        return _signed_spdu(SignerCertificate(self.cert), tbs, self._private)

    def _respond(self, psk: Optional[bytes], payload: bytes) -> bytes:
        """Encrypt the signed payload under the request's PSK; fall back to a
        plain signed response when no PSK could be recovered."""
        signed = self._sign_payload(payload)
        if psk is None:
            return signed
        nonce = self._rand(12)
        env = EncryptedData(
            (PskRecipient(hashed_id8(psk)),),
            nonce, crypto.aead_encrypt(psk, nonce, signed))
        return encode(env)


class EnrolmentAuthority(_AuthorityBase):
    """EA: checks the canonical signature against its registry, issues
    enrolment credentials, and validates EcSignatures for the AA."""

    def __init__(self, private: PrivateKey, encryption_private: PrivateKey, cert: Certificate,
                 *, clock: Clock = time64_now, rand: RandFn = secrets.token_bytes,
                 max_validity_s: int = ENROLLMENT_VALIDITY_S):
        super().__init__(private, encryption_private, cert, clock=clock, rand=rand)
        self._max_validity_s = max_validity_s
        self._canonical_keys: dict[bytes, PublicKey] = {}
        self._issued: dict[bytes, Certificate] = {}

    def register(self, its_id: bytes, canonical_key: PublicKey) -> None:
        """Out-of-band provisioning step: pre-register a station's canonical key."""
        with self._lock:
            self._canonical_keys[bytes(its_id)] = canonical_key

    def process_enrolment_request(self, request_bytes: bytes) -> bytes:
        """Always returns a well-formed EnrolmentResponse; failures are
        expressed as response codes, never as transport errors."""
        request_hash = etsi_request_hash(request_bytes)
        psk: Optional[bytes] = None

        def respond(code: ResponseCode, credential: Optional[Certificate] = None) -> bytes:
            inner = InnerEcResponse(request_hash, code, credential)
            return self._respond(psk, encode(inner))

        try:
            env = decode(request_bytes, EncryptedData)
        except DecodeError:
            if request_bytes and request_bytes[0] != TAG_ENCRYPTED:
                return respond(ResponseCode.BAD_CONTENT_TYPE)
            return respond(ResponseCode.CANT_PARSE)
        try:
            psk, plaintext = self._decrypt_request(env)
        except crypto.CryptoError:
            return respond(ResponseCode.INVALID_ENCRYPTION_KEY)
        try:
            outer = decode(plaintext, SignedData)
            inner = decode(outer.tbs.payload, SignedData)
            request = decode(inner.tbs.payload, InnerEcRequest)
        except DecodeError:
            return respond(ResponseCode.CANT_PARSE)
        if outer.external or inner.external or not isinstance(outer.signer, SignerSelf) \
                or not isinstance(inner.signer, SignerSelf):
            return respond(ResponseCode.CANT_PARSE)
        with self._lock:
            canonical_key = self._canonical_keys.get(bytes(request.its_id))
        if canonical_key is None:
            return respond(ResponseCode.UNKNOWN_ITS)
        if not ecdsa_verify(canonical_key, outer.tbs.encode(), outer.signature):
            return respond(ResponseCode.INVALID_SIGNATURE)
        if not ecdsa_verify(request.enrolment_public_key, inner.tbs.encode(), inner.signature):
            return respond(ResponseCode.INVALID_SIGNATURE)
        if not request.app_permissions:
            return respond(ResponseCode.DENIED_PERMISSIONS)
        if request.requested_validity.duration > self._max_validity_s \
                or not self.cert.tbs.validity.encloses(request.requested_validity):
            return respond(ResponseCode.DENIED_PERMISSIONS)

        credential = issue(self._private, self.cert, TbsCertificate(
            request.its_id, request.app_permissions, request.requested_validity,
            request.enrolment_public_key))
        with self._lock:
            self._issued[credential.hashed_id()] = credential
        return respond(ResponseCode.OK, credential)

    def process_validation_request(self, request_bytes: bytes) -> bytes:
        """AA-side round trip: decrypt the EcSignature and check it binds the
        SharedAtRequest under a credential this EA issued."""
        request_hash = etsi_request_hash(request_bytes)

        def respond(code: ResponseCode) -> bytes:
            return encode(AuthorizationValidationResponse(request_hash, code))

        try:
            validation = decode(request_bytes, AuthorizationValidationRequest)
            ec_sig_env = decode(validation.ec_signature, EncryptedData)
        except DecodeError:
            return respond(ResponseCode.CANT_PARSE)
        if validation.shared_at_request.ea_id != self.cert.hashed_id():
            return respond(ResponseCode.DENIED_PERMISSIONS)
        try:
            _, plaintext = self._decrypt_request(ec_sig_env)
        except crypto.CryptoError:
            return respond(ResponseCode.INVALID_ENCRYPTION_KEY)
        try:
            spdu = decode(plaintext, SignedData)
        except DecodeError:
            return respond(ResponseCode.CANT_PARSE)
        if not spdu.external or not isinstance(spdu.signer, SignerDigest):
            return respond(ResponseCode.CANT_PARSE)
        with self._lock:
            credential = self._issued.get(spdu.signer.digest)
        if credential is None:
            return respond(ResponseCode.UNKNOWN_ITS)
        if not credential.tbs.validity.contains(self._clock()):
            return respond(ResponseCode.BAD_ITS_STATUS)
        shared_digest = hashlib.sha256(encode(validation.shared_at_request)).digest()
        if spdu.tbs.payload != shared_digest:
            return respond(ResponseCode.INVALID_SIGNATURE)
        if not ecdsa_verify(credential.tbs.verification_key, spdu.tbs.encode(), spdu.signature):
            return respond(ResponseCode.INVALID_SIGNATURE)
        return respond(ResponseCode.OK)


class AuthorizationAuthority(_AuthorityBase):
    """AA: verifies possession of the fresh authorization key, delegates
    enrolment validation to the EA, and issues authorization tickets."""

    def __init__(self, private: PrivateKey, encryption_private: PrivateKey, cert: Certificate,
                 ea: EaChannel, *, clock: Clock = time64_now, rand: RandFn = secrets.token_bytes):
        super().__init__(private, encryption_private, cert, clock=clock, rand=rand)
        self._ea = ea

    def process_authorization_request(self, request_bytes: bytes) -> bytes:
        request_hash = etsi_request_hash(request_bytes)
        psk: Optional[bytes] = None

        def respond(code: ResponseCode, ticket: Optional[Certificate] = None) -> bytes:
            inner = InnerAtResponse(request_hash, code, ticket)
            return self._respond(psk, encode(inner))

        try:
            env = decode(request_bytes, EncryptedData)
        except DecodeError:
            if request_bytes and request_bytes[0] != TAG_ENCRYPTED:
                return respond(ResponseCode.BAD_CONTENT_TYPE)
            return respond(ResponseCode.CANT_PARSE)
        try:
            psk, plaintext = self._decrypt_request(env)
        except crypto.CryptoError:
            return respond(ResponseCode.INVALID_ENCRYPTION_KEY)
        try:
            outer = decode(plaintext, SignedData)
            inner = decode(outer.tbs.payload, InnerAtRequest)
        except DecodeError:
            return respond(ResponseCode.CANT_PARSE)
        if outer.external or not isinstance(outer.signer, SignerSelf):
            return respond(ResponseCode.CANT_PARSE)
        if not ecdsa_verify(inner.authorization_public_key, outer.tbs.encode(), outer.signature):
            return respond(ResponseCode.INVALID_SIGNATURE)

        validation_request = AuthorizationValidationRequest(
            inner.shared_at_request, inner.ec_signature)
        try:
            validation_bytes = self._ea.process_validation_request(encode(validation_request))
            validation = decode(validation_bytes, AuthorizationValidationResponse)
        except (DecodeError, OSError):
            return respond(ResponseCode.INTERNAL_SERVER_ERROR)
        if validation.response_code == ResponseCode.INVALID_SIGNATURE:
            # the EcSignature does not bind this SharedAtRequest
            return respond(ResponseCode.INVALID_SIGNATURE)
        if validation.response_code != ResponseCode.OK:
            # enrolment could not be validated (unknown or stale credential)
            return respond(ResponseCode.DENIED_PERMISSIONS)

        shared = inner.shared_at_request
        if not shared.app_permissions \
                or not self.cert.tbs.validity.encloses(shared.requested_validity):
            return respond(ResponseCode.DENIED_PERMISSIONS)
        ticket = issue(self._private, self.cert, TbsCertificate(
            b"", shared.app_permissions, shared.requested_validity,
            inner.authorization_public_key))
        return respond(ResponseCode.OK, ticket)


class ItsStation:
    """ITS-S client state: canonical identity, enrolment credential, per
    request PSKs and the authorization keypair a ticket will bind."""

    def __init__(self, trust_anchor: Certificate, its_id: bytes,
                 *, clock: Clock = time64_now, rand: RandFn = secrets.token_bytes,
                 app_permissions: tuple[PsidSsp, ...] = DEFAULT_APP_PERMISSIONS):
        if len(its_id) > 32:
            raise ValueError("its id longer than 32 bytes")
        self._anchor = trust_anchor
        self.its_id = bytes(its_id)
        self._clock = clock
        self._rand = rand
        self.app_permissions = app_permissions
        self.enrolment_certificate: Optional[Certificate] = None
        self.authorization_ticket: Optional[Certificate] = None
        self._pending_enrolment: Optional[_PendingRequest] = None
        self._pending_authorization: Optional[_PendingRequest] = None
        self._canonical_private, self.canonical_public = crypto.generate_keypair(rand)
        self.new_enrolment_keys()
        self.new_authorization_keys()

    def new_enrolment_keys(self) -> None:
        self._enrolment_private, self.enrolment_public = crypto.generate_keypair(self._rand)

    def new_authorization_keys(self) -> None:
        self._authorization_private, self.authorization_public = crypto.generate_keypair(self._rand)

    @property
    def authorization_private(self) -> PrivateKey:
        return self._authorization_private

    def _encrypt_toward(self, authority_cert: Certificate, plaintext: bytes) -> tuple[bytes, bytes]:
        """Returns (psk, encoded encrypted envelope)."""
        if authority_cert.tbs.encryption_key is None:
            raise FlowError("no-encryption-key", "authority certificate cannot receive requests")
        psk = self._rand(16)
        nonce = self._rand(12)
        encap = crypto.ecies_encapsulate(authority_cert.tbs.encryption_key, psk, self._rand)
        env = EncryptedData(
            (CertRecipient(authority_cert.hashed_id(), encap),),
            nonce, crypto.aead_encrypt(psk, nonce, plaintext))
        return psk, encode(env)

    # -- enrolment ---------------------------------------------------------

    def build_enrolment_request(self, ea_cert: Certificate,
                                validity: Optional[Validity] = None) -> bytes:
        """Inner enrolment-key signature nested in a canonical-key signature,
        encrypted toward the EA. Exactly two signatures are produced."""
        now = self._clock()
        request = InnerEcRequest(
            self.its_id, self.app_permissions, self.enrolment_public,
            validity or Validity(now, ENROLLMENT_VALIDITY_S))
        inner_tbs = TbsData(encode(request), PSID_PROVISIONING, now)
        inner_bytes = _signed_spdu(SignerSelf(), inner_tbs, self._enrolment_private)
        outer_tbs = TbsData(inner_bytes, PSID_PROVISIONING, now)
        outer_bytes = _signed_spdu(SignerSelf(), outer_tbs, self._canonical_private)
        psk, data = self._encrypt_toward(ea_cert, outer_bytes)
        self._pending_enrolment = _PendingRequest(psk, etsi_request_hash(data), ea_cert)
        return data

    def process_enrolment_response(self, response_bytes: bytes) -> Certificate:
        pending = self._pending_enrolment
        if pending is None:
            raise FlowError("no-pending-request")
        inner = self._open_response(pending, response_bytes, InnerEcResponse)
        if inner.response_code != ResponseCode.OK:
            raise FlowError(f"response-code-{inner.response_code.name.lower().replace('_', '-')}")
        credential = inner.enrolment_credential
        if credential.tbs.verification_key != self.enrolment_public:
            raise FlowError("key-mismatch", "credential binds a different key")
        try:
            verify_chain((credential, pending.authority_cert, self._anchor), self._anchor, self._clock())
        except ChainError as exc:
            raise FlowError(exc.reason, str(exc)) from exc
        self.enrolment_certificate = credential
        return credential

    # -- authorization -------------------------------------------------------

    def build_authorization_request(self, aa_cert: Certificate, ea_cert: Certificate,
                                    validity: Optional[Validity] = None) -> bytes:
        """SharedAtRequest plus an EA-encrypted EcSignature, signed by the
        fresh authorization key and encrypted toward the AA. Exactly two
        signatures are produced."""
        if self.enrolment_certificate is None:
            raise FlowError("missing-ec", "enrol before requesting authorization tickets")
        if ea_cert.tbs.encryption_key is None:
            raise FlowError("no-encryption-key", "EA certificate cannot receive the EcSignature")
        now = self._clock()
        shared = SharedAtRequest(
            ea_cert.hashed_id(), self._rand(16), self.app_permissions,
            validity or Validity(now, AUTHORIZATION_VALIDITY_S))
        shared_digest = hashlib.sha256(encode(shared)).digest()

        ec_sig_tbs = TbsData(shared_digest, PSID_PROVISIONING, now)
        ec_sig = SignedData(
            SignerDigest(self.enrolment_certificate.hashed_id()), ec_sig_tbs,
            ecdsa_sign(self._enrolment_private, ec_sig_tbs.encode()), external=True)
        ec_key = self._rand(16)
        ec_nonce = self._rand(12)
        ec_encap = crypto.ecies_encapsulate(ea_cert.tbs.encryption_key, ec_key, self._rand)
        ec_sig_env = EncryptedData(
            (CertRecipient(ea_cert.hashed_id(), ec_encap),),
            ec_nonce, crypto.aead_encrypt(ec_key, ec_nonce, encode(ec_sig)))

        inner = InnerAtRequest(self.authorization_public, shared, encode(ec_sig_env))
        outer_tbs = TbsData(encode(inner), PSID_PROVISIONING, now)
        outer_bytes = _signed_spdu(SignerSelf(), outer_tbs, self._authorization_private)
        psk, data = self._encrypt_toward(aa_cert, outer_bytes)
        self._pending_authorization = _PendingRequest(psk, etsi_request_hash(data), aa_cert)
        return data

    def process_authorization_response(self, response_bytes: bytes) -> Certificate:
        pending = self._pending_authorization
        if pending is None:
            raise FlowError("no-pending-request")
        inner = self._open_response(pending, response_bytes, InnerAtResponse)
        if inner.response_code != ResponseCode.OK:
            raise FlowError(f"response-code-{inner.response_code.name.lower().replace('_', '-')}")
        ticket = inner.authorization_ticket
        if ticket.tbs.verification_key != self.authorization_public:
            raise FlowError("key-mismatch", "ticket binds a different key")
        try:
            verify_chain((ticket, pending.authority_cert, self._anchor), self._anchor, self._clock())
        except ChainError as exc:
            raise FlowError(exc.reason, str(exc)) from exc
        self.authorization_ticket = ticket
        return ticket

    # -- shared response handling ---------------------------------------------

    def _open_response(self, pending: _PendingRequest, response_bytes: bytes, inner_cls):
        """Decrypt with the stored PSK, verify the authority signature and the
        request-hash echo, and return the decoded inner response."""
        tag = Reader(response_bytes).peek_u8("envelope tag") if response_bytes else None
        if tag != TAG_ENCRYPTED:
            # plain signed fallback the authority uses when it could not
            # recover the PSK; surface its code after checking the signature
            try:
                spdu = decode(response_bytes, SignedData)
            except DecodeError as exc:
                raise FlowError("malformed", str(exc)) from exc
            if not isinstance(spdu.signer, SignerCertificate) \
                    or spdu.signer.certificate != pending.authority_cert \
                    or not ecdsa_verify(pending.authority_cert.tbs.verification_key,
                                        spdu.tbs.encode(), spdu.signature):
                raise FlowError("bad-signature", "plain response not signed by the authority")
            inner = decode(spdu.tbs.payload, inner_cls)
            raise FlowError(f"response-code-{inner.response_code.name.lower().replace('_', '-')}")
        try:
            env = decode(response_bytes, EncryptedData)
        except DecodeError as exc:
            raise FlowError("malformed", str(exc)) from exc
        if len(env.recipients) != 1 or not isinstance(env.recipients[0], PskRecipient) \
                or env.recipients[0].recipient_id != hashed_id8(pending.psk):
            raise FlowError("psk-mismatch", "response is not keyed to this request's PSK")
        try:
            plaintext = crypto.aead_decrypt(pending.psk, env.nonce, env.ciphertext)
        except crypto.CryptoError as exc:
            raise FlowError("psk-mismatch", str(exc)) from exc
        try:
            spdu = decode(plaintext, SignedData)
        except DecodeError as exc:
            raise FlowError("malformed", str(exc)) from exc
        if not isinstance(spdu.signer, SignerCertificate) \
                or spdu.signer.certificate != pending.authority_cert:
            raise FlowError("bad-signature", "response signer is not the contacted authority")
        if not ecdsa_verify(pending.authority_cert.tbs.verification_key,
                            spdu.tbs.encode(), spdu.signature):
            raise FlowError("bad-signature", "response signature")
        try:
            inner = decode(spdu.tbs.payload, inner_cls)
        except DecodeError as exc:
            raise FlowError("malformed", str(exc)) from exc
        if inner.request_hash != pending.request_hash:
            raise FlowError("hash-mismatch", "response echoes a different request hash")
        return inner


# -- orchestration -----------------------------------------------------------


def run_enrolment(its: ItsStation, ea, ea_cert: Certificate) -> Certificate:
    """Full enrolment round trip against anything with the EA interface."""
    request = its.build_enrolment_request(ea_cert)
    return its.process_enrolment_response(ea.process_enrolment_request(request))


def run_authorization(its: ItsStation, aa, aa_cert: Certificate,
                      ea_cert: Certificate) -> Certificate:
    """Full authorization round trip with a fresh authorization keypair."""
    its.new_authorization_keys()
    request = its.build_authorization_request(aa_cert, ea_cert)
    return its.process_authorization_response(aa.process_authorization_request(request))
