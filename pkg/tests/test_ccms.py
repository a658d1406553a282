import dataclasses
import hashlib
from types import SimpleNamespace

import pytest

from conftest import fixed_clock
from v2xpki import ccms, crypto, service
from v2xpki.cert import Validity, verify_chain
from v2xpki.ccms import FlowError, etsi_request_hash
from v2xpki.codec import (
    AuthorizationValidationRequest,
    AuthorizationValidationResponse,
    EncryptedData,
    InnerAtRequest,
    PSID_PROVISIONING,
    PskRecipient,
    ResponseCode,
    SignedData,
    SignerDigest,
    SignerSelf,
    TbsData,
    decode,
    encode,
)

YEAR_US = 365 * 86400 * 1_000_000


@pytest.fixture
def env(etsi_material):
    rand = crypto.deterministic_rand(444)
    clock = fixed_clock()
    ea, aa = service.make_etsi_authorities(etsi_material, clock=clock, rand=rand)
    its = ccms.ItsStation(etsi_material.anchor, b"station-under-test",
                          clock=clock, rand=rand)
    ea.register(its.its_id, its.canonical_public)
    return SimpleNamespace(m=etsi_material, ea=ea, aa=aa, its=its, rand=rand, clock=clock,
                           ea_cert=etsi_material.cert("ea"), aa_cert=etsi_material.cert("aa"))


def enrol(env):
    return ccms.run_enrolment(env.its, env.ea, env.ea_cert)


def authorize(env):
    enrol(env)
    return ccms.run_authorization(env.its, env.aa, env.aa_cert, env.ea_cert)


class TestEnrolment:
    def test_double_signed_structure(self, env):
        request = env.its.build_enrolment_request(env.ea_cert)
        outer_env = decode(request, EncryptedData)
        assert outer_env.recipients[0].recipient_id == env.ea_cert.hashed_id()
        psk = env.its._pending_enrolment.psk
        plaintext = crypto.aead_decrypt(psk, outer_env.nonce, outer_env.ciphertext)
        outer = decode(plaintext, SignedData)
        inner = decode(outer.tbs.payload, SignedData)
        assert isinstance(outer.signer, SignerSelf) and isinstance(inner.signer, SignerSelf)
        assert crypto.ecdsa_verify(env.its.canonical_public, outer.tbs.encode(), outer.signature)
        from v2xpki.codec import InnerEcRequest

        request_body = decode(inner.tbs.payload, InnerEcRequest)
        assert crypto.ecdsa_verify(request_body.enrolment_public_key,
                                   inner.tbs.encode(), inner.signature)

    def test_exactly_two_signature_operations(self, env):
        before = crypto.sign_call_count()
        env.its.build_enrolment_request(env.ea_cert)
        assert crypto.sign_call_count() - before == 2

    def test_round_trip_issues_credential(self, env):
        credential = enrol(env)
        assert credential.tbs.verification_key == env.its.enrolment_public
        verify_chain((credential, env.ea_cert, env.m.anchor), env.m.anchor, env.clock())

    def test_psk_stored_matches_encapsulated_key(self, env):
        request = env.its.build_enrolment_request(env.ea_cert)
        outer_env = decode(request, EncryptedData)
        ea_private = env.m.authorities["ea"].encryption_private
        recovered = crypto.ecies_decapsulate(ea_private, outer_env.recipients[0].encap)
        assert recovered == env.its._pending_enrolment.psk

    def test_response_keyed_to_request_psk(self, env):
        request = env.its.build_enrolment_request(env.ea_cert)
        response = env.ea.process_enrolment_request(request)
        envelope = decode(response, EncryptedData)
        (recipient,) = envelope.recipients
        assert isinstance(recipient, PskRecipient)
        assert recipient.recipient_id == crypto.hashed_id8(env.its._pending_enrolment.psk)

    def test_response_under_other_psk_rejected(self, env):
        request = env.its.build_enrolment_request(env.ea_cert)
        response = env.ea.process_enrolment_request(request)
        env.its._pending_enrolment.psk = bytes(16)
        with pytest.raises(FlowError) as excinfo:
            env.its.process_enrolment_response(response)
        assert excinfo.value.reason == "psk-mismatch"

    def test_unregistered_station_gets_unknownits(self, env):
        stranger = ccms.ItsStation(env.m.anchor, b"stranger", clock=env.clock, rand=env.rand)
        request = stranger.build_enrolment_request(env.ea_cert)
        response = env.ea.process_enrolment_request(request)
        with pytest.raises(FlowError) as excinfo:
            stranger.process_enrolment_response(response)
        assert excinfo.value.reason == "response-code-unknown-its"
        assert stranger.enrolment_certificate is None

    def test_broken_inner_pop_gets_invalidsignature(self, env):
        # inner signature made with a key that does not match the embedded one
        from v2xpki.codec import CertRecipient, InnerEcRequest

        its = env.its
        now = env.clock()
        wrong_private, _ = crypto.generate_keypair(env.rand)
        body = InnerEcRequest(its.its_id, its.app_permissions, its.enrolment_public,
                              Validity(now, 86400))
        inner_tbs = TbsData(encode(body), PSID_PROVISIONING, now)
        inner = SignedData(SignerSelf(), inner_tbs,
                           crypto.ecdsa_sign(wrong_private, inner_tbs.encode()))
        outer_tbs = TbsData(encode(inner), PSID_PROVISIONING, now)
        outer = SignedData(SignerSelf(), outer_tbs,
                           crypto.ecdsa_sign(its._canonical_private, outer_tbs.encode()))
        psk, request = its._encrypt_toward(env.ea_cert, encode(outer))
        its._pending_enrolment = ccms._PendingRequest(psk, etsi_request_hash(request), env.ea_cert)
        response = env.ea.process_enrolment_request(request)
        with pytest.raises(FlowError) as excinfo:
            its.process_enrolment_response(response)
        assert excinfo.value.reason == "response-code-invalid-signature"

    def test_request_hash_recomputation_mismatch(self, env):
        request = env.its.build_enrolment_request(env.ea_cert)
        response = env.ea.process_enrolment_request(request)
        env.its._pending_enrolment.request_hash = bytes(16)
        with pytest.raises(FlowError) as excinfo:
            env.its.process_enrolment_response(response)
        assert excinfo.value.reason == "hash-mismatch"

    def test_request_hash_is_low_sha256_bytes(self, env):
        request = env.its.build_enrolment_request(env.ea_cert)
        assert env.its._pending_enrolment.request_hash == hashlib.sha256(request).digest()[-16:]


class TestAuthorization:
    def test_exactly_two_signature_operations(self, env):
        enrol(env)
        before = crypto.sign_call_count()
        env.its.build_authorization_request(env.aa_cert, env.ea_cert)
        assert crypto.sign_call_count() - before == 2

    def test_round_trip_issues_ticket(self, env):
        ticket = authorize(env)
        assert ticket.tbs.verification_key == env.its.authorization_public
        verify_chain((ticket, env.aa_cert, env.m.anchor), env.m.anchor, env.clock())
        sig = crypto.ecdsa_sign(env.its.authorization_private, b"cam message")
        assert crypto.ecdsa_verify(ticket.tbs.verification_key, b"cam message", sig)

    def test_aa_cannot_decrypt_ec_signature(self, env):
        enrol(env)
        request = env.its.build_authorization_request(env.aa_cert, env.ea_cert)
        outer_env = decode(request, EncryptedData)
        aa_enc_private = env.m.authorities["aa"].encryption_private
        psk = crypto.ecies_decapsulate(aa_enc_private, outer_env.recipients[0].encap)
        outer = decode(crypto.aead_decrypt(psk, outer_env.nonce, outer_env.ciphertext), SignedData)
        inner = decode(outer.tbs.payload, InnerAtRequest)
        ec_sig_env = decode(inner.ec_signature, EncryptedData)
        # the EcSignature is keyed to the EA; the AA's own keys must fail
        assert ec_sig_env.recipients[0].recipient_id == env.ea_cert.hashed_id()
        with pytest.raises(crypto.AuthFailure):
            crypto.ecies_decapsulate(aa_enc_private, ec_sig_env.recipients[0].encap)
        ea_keys = [key for key in vars(env.aa).values()
                   if isinstance(key, crypto.PrivateKey)]
        assert env.m.authorities["ea"].encryption_private not in ea_keys

    def test_validation_round_trip_ok(self, env):
        enrol(env)
        request = env.its.build_authorization_request(env.aa_cert, env.ea_cert)
        outer_env = decode(request, EncryptedData)
        psk = crypto.ecies_decapsulate(
            env.m.authorities["aa"].encryption_private, outer_env.recipients[0].encap)
        outer = decode(crypto.aead_decrypt(psk, outer_env.nonce, outer_env.ciphertext), SignedData)
        inner = decode(outer.tbs.payload, InnerAtRequest)
        validation = encode(AuthorizationValidationRequest(
            inner.shared_at_request, inner.ec_signature))
        response = decode(env.ea.process_validation_request(validation),
                          AuthorizationValidationResponse)
        assert response.response_code == ResponseCode.OK
        assert response.request_hash == hashlib.sha256(validation).digest()[-16:]

    def test_swapped_shared_at_request_detected(self, env):
        # signature is valid, but over a different SharedAtRequest
        enrol(env)
        request = env.its.build_authorization_request(env.aa_cert, env.ea_cert)
        outer_env = decode(request, EncryptedData)
        psk = crypto.ecies_decapsulate(
            env.m.authorities["aa"].encryption_private, outer_env.recipients[0].encap)
        outer = decode(crypto.aead_decrypt(psk, outer_env.nonce, outer_env.ciphertext), SignedData)
        inner = decode(outer.tbs.payload, InnerAtRequest)
        swapped = dataclasses.replace(inner.shared_at_request, key_tag=bytes(16))
        validation = encode(AuthorizationValidationRequest(swapped, inner.ec_signature))
        response = decode(env.ea.process_validation_request(validation),
                          AuthorizationValidationResponse)
        assert response.response_code == ResponseCode.INVALID_SIGNATURE

    def test_unknown_ec_digest_gets_unknownits(self, env):
        enrol(env)
        request = env.its.build_authorization_request(env.aa_cert, env.ea_cert)
        outer_env = decode(request, EncryptedData)
        psk = crypto.ecies_decapsulate(
            env.m.authorities["aa"].encryption_private, outer_env.recipients[0].encap)
        outer = decode(crypto.aead_decrypt(psk, outer_env.nonce, outer_env.ciphertext), SignedData)
        inner = decode(outer.tbs.payload, InnerAtRequest)

        # rebuild the EcSignature under a credential the EA never issued
        foreign = ccms.ItsStation(env.m.anchor, b"foreign", clock=env.clock, rand=env.rand)
        shared = inner.shared_at_request
        digest = hashlib.sha256(encode(shared)).digest()
        tbs = TbsData(digest, PSID_PROVISIONING, env.clock())
        forged = SignedData(SignerDigest(b"\xde\xad" * 4), tbs,
                            crypto.ecdsa_sign(foreign._enrolment_private, tbs.encode()),
                            external=True)
        key = env.rand(16)
        nonce = env.rand(12)
        encap = crypto.ecies_encapsulate(env.ea_cert.tbs.encryption_key, key, env.rand)
        from v2xpki.codec import CertRecipient

        forged_env = EncryptedData((CertRecipient(env.ea_cert.hashed_id(), encap),),
                                   nonce, crypto.aead_encrypt(key, nonce, encode(forged)))
        validation = encode(AuthorizationValidationRequest(shared, encode(forged_env)))
        response = decode(env.ea.process_validation_request(validation),
                          AuthorizationValidationResponse)
        assert response.response_code == ResponseCode.UNKNOWN_ITS

    def test_ea_rejection_propagates_as_deniedpermissions(self, env):
        # break the station's enrolment state: the EA has never issued its EC
        env.its.new_enrolment_keys()
        foreign_material = service.build_topology(
            "etsi", rand=crypto.deterministic_rand(888), clock=env.clock)
        foreign_ea = ccms.EnrolmentAuthority(
            foreign_material.authorities["ea"].private,
            foreign_material.authorities["ea"].encryption_private,
            foreign_material.cert("ea"), clock=env.clock, rand=env.rand)
        foreign_ea.register(env.its.its_id, env.its.canonical_public)
        env.its._anchor = foreign_material.anchor
        ccms.run_enrolment(env.its, foreign_ea, foreign_material.cert("ea"))
        env.its._anchor = env.m.anchor

        env.its.new_authorization_keys()
        request = env.its.build_authorization_request(env.aa_cert, env.ea_cert)
        with pytest.raises(FlowError) as excinfo:
            env.its.process_authorization_response(env.aa.process_authorization_request(request))
        assert excinfo.value.reason == "response-code-denied-permissions"
        assert env.its.authorization_ticket is None

    def test_ticket_bound_to_other_key_rejected(self, env):
        enrol(env)
        request = env.its.build_authorization_request(env.aa_cert, env.ea_cert)
        response = env.aa.process_authorization_request(request)
        env.its.new_authorization_keys()  # the ticket now binds the old key
        with pytest.raises(FlowError) as excinfo:
            env.its.process_authorization_response(response)
        assert excinfo.value.reason == "key-mismatch"

    def test_missing_ec_blocks_request(self, env):
        with pytest.raises(FlowError) as excinfo:
            env.its.build_authorization_request(env.aa_cert, env.ea_cert)
        assert excinfo.value.reason == "missing-ec"

    def test_tampered_shared_at_request_inside_request(self, env):
        enrol(env)
        request = env.its.build_authorization_request(env.aa_cert, env.ea_cert)
        aa_private = env.m.authorities["aa"].encryption_private
        outer_env = decode(request, EncryptedData)
        psk = crypto.ecies_decapsulate(aa_private, outer_env.recipients[0].encap)
        outer = decode(crypto.aead_decrypt(psk, outer_env.nonce, outer_env.ciphertext), SignedData)
        inner = decode(outer.tbs.payload, InnerAtRequest)
        tampered_inner = dataclasses.replace(
            inner, shared_at_request=dataclasses.replace(
                inner.shared_at_request, key_tag=bytes(16)))
        # re-sign the outer layer so only the EcSignature binding breaks
        tbs = dataclasses.replace(outer.tbs, payload=encode(tampered_inner))
        resigned = SignedData(SignerSelf(), tbs,
                              crypto.ecdsa_sign(env.its.authorization_private, tbs.encode()))
        nonce = env.rand(12)
        new_psk = env.rand(16)
        encap = crypto.ecies_encapsulate(env.aa_cert.tbs.encryption_key, new_psk, env.rand)
        from v2xpki.codec import CertRecipient

        rebuilt = encode(EncryptedData(
            (CertRecipient(env.aa_cert.hashed_id(), encap),),
            nonce, crypto.aead_encrypt(new_psk, nonce, encode(resigned))))
        env.its._pending_authorization = ccms._PendingRequest(
            new_psk, etsi_request_hash(rebuilt), env.aa_cert)
        with pytest.raises(FlowError) as excinfo:
            env.its.process_authorization_response(
                env.aa.process_authorization_request(rebuilt))
        assert excinfo.value.reason == "response-code-invalid-signature"


class TestResponseRobustness:
    def test_every_failure_still_yields_wellformed_response(self, env):
        for payload in (b"", b"\x01garbage", encode(EncryptedData(
                (PskRecipient(b"\x00" * 8),), bytes(12), b"\x00" * 20))):
            response = env.ea.process_enrolment_request(payload)
            assert isinstance(response, bytes) and response
            response = env.aa.process_authorization_request(payload)
            assert isinstance(response, bytes) and response

    def test_wrong_envelope_type_is_badcontenttype(self, env):
        its = env.its
        now = env.clock()
        tbs = TbsData(b"not encrypted", PSID_PROVISIONING, now)
        signed_only = encode(SignedData(
            SignerSelf(), tbs, crypto.ecdsa_sign(its._canonical_private, tbs.encode())))
        response = env.ea.process_enrolment_request(signed_only)
        spdu = decode(response, SignedData)
        from v2xpki.codec import InnerEcResponse

        inner = decode(spdu.tbs.payload, InnerEcResponse)
        assert inner.response_code == ResponseCode.BAD_CONTENT_TYPE

    def test_undecryptable_request_gets_plain_signed_response(self, env):
        stranger_material = service.build_topology(
            "etsi", rand=crypto.deterministic_rand(999), clock=env.clock)
        its = ccms.ItsStation(env.m.anchor, b"misdirected", clock=env.clock, rand=env.rand)
        # encrypted toward the wrong EA: this EA cannot recover the PSK
        request = its.build_enrolment_request(stranger_material.cert("ea"))
        response = env.ea.process_enrolment_request(request)
        spdu = decode(response, SignedData)
        assert crypto.ecdsa_verify(env.ea_cert.tbs.verification_key,
                                   spdu.tbs.encode(), spdu.signature)
        from v2xpki.codec import InnerEcResponse

        inner = decode(spdu.tbs.payload, InnerEcResponse)
        assert inner.response_code == ResponseCode.INVALID_ENCRYPTION_KEY
        its._pending_enrolment.authority_cert = env.ea_cert
        with pytest.raises(FlowError) as excinfo:
            its.process_enrolment_response(response)
        assert excinfo.value.reason == "response-code-invalid-encryption-key"
