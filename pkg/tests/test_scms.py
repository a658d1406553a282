import dataclasses
import io
import zipfile
from types import SimpleNamespace

import pytest

from conftest import FIXED_TIME, fixed_clock
from v2xpki import crypto, scms, service
from v2xpki.cert import Validity
from v2xpki.codec import (
    AckResult,
    EncryptedData,
    PSID_PROVISIONING,
    RaEeCertInfo,
    SignedData,
    SignerDigest,
    SignerSelf,
    TAG_UNSECURED,
    TbsData,
    Unsecured,
    decode,
    encode,
)
from v2xpki.crypto import PrivateKey
from v2xpki.scms import FlowError, RequestRejected
from v2xpki.wire import WEEK_MICROS

YEAR_US = 365 * 86400 * 1_000_000


@pytest.fixture
def env(ieee_material):
    rand = crypto.deterministic_rand(555)
    clock = fixed_clock()
    eca, ra, aca = service.make_ieee_authorities(ieee_material, clock=clock, rand=rand)
    ee = scms.EndEntity(ieee_material.anchor, clock=clock, rand=rand)
    return SimpleNamespace(m=ieee_material, eca=eca, ra=ra, aca=aca, ee=ee,
                           rand=rand, clock=clock, ra_cert=ieee_material.cert("ra"))


def enroll(env):
    ec = scms.run_enrollment(env.ee, env.eca)
    env.ra.register_enrollment_cert(ec)
    return ec


class TestEnrollment:
    def test_request_is_self_signed_with_pop(self, env):
        request = env.ee.build_enrollment_request()
        spdu = decode(request, SignedData)
        assert isinstance(spdu.signer, SignerSelf)
        from v2xpki.codec import EeEcaCertRequest

        inner = decode(spdu.tbs.payload, EeEcaCertRequest)
        assert crypto.ecdsa_verify(inner.verification_key, spdu.tbs.encode(), spdu.signature)

    def test_exactly_one_signature_operation(self, env):
        before = crypto.sign_call_count()
        env.ee.build_enrollment_request()
        assert crypto.sign_call_count() - before == 1

    def test_full_round_trip_issues_chain_valid_ec(self, env):
        ec = enroll(env)
        from v2xpki.cert import verify_chain

        verify_chain((ec,) + env.m.authorities["eca"].chain, env.m.anchor, env.clock())
        assert ec.tbs.verification_key == env.ee.enrollment_public_key

    def test_bit_flip_rejected_by_eca(self, env):
        request = bytearray(env.ee.build_enrollment_request())
        for index in (10, len(request) // 2, len(request) - 3):
            mutated = bytearray(request)
            mutated[index] ^= 0x40
            with pytest.raises(RequestRejected):
                env.eca.process_enrollment_request(bytes(mutated))

    def test_broken_pop_rejected(self, env):
        # inner key does not match the signing key
        from v2xpki.codec import EeEcaCertRequest

        other_private, other_public = crypto.generate_keypair(env.rand)
        inner = EeEcaCertRequest((env.ee.app_permissions[0],), other_public,
                                 Validity(env.clock(), 86400))
        tbs = TbsData(encode(inner), PSID_PROVISIONING, env.clock())
        spdu = SignedData(SignerSelf(), tbs,
                          crypto.ecdsa_sign(env.ee._enroll_private, tbs.encode()))
        with pytest.raises(RequestRejected) as excinfo:
            env.eca.process_enrollment_request(encode(spdu))
        assert excinfo.value.reason == "bad-signature"

    def test_response_for_other_request_rejected(self, env):
        response = env.eca.process_enrollment_request(env.ee.build_enrollment_request())
        other = scms.EndEntity(env.m.anchor, clock=env.clock, rand=env.rand)
        other.build_enrollment_request()
        with pytest.raises(FlowError) as excinfo:
            other.process_enrollment_response(response)
        assert excinfo.value.reason == "request-hash-mismatch"

    def test_forged_intermediate_rejected(self, env):
        request = env.ee.build_enrollment_request()
        response = env.eca.process_enrollment_request(request)
        spdu = decode(response, SignedData)
        from v2xpki.codec import EcaEeCertResponse

        payload = decode(spdu.tbs.payload, EcaEeCertResponse)
        forged_material = service.build_topology(
            "ieee", rand=crypto.deterministic_rand(666), clock=env.clock)
        forged_chain = (payload.eca_cert_chain[0],
                        forged_material.cert("ica1"),
                        payload.eca_cert_chain[2])
        forged_payload = dataclasses.replace(payload, eca_cert_chain=forged_chain)
        forged_tbs = dataclasses.replace(spdu.tbs, payload=encode(forged_payload))
        forged = dataclasses.replace(spdu, tbs=forged_tbs)
        with pytest.raises(FlowError) as excinfo:
            env.ee.process_enrollment_response(encode(forged))
        assert excinfo.value.reason in ("broken-link", "bad-signature")

    def test_excessive_validity_rejected(self, env):
        request = env.ee.build_enrollment_request(
            validity=Validity(env.clock(), 20 * 365 * 86400))
        with pytest.raises(RequestRejected) as excinfo:
            env.eca.process_enrollment_request(request)
        assert excinfo.value.reason == "validity"


class TestAuthorizationRequest:
    def test_exactly_one_signature_operation(self, env):
        enroll(env)
        before = crypto.sign_call_count()
        env.ee.build_auth_cert_request(env.ra_cert, 3)
        assert crypto.sign_call_count() - before == 1

    def test_ra_decrypts_and_acks_ok(self, env):
        enroll(env)
        request = env.ee.build_auth_cert_request(env.ra_cert, 3)
        ack = env.ee.process_cert_ack(env.ra.process_auth_request(request))
        assert ack.result == AckResult.OK
        # download delay is zero in tests, so the advertised time is "now"
        assert ack.download_time == env.clock()
        assert env.ee.last_download_time == ack.download_time

    def test_recipient_is_ra_cert_hash(self, env):
        enroll(env)
        request = env.ee.build_auth_cert_request(env.ra_cert, 1)
        env_data = decode(request, EncryptedData)
        assert env_data.recipients[0].recipient_id == env.ra_cert.hashed_id()

    def test_wrong_ra_key_cannot_decrypt(self, env):
        enroll(env)
        request = env.ee.build_auth_cert_request(env.ra_cert, 1)
        env_data = decode(request, EncryptedData)
        wrong_private, _ = crypto.generate_keypair(env.rand)
        with pytest.raises(crypto.AuthFailure):
            crypto.ecies_decapsulate(wrong_private, env_data.recipients[0].encap)

    def test_inner_signer_is_ec_digest(self, env):
        ec = enroll(env)
        request = env.ee.build_auth_cert_request(env.ra_cert, 1)
        env_data = decode(request, EncryptedData)
        data_key = crypto.ecies_decapsulate(
            env.m.authorities["ra"].encryption_private, env_data.recipients[0].encap)
        inner = decode(crypto.aead_decrypt(data_key, env_data.nonce, env_data.ciphertext),
                       SignedData)
        assert inner.signer == SignerDigest(ec.hashed_id())

    def test_unknown_ec_gets_unknown_signer_ack(self, env):
        scms.run_enrollment(env.ee, env.eca)  # not registered at the RA
        request = env.ee.build_auth_cert_request(env.ra_cert, 1)
        from v2xpki.codec import RaEeCertAck

        ack = decode(env.ra.process_auth_request(request), RaEeCertAck)
        assert ack.result == AckResult.UNKNOWN_SIGNER

    def test_expired_ec_rejected(self, env, ieee_material):
        enroll(env)
        late_clock = fixed_clock(FIXED_TIME + 4 * YEAR_US)
        late_ra = scms.RegistrationAuthority(
            ieee_material.authorities["ra"].private,
            ieee_material.authorities["ra"].encryption_private,
            ieee_material.cert("ra"),
            ieee_material.authorities["eca"].chain,
            ieee_material.anchor,
            env.aca,
            clock=late_clock)
        late_ra.register_enrollment_cert(env.ee.enrollment_certificate)
        request = env.ee.build_auth_cert_request(env.ra_cert, 1)
        from v2xpki.codec import RaEeCertAck

        ack = decode(late_ra.process_auth_request(request), RaEeCertAck)
        assert ack.result == AckResult.EXPIRED

    def test_replay_rejected_as_duplicate(self, env):
        enroll(env)
        request = env.ee.build_auth_cert_request(env.ra_cert, 1)
        first = env.ee.process_cert_ack(env.ra.process_auth_request(request))
        assert first.result == AckResult.OK
        from v2xpki.codec import RaEeCertAck

        replay = decode(env.ra.process_auth_request(request), RaEeCertAck)
        assert replay.result == AckResult.DUPLICATE

    def test_malformed_request_still_acked(self, env):
        from v2xpki.codec import RaEeCertAck

        ack = decode(env.ra.process_auth_request(b"garbage bytes"), RaEeCertAck)
        assert ack.result == AckResult.MALFORMED


class TestBatch:
    def run_flow(self, env, count=5):
        enroll(env)
        request = env.ee.build_auth_cert_request(env.ra_cert, count)
        ack = env.ee.process_cert_ack(env.ra.process_auth_request(request))
        assert ack.result == AckResult.OK
        return env.ra.handle_download(env.ee.auth_request_hash)

    def test_archive_layout(self, env):
        archive_bytes = self.run_flow(env, 5)
        with zipfile.ZipFile(io.BytesIO(archive_bytes)) as archive:
            names = archive.namelist()
            assert names == ["info.spdu"] + [f"aca_{i:04d}.spdu" for i in range(5)]
            assert all(info.compress_type == zipfile.ZIP_STORED
                       for info in archive.infolist())

    def test_info_entry_is_the_only_unsigned_message(self, env):
        archive_bytes = self.run_flow(env, 2)
        with zipfile.ZipFile(io.BytesIO(archive_bytes)) as archive:
            info_entry = archive.read("info.spdu")
            assert info_entry[0] == TAG_UNSECURED
            info = decode(decode(info_entry, Unsecured).payload, RaEeCertInfo)
            assert info.next_di_time > info.generation_time
            assert all(archive.read(f"aca_{i:04d}.spdu")[0] != TAG_UNSECURED
                       for i in range(2))

    def test_download_yields_working_butterfly_keys(self, env):
        archive_bytes = self.run_flow(env, 5)
        result = env.ee.download_and_unpack(archive_bytes)
        assert len(result.items) == 5 and not result.failures
        for _, private, at in result.items:
            assert private.public_key() == at.tbs.verification_key
            sig = crypto.ecdsa_sign(private, b"road message")
            assert crypto.ecdsa_verify(at.tbs.verification_key, b"road message", sig)

    def test_at_keys_pairwise_distinct(self, env):
        archive_bytes = self.run_flow(env, 5)
        result = env.ee.download_and_unpack(archive_bytes)
        keys = [at.tbs.verification_key.encode() for _, _, at in result.items]
        caterpillar = env.ee._caterpillar.caterpillar_public.encode()
        assert len(set(keys)) == 5
        assert caterpillar not in keys

    def test_forced_zero_contribution_keeps_cocoon_key(self, env, monkeypatch):
        monkeypatch.setattr(env.aca, "_contribution", lambda: 0)
        archive_bytes = self.run_flow(env, 1)
        result = env.ee.download_and_unpack(archive_bytes)
        (_, private, at), = result.items
        cocoon_private, cocoon_public = crypto.cocoon_derive(
            env.ee._caterpillar, result.current_i + 0)
        assert at.tbs.verification_key == cocoon_public
        assert private == cocoon_private

    def test_each_entry_decryptable_only_with_its_cocoon_key(self, env):
        archive_bytes = self.run_flow(env, 3)
        result = env.ee.download_and_unpack(archive_bytes)
        with zipfile.ZipFile(io.BytesIO(archive_bytes)) as archive:
            entry = decode(archive.read("aca_0001.spdu"), EncryptedData)
        wrong_private, _ = crypto.cocoon_derive(env.ee._caterpillar, result.current_i + 2)
        with pytest.raises(crypto.AuthFailure):
            crypto.ecies_decapsulate(wrong_private, entry.recipients[0].encap)

    def test_tampered_entry_fails_alone(self, env):
        archive_bytes = self.run_flow(env, 3)
        with zipfile.ZipFile(io.BytesIO(archive_bytes)) as archive:
            entries = {name: bytearray(archive.read(name)) for name in archive.namelist()}
        entries["aca_0001.spdu"][-1] ^= 0x01
        rebuilt = scms.build_archive(sorted((k, bytes(v)) for k, v in entries.items()))
        result = env.ee.download_and_unpack(rebuilt)
        assert [index for index, _, _ in result.items] == [0, 2]
        assert set(result.failures) == {1}

    def test_empty_batch_records_next_download(self, env):
        enroll(env)
        request = env.ee.build_auth_cert_request(env.ra_cert, 1)
        env.ee.process_cert_ack(env.ra.process_auth_request(request))
        current_i = env.clock() // WEEK_MICROS
        info = RaEeCertInfo(env.ee.auth_request_hash, env.clock(), current_i,
                            (current_i + 1) * WEEK_MICROS)
        archive_bytes = scms.build_archive(
            [("info.spdu", encode(Unsecured(encode(info))))])
        result = env.ee.download_and_unpack(archive_bytes)
        assert result.items == [] and result.failures == {}
        assert env.ee.next_di_time == (current_i + 1) * WEEK_MICROS

    def test_archive_deterministic_for_identical_state(self, ieee_material):
        def run():
            rand = crypto.deterministic_rand(777)
            clock = fixed_clock()
            eca, ra, aca = service.make_ieee_authorities(ieee_material, clock=clock, rand=rand)
            ee = scms.EndEntity(ieee_material.anchor, clock=clock, rand=rand)
            ra.register_enrollment_cert(scms.run_enrollment(ee, eca))
            request = ee.build_auth_cert_request(ieee_material.cert("ra"), 3)
            ee.process_cert_ack(ra.process_auth_request(request))
            return ra.handle_download(ee.auth_request_hash)

        assert run() == run()

    def test_unknown_request_hash_rejected(self, env):
        with pytest.raises(FlowError) as excinfo:
            env.ra.handle_download(b"\x00" * 8)
        assert excinfo.value.reason == "unknown-request"


class TestUnlinkability:
    def collect_private_keys(self, obj, seen=None):
        seen = set() if seen is None else seen
        if id(obj) in seen:
            return []
        seen.add(id(obj))
        found = []
        if isinstance(obj, PrivateKey):
            return [obj]
        if isinstance(obj, dict):
            children = list(obj.values())
        elif isinstance(obj, (list, tuple, set)):
            children = list(obj)
        elif dataclasses.is_dataclass(obj):
            children = [getattr(obj, f.name) for f in dataclasses.fields(obj)]
        elif hasattr(obj, "__dict__"):
            children = list(vars(obj).values())
        else:
            return []
        for child in children:
            found += self.collect_private_keys(child, seen)
        return found

    def test_ra_state_holds_no_ee_private_keys(self, env):
        enroll(env)
        request = env.ee.build_auth_cert_request(env.ra_cert, 3)
        env.ra.process_auth_request(request)
        env.ra.handle_download(env.ee.auth_request_hash)
        ra_keys = {key.scalar for key in self.collect_private_keys(env.ra)}
        own = {env.m.authorities["ra"].private.scalar,
               env.m.authorities["ra"].encryption_private.scalar,
               env.m.authorities["aca"].private.scalar}  # via the in-process ACA channel
        assert ra_keys <= own
        # in particular the caterpillar, cocoon and butterfly scalars are absent
        caterpillar = env.ee._caterpillar
        assert caterpillar.caterpillar_private.scalar not in ra_keys
        for j in range(3):
            cocoon_private, _ = crypto.cocoon_derive(caterpillar, j)
            assert cocoon_private.scalar not in ra_keys

    def test_aca_request_carries_cocoon_not_caterpillar(self, env):
        enroll(env)
        captured = []
        original = env.aca.request_cert

        def spy(request):
            captured.append(request)
            return original(request)

        env.aca.request_cert = spy
        request = env.ee.build_auth_cert_request(env.ra_cert, 3)
        env.ra.process_auth_request(request)
        env.ra.handle_download(env.ee.auth_request_hash)
        caterpillar_public = env.ee._caterpillar.caterpillar_public
        assert len(captured) == 3
        assert all(req.cocoon_public != caterpillar_public for req in captured)
        assert all(not hasattr(req, "caterpillar_public") for req in captured)


def test_missing_ec_blocks_auth_request(env):
    with pytest.raises(FlowError) as excinfo:
        env.ee.build_auth_cert_request(env.ra_cert, 1)
    assert excinfo.value.reason == "missing-ec"


def test_cert_count_floor_enforced(env):
    enroll(env)
    with pytest.raises(ValueError):
        env.ee.build_auth_cert_request(env.ra_cert, 0)
