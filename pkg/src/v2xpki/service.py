"""Run authorities as long-lived TCP services, plus PKI bootstrapping.

Transport is a plain framed protocol: a u32 big-endian length counting the
bytes that follow (one kind byte plus payload, capped at 1 MiB), then the
kind byte, then the payload. One request frame yields exactly one response
frame with the same kind, or an error frame (kind 0x7F) whose payload is a
UTF-8 reason. Responses within a connection are never reordered. No TLS:
transport security is orthogonal to the protocols under study and would
distort the timing comparison.

pki_init writes a complete hierarchy to disk: codec-encoded certificates
as `<name>.cert` and raw 32-byte scalars as `<name>.key` (mode 0600).
Authorities that receive encrypted traffic also get `<name>_enc.key`.
"""

from __future__ import annotations

import os
import secrets
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from . import ccms, crypto, scms
from .cert import (
    Certificate,
    INTERMEDIATE_VALIDITY_S,
    ROOT_VALIDITY_S,
    TbsCertificate,
    Validity,
    issue,
    self_sign_root,
)
from .codec import RaAcaCertRequest, decode, encode
from .crypto import PrivateKey, PublicKey, RandFn
from .wire import Clock, DecodeError, Reader, Writer, time64_now

ROLES = ("rca", "ica", "eca", "ra", "aca", "ea", "aa")
IEEE_ROLES = ("rca", "ica", "eca", "ra", "aca")
ETSI_ROLES = ("rca", "ea", "aa")

FRAME_LENGTH_BYTES = 4
MAX_FRAME_PAYLOAD = 1 << 20  # payload cap; the length field may reach 1 + this

K_IEEE_ENROLL = 0x01
K_IEEE_AUTH = 0x02
K_IEEE_DOWNLOAD = 0x03
K_IEEE_REGISTER_EC = 0x04
K_IEEE_ACA_CERT = 0x05
K_ETSI_ENROLL = 0x11
K_ETSI_AUTH = 0x12
K_ETSI_VALIDATE = 0x13
K_ETSI_REGISTER = 0x14
K_ERROR = 0x7F


class ServiceError(Exception):
    pass


# --- PKI material -------------------------------------------------------------


@dataclass
class AuthorityMaterial:
    name: str
    private: PrivateKey
    cert: Certificate
    encryption_private: Optional[PrivateKey] = None
    chain: tuple[Certificate, ...] = ()  # leaf first, root last


@dataclass
class PkiMaterial:
    topology: str
    authorities: dict[str, AuthorityMaterial] = field(default_factory=dict)

    def cert(self, name: str) -> Certificate:
        return self.authorities[name].cert

    @property
    def anchor(self) -> Certificate:
        return self.authorities["rca"].cert


def _authority_tbs(name: str, validity: Validity, public: PublicKey,
                   encryption_public: Optional[PublicKey] = None) -> TbsCertificate:
    return TbsCertificate(name.encode(), (), validity, public, encryption_public)


def build_topology(topology: str, *, chain_depth: int = 3, rand: RandFn = secrets.token_bytes,
                   clock: Clock = time64_now, root_validity_s: int = ROOT_VALIDITY_S,
                   intermediate_validity_s: int = INTERMEDIATE_VALIDITY_S) -> PkiMaterial:
    """In-memory hierarchy: deep tree for ieee (root, chain_depth - 2
    intermediates, then ECA / RA / ACA), flat tree for etsi (root directly
    over EA and AA)."""
    if topology not in ("ieee", "etsi"):
        raise ValueError(f"unknown topology {topology!r}")
    if topology == "ieee" and chain_depth < 2:
        raise ValueError("ieee topology needs a chain depth of at least 2")
    now = clock()
    material = PkiMaterial(topology)

    root_keys = crypto.generate_keypair(rand)
    root_cert = self_sign_root(root_keys, b"rca", Validity(now, root_validity_s))
    material.authorities["rca"] = AuthorityMaterial("rca", root_keys[0], root_cert, chain=(root_cert,))

    issuer_name = "rca"
    inter_validity = Validity(now, intermediate_validity_s)

    def add(name: str, issued_by: str, with_encryption: bool = False) -> None:
        issuer = material.authorities[issued_by]
        private, public = crypto.generate_keypair(rand)
        encryption_private = None
        encryption_public = None
        if with_encryption:
            encryption_private, encryption_public = crypto.generate_keypair(rand)
        cert = issue(issuer.private, issuer.cert,
                     _authority_tbs(name, inter_validity, public, encryption_public))
        material.authorities[name] = AuthorityMaterial(
            name, private, cert, encryption_private, (cert,) + issuer.chain)

    if topology == "ieee":
        for i in range(1, chain_depth - 1):
            add(f"ica{i}", issuer_name)
            issuer_name = f"ica{i}"
        add("eca", issuer_name)
        add("ra", issuer_name, with_encryption=True)
        add("aca", issuer_name)
    else:
        add("ea", "rca", with_encryption=True)
        add("aa", "rca", with_encryption=True)
    return material


def pki_init(topology: str, out_dir: Path | str, *, chain_depth: int = 3, force: bool = False,
             rand: RandFn = secrets.token_bytes, clock: Clock = time64_now) -> list[Path]:
    """Generate a hierarchy and persist it; refuses to overwrite without force."""
    out_dir = Path(out_dir)
    material = build_topology(topology, chain_depth=chain_depth, rand=rand, clock=clock)
    out_dir.mkdir(parents=True, exist_ok=True)

    planned: list[tuple[Path, bytes, bool]] = []
    for authority in material.authorities.values():
        planned.append((out_dir / f"{authority.name}.cert", authority.cert.encode(), False))
        planned.append((out_dir / f"{authority.name}.key", authority.private.to_bytes(), True))
        if authority.encryption_private is not None:
            planned.append((out_dir / f"{authority.name}_enc.key",
                            authority.encryption_private.to_bytes(), True))
    if not force:
        existing = [str(path) for path, _, _ in planned if path.exists()]
        if existing:
            raise FileExistsError(f"refusing to overwrite without force: {', '.join(existing)}")
    written = []
    for path, data, is_key in planned:
        path.write_bytes(data)
        if is_key:
            os.chmod(path, 0o600)
        written.append(path)
    return written


def load_private_key(path: Path | str) -> PrivateKey:
    data = Path(path).read_bytes()
    try:
        return PrivateKey.from_bytes(data)
    except crypto.CryptoError as exc:
        raise ServiceError(f"corrupt key file {path}: {exc}") from exc


def load_certificate(path: Path | str) -> Certificate:
    try:
        return Certificate.decode(Path(path).read_bytes())
    except DecodeError as exc:
        raise ServiceError(f"corrupt certificate file {path}: {exc}") from exc


def load_material(keys_dir: Path | str) -> PkiMaterial:
    """Rebuild PkiMaterial from a pki_init output directory; the topology is
    inferred from which role files are present."""
    keys_dir = Path(keys_dir)
    names = {path.stem for path in keys_dir.glob("*.cert")}
    if "eca" in names:
        topology = "ieee"
    elif "ea" in names:
        topology = "etsi"
    else:
        raise ServiceError(f"{keys_dir} does not contain an initialised hierarchy")

    material = PkiMaterial(topology)
    certs = {name: load_certificate(keys_dir / f"{name}.cert") for name in names}
    by_hash = {cert.hashed_id(): name for name, cert in certs.items()}

    def chain_for(name: str) -> tuple[Certificate, ...]:
        chain = [certs[name]]
        while chain[-1].issuer is not None:
            issuer_name = by_hash.get(chain[-1].issuer)
            if issuer_name is None:
                raise ServiceError(f"missing issuer certificate for {name}")
            chain.append(certs[issuer_name])
        return tuple(chain)

    for name in sorted(names):
        enc_path = keys_dir / f"{name}_enc.key"
        material.authorities[name] = AuthorityMaterial(
            name,
            load_private_key(keys_dir / f"{name}.key"),
            certs[name],
            load_private_key(enc_path) if enc_path.exists() else None,
            chain_for(name),
        )
    return material


# --- in-memory authority wiring ------------------------------------------------


def make_ieee_authorities(material: PkiMaterial, *, clock: Clock = time64_now,
                          rand: RandFn = secrets.token_bytes, download_delay_us: int = 0,
                          batch_period_us: Optional[int] = None,
                          aca_channel: Optional[scms.AcaChannel] = None,
                          ) -> tuple[scms.EnrollmentCa, scms.RegistrationAuthority, scms.AuthorizationCa]:
    eca_m = material.authorities["eca"]
    ra_m = material.authorities["ra"]
    aca_m = material.authorities["aca"]
    eca = scms.EnrollmentCa(eca_m.private, eca_m.cert, eca_m.chain, clock=clock)
    aca = scms.AuthorizationCa(aca_m.private, aca_m.cert, clock=clock, rand=rand)
    kwargs = {} if batch_period_us is None else {"batch_period_us": batch_period_us}
    ra = scms.RegistrationAuthority(
        ra_m.private, ra_m.encryption_private, ra_m.cert, eca_m.chain, material.anchor,
        aca_channel if aca_channel is not None else aca,
        clock=clock, download_delay_us=download_delay_us, **kwargs)
    return eca, ra, aca


def make_etsi_authorities(material: PkiMaterial, *, clock: Clock = time64_now,
                          rand: RandFn = secrets.token_bytes,
                          ea_channel: Optional[ccms.EaChannel] = None,
                          ) -> tuple[ccms.EnrolmentAuthority, ccms.AuthorizationAuthority]:
    ea_m = material.authorities["ea"]
    aa_m = material.authorities["aa"]
    ea = ccms.EnrolmentAuthority(ea_m.private, ea_m.encryption_private, ea_m.cert,
                                 clock=clock, rand=rand)
    aa = ccms.AuthorizationAuthority(aa_m.private, aa_m.encryption_private, aa_m.cert,
                                     ea_channel if ea_channel is not None else ea,
                                     clock=clock, rand=rand)
    return ea, aa


# --- frame protocol -------------------------------------------------------------


class _Shutdown(Exception):
    pass


def _recv_exact(sock: socket.socket, count: int, stop: Optional[Callable[[], bool]] = None) -> Optional[bytes]:
    """Read exactly count bytes; None on clean EOF before the first byte.

    A poll callback may abort the wait, but only between frames (nothing
    read yet), never in the middle of one.
    """
    buf = b""
    while len(buf) < count:
        try:
            chunk = sock.recv(count - len(buf))
        except socket.timeout:
            if stop is not None and stop() and not buf:
                raise _Shutdown() from None
            continue
        if not chunk:
            if buf:
                raise ConnectionError("connection closed mid-frame")
            return None
        buf += chunk
    return buf


def write_frame(sock: socket.socket, kind: int, payload: bytes) -> None:
    if len(payload) > MAX_FRAME_PAYLOAD:
        raise ServiceError(f"payload of {len(payload)} exceeds the 1 MiB frame cap")
    sock.sendall(struct.pack(">IB", 1 + len(payload), kind) + payload)


def read_frame(sock: socket.socket, stop: Optional[Callable[[], bool]] = None) -> Optional[tuple[int, bytes]]:
    """Returns (kind, payload), or None on clean EOF.

    An oversized or zero length field raises ServiceError after consuming
    only the 4 length bytes, so the caller can answer with an error frame
    and keep the connection; the peer that lied about the length must not
    send the oversized body.
    """
    header = _recv_exact(sock, FRAME_LENGTH_BYTES, stop)
    if header is None:
        return None
    (length,) = struct.unpack(">I", header)
    if length < 1 or length > 1 + MAX_FRAME_PAYLOAD:
        raise ServiceError(f"frame length {length} outside [1, {1 + MAX_FRAME_PAYLOAD}]")
    body = _recv_exact(sock, length)
    if body is None:
        raise ConnectionError("connection closed mid-frame")
    return body[0], body[1:]


# --- server ---------------------------------------------------------------------


@dataclass
class AuthorityConfig:
    role: str
    listen: tuple[str, int]
    keys_dir: Path
    upstream_ea: Optional[tuple[str, int]] = None
    upstream_aca: Optional[tuple[str, int]] = None
    download_delay_ms: int = 0
    chain_depth: int = 3
    init: bool = False
    force: bool = False

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}; expected one of {ROLES}")
        if self.role == "aa" and self.upstream_ea is None:
            raise ValueError("role aa requires an upstream EA address")
        if self.role == "ra" and self.upstream_aca is None:
            raise ValueError("role ra requires an upstream ACA address")
        self.keys_dir = Path(self.keys_dir)


def _parse_its_registration(payload: bytes) -> tuple[bytes, PublicKey]:
    r = Reader(payload)
    its_id = r.bytes_field("its id")
    key_bytes = r.take(33, "canonical public key")
    r.expect_end()
    try:
        return its_id, PublicKey.decode(key_bytes)
    except crypto.CryptoError as exc:
        raise DecodeError(len(payload) - 33, str(exc)) from exc


def encode_its_registration(its_id: bytes, canonical_key: PublicKey) -> bytes:
    w = Writer()
    w.bytes_field(its_id)
    w.raw(canonical_key.encode())
    return w.getvalue()


class AuthorityServer:
    """One authority behind the frame protocol.

    Connections are handled concurrently; the underlying authority objects
    hold their own locks, so requests are linearizable per authority state.
    Shutdown stops accepting, lets in-flight frames finish, then joins the
    handler threads.
    """

    def __init__(self, config: AuthorityConfig, *, clock: Clock = time64_now,
                 rand: RandFn = secrets.token_bytes):
        self.config = config
        if config.init:
            topology = "etsi" if config.role in ("ea", "aa") else "ieee"
            have_all = all((config.keys_dir / f"{config.role}{suffix}").exists()
                           for suffix in (".cert", ".key"))
            if config.force or not have_all:
                pki_init(topology, config.keys_dir, chain_depth=config.chain_depth,
                         force=config.force, rand=rand, clock=clock)
        material = load_material(config.keys_dir)
        if config.role not in material.authorities:
            raise ServiceError(f"{config.keys_dir} holds no material for role {config.role}")
        self._dispatch = self._build_dispatch(material, clock, rand)
        self._shutting_down = threading.Event()

        server = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                self.request.settimeout(0.25)
                while not server._shutting_down.is_set():
                    try:
                        frame = read_frame(self.request, server._shutting_down.is_set)
                    except _Shutdown:
                        break
                    except ServiceError as exc:
                        write_frame(self.request, K_ERROR, str(exc).encode())
                        continue
                    except (ConnectionError, OSError):
                        break
                    if frame is None:
                        break
                    kind, payload = frame
                    try:
                        handler = server._dispatch.get(kind)
                        if handler is None:
                            raise ServiceError(f"role {server.config.role} does not handle kind 0x{kind:02x}")
                        response = handler(payload)
                        write_frame(self.request, kind, response)
                    except (ServiceError, DecodeError, scms.FlowError,
                            scms.RequestRejected, crypto.CryptoError) as exc:
                        try:
                            write_frame(self.request, K_ERROR, str(exc).encode())
                        except OSError:
                            break
                    except OSError:
                        break

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = False
            block_on_close = True

        self._server = Server(config.listen, Handler)

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address

    def serve_forever(self) -> None:
        self._server.serve_forever(poll_interval=0.1)

    def start_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread

    def shutdown(self) -> None:
        self._shutting_down.set()
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> "AuthorityServer":
        self.start_background()
        return self

    def __exit__(self, *exc) -> None:
        self.shutdown()

    def _build_dispatch(self, material: PkiMaterial, clock: Clock,
                        rand: RandFn) -> dict[int, Callable[[bytes], bytes]]:
        role = self.config.role
        cfg = self.config
        if role == "eca":
            m = material.authorities["eca"]
            eca = scms.EnrollmentCa(m.private, m.cert, m.chain, clock=clock)
            return {K_IEEE_ENROLL: eca.process_enrollment_request}
        if role == "aca":
            m = material.authorities["aca"]
            aca = scms.AuthorizationCa(m.private, m.cert, clock=clock, rand=rand)
            return {K_IEEE_ACA_CERT: lambda payload: aca.request_cert(decode(payload, RaAcaCertRequest))}
        if role == "ra":
            m = material.authorities["ra"]
            eca_chain = material.authorities["eca"].chain
            ra = scms.RegistrationAuthority(
                m.private, m.encryption_private, m.cert, eca_chain, material.anchor,
                RemoteAca(cfg.upstream_aca), clock=clock,
                download_delay_us=cfg.download_delay_ms * 1000)

            def register(payload: bytes) -> bytes:
                ra.register_enrollment_cert(Certificate.decode(payload))
                return b""

            def download(payload: bytes) -> bytes:
                if len(payload) != 8:
                    raise ServiceError("download request payload must be an 8-byte request hash")
                return ra.handle_download(payload)

            return {K_IEEE_AUTH: ra.process_auth_request,
                    K_IEEE_DOWNLOAD: download,
                    K_IEEE_REGISTER_EC: register}
        if role == "ea":
            m = material.authorities["ea"]
            ea = ccms.EnrolmentAuthority(m.private, m.encryption_private, m.cert,
                                         clock=clock, rand=rand)

            def register(payload: bytes) -> bytes:
                its_id, key = _parse_its_registration(payload)
                ea.register(its_id, key)
                return b""

            return {K_ETSI_ENROLL: ea.process_enrolment_request,
                    K_ETSI_VALIDATE: ea.process_validation_request,
                    K_ETSI_REGISTER: register}
        if role == "aa":
            m = material.authorities["aa"]
            aa = ccms.AuthorizationAuthority(m.private, m.encryption_private, m.cert,
                                             RemoteEa(cfg.upstream_ea), clock=clock, rand=rand)
            return {K_ETSI_AUTH: aa.process_authorization_request}
        # rca / ica are offline issuers; they answer nothing
        return {}


# --- clients ---------------------------------------------------------------------


class FrameClient:
    """Blocking request/response client for one authority connection.

    Round trips are serialized under a lock so the client can be shared
    between handler threads (the RA's upstream ACA link, for one)."""

    def __init__(self, address: tuple[str, int], timeout: float = 10.0):
        self.address = address
        self._timeout = timeout
        self._sock: Optional[socket.socket] = None
        self._lock = threading.Lock()

    def _connection(self) -> socket.socket:
        if self._sock is None:
            self._sock = socket.create_connection(self.address, timeout=self._timeout)
        return self._sock

    def request(self, kind: int, payload: bytes) -> bytes:
        with self._lock:
            sock = self._connection()
            write_frame(sock, kind, payload)
            frame = read_frame(sock)
        if frame is None:
            raise ConnectionError("server closed the connection")
        got_kind, data = frame
        if got_kind == K_ERROR:
            raise ServiceError(data.decode(errors="replace"))
        if got_kind != kind:
            raise ServiceError(f"response kind 0x{got_kind:02x} does not match request 0x{kind:02x}")
        return data

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None

    def __enter__(self) -> "FrameClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class RemoteEca:
    def __init__(self, address: tuple[str, int]):
        self._client = FrameClient(address)

    def process_enrollment_request(self, request_bytes: bytes) -> bytes:
        return self._client.request(K_IEEE_ENROLL, request_bytes)


class RemoteRa:
    def __init__(self, address: tuple[str, int]):
        self._client = FrameClient(address)

    def process_auth_request(self, request_bytes: bytes) -> bytes:
        return self._client.request(K_IEEE_AUTH, request_bytes)

    def handle_download(self, request_hash: bytes) -> bytes:
        return self._client.request(K_IEEE_DOWNLOAD, request_hash)

    def register_enrollment_cert(self, ec: Certificate) -> None:
        self._client.request(K_IEEE_REGISTER_EC, ec.encode())


class RemoteAca:
    def __init__(self, address: tuple[str, int]):
        self._client = FrameClient(address)

    def request_cert(self, request: RaAcaCertRequest) -> bytes:
        return self._client.request(K_IEEE_ACA_CERT, encode(request))


class RemoteEa:
    def __init__(self, address: tuple[str, int]):
        self._client = FrameClient(address)

    def process_enrolment_request(self, request_bytes: bytes) -> bytes:
        return self._client.request(K_ETSI_ENROLL, request_bytes)

    def process_validation_request(self, request_bytes: bytes) -> bytes:
        return self._client.request(K_ETSI_VALIDATE, request_bytes)

    def register(self, its_id: bytes, canonical_key: PublicKey) -> None:
        self._client.request(K_ETSI_REGISTER, encode_its_registration(its_id, canonical_key))


class RemoteAa:
    def __init__(self, address: tuple[str, int]):
        self._client = FrameClient(address)

    def process_authorization_request(self, request_bytes: bytes) -> bytes:
        return self._client.request(K_ETSI_AUTH, request_bytes)


def serve(config: AuthorityConfig, *, clock: Clock = time64_now,
          rand: RandFn = secrets.token_bytes) -> None:
    """Run one authority until SIGINT/SIGTERM."""
    import signal

    server = AuthorityServer(config, clock=clock, rand=rand)

    def stop(signum, frame):
        threading.Thread(target=server.shutdown).start()

    signal.signal(signal.SIGINT, stop)
    signal.signal(signal.SIGTERM, stop)
    server.serve_forever()
