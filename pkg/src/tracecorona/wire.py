"""Wire formats of the tracing server.

Record frame (exact layout, big endian):

    16-byte hash || 4-byte ciphertext length || ciphertext || 1-byte tag

Append-only log: one framed record per line of base64.  Epoch
boundaries are interleaved as ``# epoch <n>`` control lines so a log
replay restores feed paging.

Socket protocol: each message is a 4-byte length prefix followed by the
body.  Request bodies start with a 1-byte opcode; responses with a
1-byte status (0 accepted, 1 rejected, 2 malformed).
"""

from __future__ import annotations

import base64
import enum
import json
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass

TOKEN_HASH_BYTES = 16
PROOF_BYTES = 32


class Tag(enum.IntEnum):
    """Provenance tag published with every record."""

    DIRECT = 0
    SECOND_LEVEL = 1
    POSSIBLE_SUPERSPREADER = 2


@dataclass(frozen=True)
class TokenUploadRecord:
    """Published pair: truncated token hash and encrypted timestamp."""

    hash: bytes
    ciphertext: bytes
    tag: Tag = Tag.DIRECT

    def __post_init__(self) -> None:
        if len(self.hash) != TOKEN_HASH_BYTES:
            raise ValueError("record hash must be 16 bytes")
        if not isinstance(self.tag, Tag):
            object.__setattr__(self, "tag", Tag(self.tag))


@dataclass(frozen=True)
class PublishedFeed:
    records: tuple[TokenUploadRecord, ...]
    feed_epoch: int


class WireError(Exception):
    """Malformed frame or message."""


# -- record framing ---------------------------------------------------------


def encode_record(record: TokenUploadRecord) -> bytes:
    return (
        record.hash
        + struct.pack(">I", len(record.ciphertext))
        + record.ciphertext
        + bytes([record.tag])
    )


def decode_record(buf: bytes, offset: int = 0) -> tuple[TokenUploadRecord, int]:
    if len(buf) - offset < TOKEN_HASH_BYTES + 4 + 1:
        raise WireError("record frame truncated")
    h = buf[offset : offset + 16]
    (ct_len,) = struct.unpack_from(">I", buf, offset + 16)
    end = offset + 20 + ct_len
    if len(buf) < end + 1:
        raise WireError("record ciphertext truncated")
    ct = buf[offset + 20 : end]
    try:
        tag = Tag(buf[end])
    except ValueError as exc:
        raise WireError(f"unknown record tag {buf[end]}") from exc
    return TokenUploadRecord(hash=h, ciphertext=ct, tag=tag), end + 1


def encode_records(records: list[TokenUploadRecord]) -> bytes:
    body = b"".join(encode_record(r) for r in records)
    return struct.pack(">I", len(records)) + body


def decode_records(buf: bytes, offset: int = 0) -> tuple[list[TokenUploadRecord], int]:
    if len(buf) - offset < 4:
        raise WireError("record list truncated")
    (count,) = struct.unpack_from(">I", buf, offset)
    offset += 4
    records = []
    for _ in range(count):
        record, offset = decode_record(buf, offset)
        records.append(record)
    return records, offset


# -- append-only log ---------------------------------------------------------


def log_record_line(record: TokenUploadRecord) -> str:
    return base64.b64encode(encode_record(record)).decode("ascii")


def log_epoch_line(epoch: int) -> str:
    return f"# epoch {epoch}"


def read_log(path) -> list[tuple[int, TokenUploadRecord]]:
    """Replay a log file into (epoch, record) pairs."""
    epoch = 0
    out: list[tuple[int, TokenUploadRecord]] = []
    with open(path, "r", encoding="ascii") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line.split()
                if len(parts) == 3 and parts[1] == "epoch":
                    epoch = int(parts[2])
                continue
            record, used = decode_record(base64.b64decode(line))
            if used != len(base64.b64decode(line)):
                raise WireError("trailing bytes in log line")
            out.append((epoch, record))
    return out


# -- socket protocol ----------------------------------------------------------

OP_UPLOAD_INFECTED = 1
OP_UPLOAD_SECOND_LEVEL = 2
OP_UPLOAD_SUPERSPREADER = 3
OP_FETCH_FEED = 4
OP_STATS = 5
# Out-of-band health-authority channel, exposed here so an operator (or
# the simulator) can hand TANs to verified-infected users.
OP_ISSUE_TAN = 6

STATUS_ACCEPTED = 0
STATUS_REJECTED = 1
STATUS_MALFORMED = 2


def encode_upload_infected(tan_value: str, records: list[TokenUploadRecord]) -> bytes:
    tan = tan_value.encode("ascii")
    return bytes([OP_UPLOAD_INFECTED, len(tan)]) + tan + encode_records(records)


def encode_upload_second_level(proof: bytes, records: list[TokenUploadRecord]) -> bytes:
    if len(proof) != PROOF_BYTES:
        raise WireError("possession proof must be 32 bytes")
    return bytes([OP_UPLOAD_SECOND_LEVEL]) + proof + encode_records(records)


def encode_upload_superspreader(
    proofs: list[bytes], records: list[TokenUploadRecord]
) -> bytes:
    if any(len(p) != PROOF_BYTES for p in proofs):
        raise WireError("possession proofs must be 32 bytes")
    return (
        bytes([OP_UPLOAD_SUPERSPREADER, len(proofs)])
        + b"".join(proofs)
        + encode_records(records)
    )


def encode_fetch_feed(since_epoch: int, shuffle_seed: int) -> bytes:
    return bytes([OP_FETCH_FEED]) + struct.pack(">Iq", since_epoch, shuffle_seed)


def _send_message(sock: socket.socket, body: bytes) -> None:
    sock.sendall(struct.pack(">I", len(body)) + body)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    while n:
        chunk = sock.recv(n)
        if not chunk:
            raise WireError("connection closed mid-message")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def _recv_message(sock: socket.socket) -> bytes:
    (length,) = struct.unpack(">I", _recv_exact(sock, 4))
    return _recv_exact(sock, length)


def handle_request(server, body: bytes) -> bytes:
    """Dispatch one request body against a TracingServer instance and
    return the response body."""
    import random

    if not body:
        return bytes([STATUS_MALFORMED]) + b"empty request"
    op = body[0]
    try:
        if op == OP_UPLOAD_INFECTED:
            tan_len = body[1]
            tan = body[2 : 2 + tan_len].decode("ascii")
            records, _ = decode_records(body, 2 + tan_len)
            result = server.upload_infected(tan, records)
        elif op == OP_UPLOAD_SECOND_LEVEL:
            proof = body[1 : 1 + PROOF_BYTES]
            if len(proof) != PROOF_BYTES:
                raise WireError("proof truncated")
            records, _ = decode_records(body, 1 + PROOF_BYTES)
            result = server.upload_second_level(proof, records)
        elif op == OP_UPLOAD_SUPERSPREADER:
            count = body[1]
            proofs = [
                body[2 + i * PROOF_BYTES : 2 + (i + 1) * PROOF_BYTES]
                for i in range(count)
            ]
            if any(len(p) != PROOF_BYTES for p in proofs):
                raise WireError("proofs truncated")
            records, _ = decode_records(body, 2 + count * PROOF_BYTES)
            result = server.upload_superspreader_proof(proofs, records)
        elif op == OP_FETCH_FEED:
            since_epoch, seed = struct.unpack_from(">Iq", body, 1)
            feed = server.fetch_feed(since_epoch, random.Random(seed))
            payload = struct.pack(">I", feed.feed_epoch) + encode_records(
                list(feed.records)
            )
            return bytes([STATUS_ACCEPTED]) + payload
        elif op == OP_STATS:
            stats = server.stats_snapshot()
            return bytes([STATUS_ACCEPTED]) + json.dumps(
                stats, sort_keys=True
            ).encode("ascii")
        elif op == OP_ISSUE_TAN:
            context = body[1:].decode("ascii", "replace")
            tan = server.authority.issue_tan(context, 0)
            return bytes([STATUS_ACCEPTED]) + tan.value.encode("ascii")
        else:
            return bytes([STATUS_MALFORMED]) + f"unknown opcode {op}".encode()
    except (WireError, IndexError, struct.error) as exc:
        return bytes([STATUS_MALFORMED]) + str(exc).encode()
    status = STATUS_ACCEPTED if result.accepted else STATUS_REJECTED
    reason = (result.reason or "").encode("ascii")
    return bytes([status]) + reason


class WireServer:
    """Threaded TCP front end for a TracingServer."""

    def __init__(self, tracing_server, host: str = "127.0.0.1", port: int = 0):
        outer = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self) -> None:
                try:
                    while True:
                        body = _recv_message(self.request)
                        _send_message(
                            self.request, handle_request(outer.tracing_server, body)
                        )
                except (WireError, ConnectionError, OSError):
                    return

        self.tracing_server = tracing_server
        self._tcp = socketserver.ThreadingTCPServer((host, port), Handler)
        self._tcp.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._tcp.server_address

    def start(self) -> None:
        self._thread = threading.Thread(target=self._tcp.serve_forever, daemon=True)
        self._thread.start()

    def serve_forever(self) -> None:
        self._tcp.serve_forever()

    def shutdown(self) -> None:
        self._tcp.shutdown()
        self._tcp.server_close()


class WireClient:
    """Blocking client for the socket protocol."""

    def __init__(self, host: str, port: int):
        self._sock = socket.create_connection((host, port))

    def close(self) -> None:
        self._sock.close()

    def __enter__(self) -> "WireClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _round_trip(self, body: bytes) -> bytes:
        _send_message(self._sock, body)
        return _recv_message(self._sock)

    def upload_infected(self, tan_value: str, records) -> tuple[bool, str]:
        resp = self._round_trip(encode_upload_infected(tan_value, records))
        return resp[0] == STATUS_ACCEPTED, resp[1:].decode("ascii", "replace")

    def upload_second_level(self, proof: bytes, records) -> tuple[bool, str]:
        resp = self._round_trip(encode_upload_second_level(proof, records))
        return resp[0] == STATUS_ACCEPTED, resp[1:].decode("ascii", "replace")

    def upload_superspreader(self, proofs, records) -> tuple[bool, str]:
        resp = self._round_trip(encode_upload_superspreader(proofs, records))
        return resp[0] == STATUS_ACCEPTED, resp[1:].decode("ascii", "replace")

    def fetch_feed(self, since_epoch: int, shuffle_seed: int) -> PublishedFeed:
        resp = self._round_trip(encode_fetch_feed(since_epoch, shuffle_seed))
        if resp[0] != STATUS_ACCEPTED:
            raise WireError(resp[1:].decode("ascii", "replace"))
        (epoch,) = struct.unpack_from(">I", resp, 1)
        records, _ = decode_records(resp, 5)
        return PublishedFeed(records=tuple(records), feed_epoch=epoch)

    def stats(self) -> dict:
        resp = self._round_trip(bytes([OP_STATS]))
        if resp[0] != STATUS_ACCEPTED:
            raise WireError("stats request failed")
        return json.loads(resp[1:].decode("ascii"))

    def issue_tan(self, context: str = "") -> str:
        resp = self._round_trip(bytes([OP_ISSUE_TAN]) + context.encode("ascii"))
        if resp[0] != STATUS_ACCEPTED:
            raise WireError("tan issuance failed")
        return resp[1:].decode("ascii")
