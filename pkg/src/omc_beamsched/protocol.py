"""Line-oriented CSV protocol between the treatment client and the beam service.

Request::

    BEAMS,<slot_hint>,<count>
    id,remaining_ms,xlo,xhi,ylo,yhi,zlo,zhi,started,running     (3D)
    id,remaining_ms,threshold[,started,running]                 (1D)

Response::

    RESULTS,<slot_index>,<status>          status: OK, GAP or ERROR
    id,px,py,pz,combined_p,completed,deliverable                (OK only, one per beam)

Probabilities of axes a 1D session does not have are left empty, as are
all probabilities of a beam rejected for malformed bounds.
"""

from __future__ import annotations

import logging
import socket
import socketserver
from dataclasses import dataclass
from typing import Protocol

from .beams import BeamSpec
from .formats import fmt_float, fmt_time
from .service import STATUS_GAP, STATUS_OK, BeamService, SlotResponse

log = logging.getLogger(__name__)

STATUS_ERROR = "ERROR"
ENCODING = "utf-8"


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class BeamRequest:
    slot_hint: int
    beams: tuple[BeamSpec, ...]


@dataclass(frozen=True)
class ResultRow:
    beam_id: str
    probs: tuple[float | None, float | None, float | None]
    combined_p: float | None
    completed: bool
    deliverable: bool


@dataclass(frozen=True)
class WireResponse:
    slot_index: int
    status: str
    rows: tuple[ResultRow, ...] = ()

    @property
    def deliverable_ids(self) -> set[str]:
        return {r.beam_id for r in self.rows if r.deliverable}


def _flag(text: str, where: str) -> bool:
    if text not in ("0", "1"):
        raise ProtocolError(f"{where}: expected 0 or 1, got {text!r}")
    return text == "1"


def _num(text: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ProtocolError(f"{where}: malformed number {text!r}") from None


def _int(text: str, where: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ProtocolError(f"{where}: malformed integer {text!r}") from None


def encode_request(req: BeamRequest) -> str:
    lines = [f"BEAMS,{req.slot_hint},{len(req.beams)}"]
    for b in req.beams:
        head = [b.id, fmt_time(b.remaining_time)]
        flags = ["1" if b.started else "0", "1" if b.running else "0"]
        if b.dims == 1:
            lo, hi = b.bounds[0]
            if lo != -hi:
                raise ProtocolError(f"beam {b.id}: 1D requests carry symmetric thresholds only")
            tail = [fmt_float(hi)] + (flags if b.started or b.running else [])
        else:
            tail = [fmt_float(v) for pair in b.bounds for v in pair] + flags
        lines.append(",".join(head + tail))
    return "\n".join(lines) + "\n"


def parse_request_header(line: str) -> tuple[int, int]:
    parts = line.rstrip("\n").split(",")
    if len(parts) != 3 or parts[0] != "BEAMS":
        raise ProtocolError(f"line 1: expected 'BEAMS,<slot_hint>,<count>', got {line.rstrip()!r}")
    slot, count = _int(parts[1], "line 1, column 2"), _int(parts[2], "line 1, column 3")
    if slot < 0 or count < 0:
        raise ProtocolError("line 1: slot hint and count must be non-negative")
    return slot, count


def parse_beam_line(line: str, lineno: int) -> BeamSpec:
    f = line.rstrip("\n").split(",")
    where = f"line {lineno}"
    if len(f) not in (3, 5, 10):
        raise ProtocolError(f"{where}: expected 3, 5 or 10 columns, got {len(f)}")
    if not f[0]:
        raise ProtocolError(f"{where}, column 1: empty beam id")
    remaining = _num(f[1], f"{where}, column 2")
    if len(f) == 10:
        nums = [_num(v, f"{where}, column {i + 3}") for i, v in enumerate(f[2:8])]
        flags = f[8:10]
        return BeamSpec(f[0], remaining, tuple(zip(nums[0::2], nums[1::2])),
                        _flag(flags[0], f"{where}, column 9"), _flag(flags[1], f"{where}, column 10"))
    threshold = _num(f[2], f"{where}, column 3")
    started = running = False
    if len(f) == 5:
        started, running = _flag(f[3], f"{where}, column 4"), _flag(f[4], f"{where}, column 5")
    return BeamSpec.symmetric(f[0], remaining, threshold, started=started, running=running)


def decode_request(text: str) -> BeamRequest:
    lines = text.splitlines()
    if not lines:
        raise ProtocolError("empty request")
    slot, count = parse_request_header(lines[0])
    body = lines[1:]
    if len(body) != count:
        raise ProtocolError(f"header announces {count} beams, got {len(body)}")
    beams = tuple(parse_beam_line(line, i) for i, line in enumerate(body, start=2))
    _check_beams(beams)
    return BeamRequest(slot, beams)


def _check_beams(beams) -> None:
    if len({b.id for b in beams}) != len(beams):
        raise ProtocolError("duplicate beam ids in request")
    if len({b.dims for b in beams}) > 1:
        raise ProtocolError("request mixes 1D and 3D beams")


def rows_from_response(resp: SlotResponse) -> tuple[ResultRow, ...]:
    rows = []
    for r in resp.results:
        if r.error is not None:
            rows.append(ResultRow(r.beam_id, (None, None, None), None, False, False))
            continue
        probs = [e.p_hat if e is not None else 0.0 for e in r.estimates]
        probs += [None] * (3 - len(probs))
        rows.append(ResultRow(r.beam_id, tuple(probs), r.combined_p, r.completed, r.deliverable))
    return tuple(rows)


def to_wire(resp: SlotResponse) -> WireResponse:
    return WireResponse(resp.slot_index, resp.status, rows_from_response(resp))


def encode_response(resp: WireResponse) -> str:
    lines = [f"RESULTS,{resp.slot_index},{resp.status}"]
    for r in resp.rows:
        probs = ["" if p is None else fmt_float(p) for p in r.probs]
        comb = "" if r.combined_p is None else fmt_float(r.combined_p)
        lines.append(",".join([r.beam_id, *probs, comb, "1" if r.completed else "0",
                               "1" if r.deliverable else "0"]))
    return "\n".join(lines) + "\n"


def parse_response_header(line: str) -> tuple[int, str]:
    parts = line.rstrip("\n").split(",")
    if len(parts) != 3 or parts[0] != "RESULTS":
        raise ProtocolError(f"line 1: expected 'RESULTS,<slot>,<status>', got {line.rstrip()!r}")
    if parts[2] not in (STATUS_OK, STATUS_GAP, STATUS_ERROR):
        raise ProtocolError(f"line 1: unknown status {parts[2]!r}")
    return _int(parts[1], "line 1, column 2"), parts[2]


def parse_result_line(line: str, lineno: int) -> ResultRow:
    f = line.rstrip("\n").split(",")
    where = f"line {lineno}"
    if len(f) != 7:
        raise ProtocolError(f"{where}: expected 7 columns, got {len(f)}")
    probs = tuple(None if v == "" else _num(v, f"{where}, column {i + 2}") for i, v in enumerate(f[1:4]))
    comb = None if f[4] == "" else _num(f[4], f"{where}, column 5")
    return ResultRow(f[0], probs, comb, _flag(f[5], f"{where}, column 6"), _flag(f[6], f"{where}, column 7"))


def decode_response(text: str) -> WireResponse:
    lines = text.splitlines()
    if not lines:
        raise ProtocolError("empty response")
    slot, status = parse_response_header(lines[0])
    rows = tuple(parse_result_line(line, i) for i, line in enumerate(lines[1:], start=2))
    if status != STATUS_OK and rows:
        raise ProtocolError(f"{status} response must not carry result rows")
    return WireResponse(slot, status, rows)


# -- transport ----------------------------------------------------------------


class BeamClient(Protocol):
    def request(self, slot_hint: int, beams: list[BeamSpec]) -> WireResponse: ...


class LocalBeamClient:
    """In-process client; still goes through the wire encoding both ways."""

    def __init__(self, service: BeamService):
        self.service = service

    def request(self, slot_hint: int, beams: list[BeamSpec]) -> WireResponse:
        req = decode_request(encode_request(BeamRequest(slot_hint, tuple(beams))))
        resp = self.service.handle(req.slot_hint, list(req.beams))
        return decode_response(encode_response(to_wire(resp)))


class TcpBeamClient:
    def __init__(self, host: str, port: int, timeout: float | None = 30.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.reader = self.sock.makefile("r", encoding=ENCODING, newline="\n")

    def request(self, slot_hint: int, beams: list[BeamSpec]) -> WireResponse:
        payload = encode_request(BeamRequest(slot_hint, tuple(beams)))
        self.sock.sendall(payload.encode(ENCODING))
        header = self.reader.readline()
        if not header:
            raise ConnectionError("service closed the connection")
        slot, status = parse_response_header(header)
        lines = [header]
        if status == STATUS_OK:
            for _ in beams:
                line = self.reader.readline()
                if not line:
                    raise ConnectionError("service closed the connection mid-response")
                lines.append(line)
        return decode_response("".join(lines))

    def close(self) -> None:
        self.reader.close()
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class _SessionHandler(socketserver.StreamRequestHandler):
    def handle(self):
        service: BeamService = self.server.service
        log.info("client connected from %s", self.client_address)
        while True:
            header = self.rfile.readline().decode(ENCODING)
            if not header:
                break
            try:
                slot, count = parse_request_header(header)
                beams = tuple(
                    parse_beam_line(self.rfile.readline().decode(ENCODING), i + 2) for i in range(count)
                )
                _check_beams(beams)
            except ProtocolError as exc:
                log.warning("rejecting request: %s", exc)
                self.wfile.write(f"RESULTS,-1,{STATUS_ERROR}\n".encode(ENCODING))
                break
            resp = to_wire(service.handle(slot, list(beams)))
            self.wfile.write(encode_response(resp).encode(ENCODING))
            self.wfile.flush()
        log.info("client %s disconnected", self.client_address)


class BeamServer(socketserver.TCPServer):
    """Serves one client session at a time."""

    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], service: BeamService):
        self.service = service
        super().__init__(address, _SessionHandler)
