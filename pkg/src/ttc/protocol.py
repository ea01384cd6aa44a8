"""Client/server split inference over length-prefixed frames.

The client binarizes (or forwards precomputed bits), the server evaluates
the circuit and returns the four plane partial sums, and the client
recombines and takes the argmax. The server response never carries float
weights or the quantization scale; those stay client-side. Frames are
4-byte big-endian length, then a 1-byte message type, then a JSON body.
"""

from __future__ import annotations

import base64
import json
import secrets
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .circuit import Circuit, parse_circuit
from .engine import Evaluator, argmax_label
from .errors import (
    FrameError,
    SchemaError,
    ShapeError,
    TTCError,
    UnknownModelError,
)
from .quant import recombine
from .ttir import FrontEnd, parse_model
from . import circuit as circuit_mod

MSG_REQUEST = 1
MSG_RESPONSE = 2
MSG_ERROR = 3

HEADER = struct.Struct(">I")
MAX_FRAME_BYTES = 64 * 1024 * 1024

SETTING_FULL = "full_pr"
SETTING_SPLIT = "split"


def pack_bits(bits: np.ndarray) -> bytes:
    """Little-endian bit packing: bit i of byte j is input bit 8*j + i."""
    return np.packbits(bits.astype(np.uint8), bitorder="little").tobytes()


def unpack_bits(data: bytes, n_bits: int) -> np.ndarray:
    arr = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    if arr.shape[0] < n_bits:
        raise SchemaError(f"payload: {arr.shape[0]} bits present, {n_bits} declared")
    return arr[:n_bits].astype(np.int64)


@dataclass(frozen=True, eq=False)
class InferenceRequest:
    model_id: str
    setting: str
    payload_bits: np.ndarray
    nonce: str

    def to_json(self) -> dict:
        return {
            "model_id": self.model_id,
            "setting": self.setting,
            "payload_len": int(self.payload_bits.shape[0]),
            "payload": base64.b64encode(pack_bits(self.payload_bits)).decode("ascii"),
            "nonce": self.nonce,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "InferenceRequest":
        try:
            bits = unpack_bits(base64.b64decode(obj["payload"], validate=True),
                               int(obj["payload_len"]))
            return cls(model_id=str(obj["model_id"]), setting=str(obj["setting"]),
                       payload_bits=bits, nonce=str(obj["nonce"]))
        except (KeyError, ValueError) as exc:
            raise SchemaError(f"request: malformed message ({exc})") from exc

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, InferenceRequest):
            return NotImplemented
        return (
            self.model_id == other.model_id
            and self.setting == other.setting
            and self.nonce == other.nonce
            and np.array_equal(self.payload_bits, other.payload_bits)
        )


@dataclass(frozen=True, eq=False)
class InferenceResponse:
    model_id: str
    model_version: str
    nonce: str
    partials: np.ndarray  # int64 [4, classes]
    trace: dict

    def to_json(self) -> dict:
        return {
            "model_id": self.model_id,
            "model_version": self.model_version,
            "nonce": self.nonce,
            "partials": self.partials.tolist(),
            "trace": self.trace,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "InferenceResponse":
        try:
            partials = np.asarray(obj["partials"], dtype=np.int64)
            if partials.ndim != 2 or partials.shape[0] != 4:
                raise ValueError(f"partials shape {partials.shape}")
            return cls(model_id=str(obj["model_id"]),
                       model_version=str(obj["model_version"]),
                       nonce=str(obj["nonce"]), partials=partials,
                       trace=dict(obj.get("trace", {})))
        except (KeyError, ValueError) as exc:
            raise SchemaError(f"response: malformed message ({exc})") from exc

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, InferenceResponse):
            return NotImplemented
        return (
            self.model_id == other.model_id
            and self.model_version == other.model_version
            and self.nonce == other.nonce
            and np.array_equal(self.partials, other.partials)
            and self.trace == other.trace
        )


@dataclass(frozen=True)
class ErrorReply:
    code: str
    message: str
    nonce: str = ""

    def to_json(self) -> dict:
        return {"code": self.code, "message": self.message, "nonce": self.nonce}

    @classmethod
    def from_json(cls, obj: dict) -> "ErrorReply":
        return cls(code=str(obj.get("code", "error")),
                   message=str(obj.get("message", "")),
                   nonce=str(obj.get("nonce", "")))


Message = Union[InferenceRequest, InferenceResponse, ErrorReply]

_TYPE_OF = {InferenceRequest: MSG_REQUEST, InferenceResponse: MSG_RESPONSE,
            ErrorReply: MSG_ERROR}


def frame_encode(msg: Message) -> bytes:
    """One frame: length prefix over the type byte plus JSON body."""
    body = json.dumps(msg.to_json()).encode("utf-8")
    payload = bytes([_TYPE_OF[type(msg)]]) + body
    if len(payload) > MAX_FRAME_BYTES:
        raise FrameError(f"frame of {len(payload)} bytes exceeds the limit")
    return HEADER.pack(len(payload)) + payload


def frame_decode(data: bytes) -> Message:
    """Decode exactly one frame; raises FrameError on truncation."""
    if len(data) < HEADER.size:
        raise FrameError(f"truncated frame: {len(data)} bytes, need a 4-byte length")
    (length,) = HEADER.unpack(data[: HEADER.size])
    if length > MAX_FRAME_BYTES:
        raise FrameError(f"declared frame length {length} exceeds the limit")
    if len(data) < HEADER.size + length:
        raise FrameError(
            f"truncated frame: {len(data) - HEADER.size} of {length} payload bytes present"
        )
    if length < 1:
        raise FrameError("empty frame: missing message type byte")
    payload = data[HEADER.size:HEADER.size + length]
    msg_type = payload[0]
    try:
        body = json.loads(payload[1:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FrameError(f"frame body is not valid JSON ({exc})") from exc
    if msg_type == MSG_REQUEST:
        return InferenceRequest.from_json(body)
    if msg_type == MSG_RESPONSE:
        return InferenceResponse.from_json(body)
    if msg_type == MSG_ERROR:
        return ErrorReply.from_json(body)
    raise FrameError(f"unknown message type {msg_type}")


def read_frame(sock: socket.socket) -> Optional[Message]:
    """Read one frame from a socket; None on clean EOF before a frame starts."""
    header = _read_exact(sock, HEADER.size, allow_eof=True)
    if header is None:
        return None
    (length,) = HEADER.unpack(header)
    if length > MAX_FRAME_BYTES:
        raise FrameError(f"declared frame length {length} exceeds the limit")
    payload = _read_exact(sock, length, allow_eof=False)
    assert payload is not None
    return frame_decode(header + payload)


def _read_exact(sock: socket.socket, count: int, allow_eof: bool) -> Optional[bytes]:
    chunks = []
    remaining = count
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            if allow_eof and remaining == count:
                return None
            raise FrameError(f"connection closed mid-frame ({remaining} bytes short)")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


# ---------------------------------------------------------------------------
# Client side


@dataclass(frozen=True)
class ClientManifest:
    """What the client needs to talk to the server about one model.

    Carries the input geometry, the front end, and the recombination scale;
    never the weights.
    """

    model_id: str
    setting: str
    input_size: int
    front_end: FrontEnd
    scale: float
    classes: int

    @classmethod
    def from_circuit(cls, c: Circuit) -> "ClientManifest":
        return cls(model_id=c.name, setting=c.setting, input_size=c.input_size,
                   front_end=c.front_end, scale=c.quant.scale, classes=c.quant.classes)


def client_encode(input_values: Sequence[float], manifest: ClientManifest,
                  nonce: Optional[str] = None) -> InferenceRequest:
    """Binarize per the front end and pack the payload.

    Encryption is an identity stub here; message sizes for a real backend
    come from the cost module's calibration.
    """
    vals = np.asarray(input_values, dtype=np.float64).reshape(-1)
    if vals.shape[0] != manifest.input_size:
        raise ShapeError(
            f"input width mismatch: expected {manifest.input_size} values, "
            f"got {vals.shape[0]}"
        )
    if manifest.front_end.kind == "binarize":
        assert manifest.front_end.thresholds is not None
        bits = (vals - manifest.front_end.thresholds >= 0).astype(np.int64)
    else:
        if not np.all((vals == 0) | (vals == 1)):
            raise ShapeError("precomputed_binary front end requires 0/1 inputs")
        bits = vals.astype(np.int64)
    return InferenceRequest(
        model_id=manifest.model_id,
        setting=manifest.setting,
        payload_bits=bits,
        nonce=nonce if nonce is not None else secrets.token_hex(8),
    )


def client_finalize(resp: InferenceResponse, scale: float) -> tuple[np.ndarray, int]:
    """Recombine the plane partials and classify; ties go to the lowest index."""
    scores = recombine(resp.partials, scale)
    return scores, argmax_label(scores)


# ---------------------------------------------------------------------------
# Server side


class ModelRegistry:
    """Read-only mapping from model id to a prepared evaluator."""

    def __init__(self) -> None:
        self._entries: dict[str, tuple[Circuit, Evaluator]] = {}

    def register(self, c: Circuit) -> None:
        self._entries[c.name] = (c, Evaluator(c))

    def register_file(self, path: str) -> str:
        """Load a circuit file, or compile a model file, and register it."""
        with open(path, "rb") as fh:
            data = fh.read()
        head = json.loads(data.decode("utf-8"))
        if head.get("format") == circuit_mod.CIRCUIT_FORMAT:
            c = parse_circuit(data)
        else:
            c = circuit_mod.compile_model(parse_model(data))
        self.register(c)
        return c.name

    def get(self, model_id: str) -> tuple[Circuit, Evaluator]:
        if model_id not in self._entries:
            raise UnknownModelError(f"model {model_id!r} is not registered")
        return self._entries[model_id]

    def ids(self) -> list[str]:
        return sorted(self._entries)


def server_infer(req: InferenceRequest, registry: ModelRegistry) -> InferenceResponse:
    """Evaluate a request in split mode: plane partials only, never scores.

    The response deliberately omits the scale and any float weights; the
    plane sums are what an encrypted backend would return.
    """
    c, ev = registry.get(req.model_id)
    if req.setting != c.setting:
        raise ShapeError(
            f"setting mismatch: model {c.name!r} is served as {c.setting!r}, "
            f"request says {req.setting!r}"
        )
    if req.payload_bits.shape[0] != c.input_size:
        raise ShapeError(
            f"payload width mismatch: expected {c.input_size} bits, "
            f"got {req.payload_bits.shape[0]}"
        )
    result, high = ev.infer(req.payload_bits, track=True)
    trace = ev.trace_skeleton(high)
    return InferenceResponse(
        model_id=c.name,
        model_version=c.version,
        nonce=req.nonce,
        partials=result.partials,
        trace={
            "lut_calls_by_bitwidth": {str(k): v for k, v
                                      in sorted(trace.lut_calls_by_bitwidth.items())},
            "max_accumulator_value": trace.max_accumulator_value,
            "max_bitwidth": trace.max_bitwidth_touched,
            "patches": trace.patches_evaluated,
        },
    )


_ERROR_CODES = {
    UnknownModelError: "unknown_model",
    ShapeError: "shape_error",
    SchemaError: "schema_error",
}


def _error_reply(exc: TTCError, nonce: str) -> ErrorReply:
    code = _ERROR_CODES.get(type(exc), "error")
    return ErrorReply(code=code, message=str(exc), nonce=nonce)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        registry: ModelRegistry = self.server.registry  # type: ignore[attr-defined]
        while True:
            try:
                msg = read_frame(self.request)
            except (FrameError, OSError):
                return
            if msg is None:
                return
            if not isinstance(msg, InferenceRequest):
                self.request.sendall(frame_encode(
                    ErrorReply(code="schema_error",
                               message="server accepts request frames only")))
                continue
            try:
                reply: Message = server_infer(msg, registry)
            except TTCError as exc:
                reply = _error_reply(exc, msg.nonce)
            try:
                self.request.sendall(frame_encode(reply))
            except OSError:
                return


class InferenceServer(socketserver.ThreadingTCPServer):
    """Threaded TCP server over a read-only model registry."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], registry: ModelRegistry):
        super().__init__(address, _Handler)
        self.registry = registry

    @property
    def port(self) -> int:
        return self.server_address[1]

    def serve_in_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread


class RemoteClient:
    """Blocking request/response client over one TCP connection."""

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)

    def request(self, req: InferenceRequest) -> InferenceResponse:
        self._sock.sendall(frame_encode(req))
        msg = read_frame(self._sock)
        if msg is None:
            raise FrameError("server closed the connection without replying")
        if isinstance(msg, ErrorReply):
            exc_type = {v: k for k, v in _ERROR_CODES.items()}.get(msg.code, TTCError)
            raise exc_type(msg.message)
        if not isinstance(msg, InferenceResponse):
            raise FrameError("unexpected message type in reply")
        return msg

    def close(self) -> None:
        self._sock.close()

    def __enter__(self) -> "RemoteClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def parse_address(addr: str, default_port: int = 8631) -> tuple[str, int]:
    if ":" in addr:
        host, port = addr.rsplit(":", 1)
        return host or "127.0.0.1", int(port)
    return addr, default_port
