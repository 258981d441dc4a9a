"""Decoder boundary: builtin degenerate decoders plus two wire transports.

The engine never hosts a neural decoder. Caption generation is delegated to
an endpoint that receives the full conditioning payload (prompt string, the
corrected input vector, and the K retrieved caption vectors) and returns a
caption:

* ``top1`` - builtin: emits the text of the highest-ranked retrieved
  caption. This is the training-free, retrieval-only configuration.
* ``echo`` - builtin: emits the prompt string verbatim (plumbing checks).
* ``subprocess:<command>`` - spawns the command once and exchanges
  length-prefixed JSON frames over stdin/stdout. The prefix is a big-endian
  u32 byte count. Requests are serialized (one in flight); a timed-out
  request is never retried and the child is restarted for the next one.
* ``http(s)://host[:port]`` - POST /generate with the request JSON body.

Every failure carries the request id it belongs to. Semantics are
at-most-once per request.
"""

from __future__ import annotations

import json
import os
import selectors
import shlex
import struct
import subprocess
import threading
import time
from dataclasses import dataclass

import numpy as np
import requests as _requests

from .datastore import RetrievalBundle
from .errors import NonzeroExit, ProtocolError, Timeout

DEFAULT_TIMEOUT = 30.0


@dataclass
class DecoderRequest:
    """Conditioning payload sent to a decoder endpoint."""

    request_id: str
    prompt: str
    input_embedding: list[float]
    neighbor_embeddings: list[list[float]]

    def to_dict(self) -> dict:
        return {
            "request_id": self.request_id,
            "prompt": self.prompt,
            "input_embedding": self.input_embedding,
            "neighbor_embeddings": self.neighbor_embeddings,
        }


@dataclass
class DecoderResponse:
    request_id: str
    caption: str


def build_request(request_id: str, prompt: str, input_embedding: np.ndarray,
                  neighbor_embeddings: np.ndarray) -> DecoderRequest:
    return DecoderRequest(
        request_id=request_id,
        prompt=prompt,
        input_embedding=[float(x) for x in np.asarray(input_embedding).ravel()],
        neighbor_embeddings=[[float(x) for x in row]
                             for row in np.asarray(neighbor_embeddings)],
    )


class Top1Decoder:
    """Training-free decoder: the best retrieved caption wins."""

    name = "top1"

    def generate(self, request: DecoderRequest,
                 bundle: RetrievalBundle | None = None) -> DecoderResponse:
        if bundle is None or not bundle.prompt_captions:
            raise ProtocolError("top1 decoder needs a retrieval bundle", request.request_id)
        return DecoderResponse(request.request_id, bundle.prompt_captions[0].text)

    def close(self) -> None:
        pass


class EchoDecoder:
    """Returns the prompt unchanged; exists to exercise the plumbing."""

    name = "echo"

    def generate(self, request: DecoderRequest,
                 bundle: RetrievalBundle | None = None) -> DecoderResponse:
        return DecoderResponse(request.request_id, request.prompt)

    def close(self) -> None:
        pass


class SubprocessDecoder:
    """Length-prefixed JSON frames over a child process's stdin/stdout."""

    def __init__(self, command: str, timeout: float = DEFAULT_TIMEOUT):
        self.name = f"subprocess:{command}"
        self._argv = shlex.split(command)
        self._timeout = timeout
        self._proc: subprocess.Popen | None = None
        self._lock = threading.Lock()

    def _ensure_child(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            # bufsize=0: reads/writes hit the pipe directly, so selecting on
            # the fd and reading through the stream object stay consistent
            self._proc = subprocess.Popen(
                self._argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                bufsize=0,
            )
            os.set_blocking(self._proc.stdout.fileno(), False)
            os.set_blocking(self._proc.stdin.fileno(), False)
        return self._proc

    def _kill_child(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.kill()
            self._proc.wait()
        self._proc = None

    def _read_exact(self, proc: subprocess.Popen, n: int, deadline: float,
                    request_id: str) -> bytes:
        sel = selectors.DefaultSelector()
        sel.register(proc.stdout, selectors.EVENT_READ)
        chunks = b""
        try:
            while len(chunks) < n:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise Timeout(
                        f"decoder did not answer within {self._timeout}s", request_id)
                if not sel.select(timeout=remaining):
                    continue
                piece = proc.stdout.read(n - len(chunks))
                if piece is None:
                    continue
                if piece == b"":
                    rc = proc.wait()
                    if rc != 0:
                        raise NonzeroExit(f"decoder exited with status {rc}", request_id)
                    raise ProtocolError("decoder closed its output stream", request_id)
                chunks += piece
        finally:
            sel.close()
        return chunks

    def _write_all(self, proc: subprocess.Popen, frame: bytes, deadline: float,
                   request_id: str) -> None:
        sel = selectors.DefaultSelector()
        sel.register(proc.stdin, selectors.EVENT_WRITE)
        view = memoryview(frame)
        try:
            while view:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise Timeout(
                        f"decoder did not accept input within {self._timeout}s",
                        request_id)
                if not sel.select(timeout=remaining):
                    continue
                try:
                    written = proc.stdin.write(view)
                except BlockingIOError:
                    continue
                except (BrokenPipeError, OSError):
                    rc = proc.poll()
                    if rc not in (None, 0):
                        raise NonzeroExit(f"decoder exited with status {rc}", request_id)
                    raise ProtocolError("decoder stdin closed", request_id)
                if written:
                    view = view[written:]
        finally:
            sel.close()

    def generate(self, request: DecoderRequest,
                 bundle: RetrievalBundle | None = None) -> DecoderResponse:
        payload = json.dumps(request.to_dict()).encode("utf-8")
        frame = struct.pack(">I", len(payload)) + payload
        with self._lock:
            proc = self._ensure_child()
            deadline = time.monotonic() + self._timeout
            try:
                self._write_all(proc, frame, deadline, request.request_id)
                (length,) = struct.unpack(">I", self._read_exact(proc, 4, deadline,
                                                                 request.request_id))
                body = self._read_exact(proc, length, deadline, request.request_id)
            except (Timeout, ProtocolError, NonzeroExit):
                self._kill_child()
                raise
        return _parse_response(body, request.request_id)

    def close(self) -> None:
        with self._lock:
            if self._proc is not None and self._proc.poll() is None:
                self._proc.stdin.close()
                try:
                    self._proc.wait(timeout=2.0)
                except subprocess.TimeoutExpired:
                    self._proc.kill()
                    self._proc.wait()
            self._proc = None


class HttpDecoder:
    """POSTs request JSON to <base>/generate and expects response JSON back."""

    def __init__(self, base_url: str, timeout: float = DEFAULT_TIMEOUT):
        self.name = base_url
        url = base_url.rstrip("/")
        self._url = url if url.endswith("/generate") else url + "/generate"
        self._timeout = timeout

    def generate(self, request: DecoderRequest,
                 bundle: RetrievalBundle | None = None) -> DecoderResponse:
        try:
            resp = _requests.post(self._url, json=request.to_dict(), timeout=self._timeout)
        except _requests.Timeout:
            raise Timeout(f"no HTTP response within {self._timeout}s", request.request_id)
        except _requests.RequestException as exc:
            raise ProtocolError(f"HTTP transport failed: {exc}", request.request_id)
        if resp.status_code != 200:
            raise ProtocolError(
                f"decoder returned HTTP {resp.status_code}", request.request_id)
        return _parse_response(resp.content, request.request_id)

    def close(self) -> None:
        pass


def _parse_response(body: bytes, request_id: str) -> DecoderResponse:
    try:
        obj = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"decoder response is not valid JSON: {exc}", request_id)
    if not isinstance(obj, dict) or "request_id" not in obj or "caption" not in obj:
        raise ProtocolError("decoder response missing request_id/caption", request_id)
    if obj["request_id"] != request_id:
        raise ProtocolError(
            f"response id {obj['request_id']!r} does not match request {request_id!r}",
            request_id)
    caption = obj["caption"]
    if not isinstance(caption, str) or not caption:
        raise ProtocolError("decoder returned an empty caption", request_id)
    return DecoderResponse(request_id, caption)


def make_decoder(descriptor: str, timeout: float = DEFAULT_TIMEOUT):
    """Build a decoder endpoint from its config descriptor string."""
    d = descriptor.strip()
    if d == "top1":
        return Top1Decoder()
    if d == "echo":
        return EchoDecoder()
    if d.startswith("subprocess:"):
        command = d[len("subprocess:"):].strip()
        if not command:
            raise ValueError("subprocess decoder needs a command")
        return SubprocessDecoder(command, timeout=timeout)
    if d.startswith("http://") or d.startswith("https://"):
        return HttpDecoder(d, timeout=timeout)
    raise ValueError(f"unknown decoder endpoint {descriptor!r}")


def decoder_call(endpoint, request: DecoderRequest,
                 bundle: RetrievalBundle | None = None) -> DecoderResponse:
    """Send one request to an endpoint built by :func:`make_decoder`."""
    return endpoint.generate(request, bundle)
