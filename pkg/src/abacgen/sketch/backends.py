"""Vision-LLM backends.

A backend receives an :class:`LlmRequest` (ordered text and image parts plus a
JSON-response directive) and returns the decoded JSON reply.

HTTP wire contract used by :class:`HttpBackend` (``POST <endpoint>``)::

    {
      "model": "<model id>",
      "task": "identity" | "extract" | "refine",
      "response_mime_type": "application/json",
      "parts": [
        {"type": "text", "text": "..."},
        {"type": "image", "media_type": "image/png", "data": "<base64>"}
      ]
    }

The response body is either the JSON reply itself, or an object whose
``"content"`` string holds it. The API key is read from the environment
variable named by ``credential_env`` and sent as ``Authorization: Bearer``.
"""

from __future__ import annotations

import base64
import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Protocol

import httpx

from ..errors import BackendError, UnparseableResponse


@dataclass(frozen=True)
class Part:
    text: str | None = None
    data: bytes | None = None
    media_type: str | None = None

    @classmethod
    def of_text(cls, text: str) -> "Part":
        return cls(text=text)

    @classmethod
    def of_image(cls, data: bytes, media_type: str) -> "Part":
        return cls(data=data, media_type=media_type)

    def to_wire(self) -> dict[str, str]:
        if self.text is not None:
            return {"type": "text", "text": self.text}
        return {"type": "image", "media_type": self.media_type, "data": base64.b64encode(self.data).decode("ascii")}


@dataclass(frozen=True)
class LlmRequest:
    task: str
    parts: tuple[Part, ...]
    # sha256 of the sketch the conversation is about; lets test doubles key replies
    sketch_digest: str
    context: Mapping[str, Any] = field(default_factory=dict)
    response_mime_type: str = "application/json"


class LlmBackend(Protocol):
    @property
    def configured(self) -> bool: ...

    def complete(self, request: LlmRequest) -> Any: ...


def decode_reply(text: str) -> Any:
    try:
        return json.loads(text)
    except (json.JSONDecodeError, TypeError) as exc:
        raise UnparseableResponse(f"backend reply is not JSON: {exc}") from None


class HttpBackend:
    def __init__(
        self,
        endpoint: str,
        model: str,
        credential_env: str | None = None,
        timeout: float = 60.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.credential_env = credential_env
        self.timeout = timeout
        self._transport = transport

    @property
    def configured(self) -> bool:
        if not self.endpoint:
            return False
        return self.credential_env is None or bool(os.environ.get(self.credential_env))

    def complete(self, request: LlmRequest) -> Any:
        headers = {"Content-Type": "application/json"}
        if self.credential_env:
            key = os.environ.get(self.credential_env)
            if not key:
                raise BackendError(f"credential environment variable {self.credential_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        payload = {
            "model": self.model,
            "task": request.task,
            "response_mime_type": request.response_mime_type,
            "parts": [p.to_wire() for p in request.parts],
        }
        try:
            with httpx.Client(timeout=self.timeout, transport=self._transport) as client:
                response = client.post(self.endpoint, json=payload, headers=headers)
        except httpx.TimeoutException:
            raise BackendError(f"backend timed out after {self.timeout}s") from None
        except httpx.HTTPError as exc:
            raise BackendError(f"backend transport error: {type(exc).__name__}") from None
        if response.status_code >= 400:
            raise BackendError(f"backend returned HTTP {response.status_code}")
        body = decode_reply(response.text)
        if isinstance(body, dict) and isinstance(body.get("content"), str):
            return decode_reply(body["content"])
        return body


class MockBackend:
    """Scripted backend keyed by the sha256 of each sketch.

    A script per sketch::

        {"identity": {...}, "extract": {...}, "refine": [{...}, {...}]}

    ``refine`` replies are consumed in order; once exhausted the backend
    echoes the current parameters. A reply ``{"$error": msg}`` raises
    :class:`BackendError` and ``{"$raw": text}`` is returned as unparseable
    text.
    """

    def __init__(self, scripts: Mapping[str, Mapping[str, Any]]):
        self.scripts = {k: dict(v) for k, v in scripts.items()}
        self.calls: list[tuple[str, str]] = []
        self._refine_pos: dict[str, int] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "MockBackend":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    @property
    def configured(self) -> bool:
        return True

    def _reply(self, reply: Any) -> Any:
        if isinstance(reply, dict) and "$error" in reply:
            raise BackendError(str(reply["$error"]))
        if isinstance(reply, dict) and "$raw" in reply:
            return decode_reply(reply["$raw"])
        return reply

    def complete(self, request: LlmRequest) -> Any:
        with self._lock:
            self.calls.append((request.task, request.sketch_digest))
            script = self.scripts.get(request.sketch_digest)
            if script is None:
                raise BackendError("mock backend has no script for this image")
            if request.task != "refine":
                if request.task not in script:
                    raise BackendError(f"mock script lacks a {request.task!r} reply")
                return self._reply(script[request.task])
            pos = self._refine_pos.get(request.sketch_digest, 0)
            replies = script.get("refine", [])
            self._refine_pos[request.sketch_digest] = pos + 1
        if pos < len(replies):
            return self._reply(replies[pos])
        return dict(request.context.get("current_params", {}))
