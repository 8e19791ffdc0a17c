"""Uniform access to chat and embedding models.

Profiles are declared in a TOML file and name an environment variable for
credentials; key material is read only at request time and never stored or
serialized.  The ``mock`` backend is fully deterministic and used throughout
the test suite: at temperature zero its output is a pure function of the
request, and at higher temperatures a per-request invocation counter is mixed
in, so repeated sampling varies within a run yet replays identically across
fresh runs.
"""

from __future__ import annotations

import hashlib
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import httpx

try:
    import tomllib
except ImportError:  # Python 3.10
    import tomli as tomllib

logger = logging.getLogger(__name__)

ENV_MODELS_PATH = "CRR_MODELS"

_RETRY_ATTEMPTS = 3
_RETRY_BASE_DELAY = 1.0
_RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})


class GatewayError(Exception):
    """A model call failed after exhausting its retry budget."""


class AuthError(GatewayError):
    """The endpoint rejected our credentials; retrying cannot help."""


class ProfileError(Exception):
    """The model profile configuration is missing or malformed."""


@dataclass(frozen=True)
class ModelProfile:
    name: str
    backend: str = "mock"
    endpoint: str = ""
    model_id: str = ""
    auth_env: str = ""
    temperature: float = 0.0
    top_p: float = 1.0
    max_output: int = 2048
    max_parallel: int = 8
    min_interval: float = 0.0
    embed_dim: int = 8

    def __post_init__(self) -> None:
        if self.backend not in ("mock", "http"):
            raise ProfileError(f"profile {self.name}: unknown backend {self.backend!r}")
        if self.temperature < 0:
            raise ProfileError(f"profile {self.name}: temperature must be non-negative")
        if not 0 < self.top_p <= 1:
            raise ProfileError(f"profile {self.name}: top_p must be in (0, 1]")
        if self.max_parallel < 1:
            raise ProfileError(f"profile {self.name}: max_parallel must be at least 1")
        if self.embed_dim < 1:
            raise ProfileError(f"profile {self.name}: embed_dim must be at least 1")
        if self.backend == "http" and not self.endpoint:
            raise ProfileError(f"profile {self.name}: http backend needs an endpoint")


@dataclass(frozen=True)
class ChatRequest:
    user: str
    system: str | None = None
    temperature: float | None = None
    top_p: float | None = None
    max_output: int | None = None


@dataclass(frozen=True)
class ChatResponse:
    text: str
    model_id: str = ""
    finish_reason: str = "stop"
    prompt_tokens: int | None = None
    completion_tokens: int | None = None


ChatScript = Mapping[str, Any] | Callable[[ChatRequest, int], str]
EmbedScript = Mapping[str, Sequence[float]]


class MockBackend:
    """Deterministic in-process stand-in for a model endpoint.

    ``chat_script`` maps exact user text to a reply: a string, an exception to
    raise, a list of those consumed per call (last entry repeats), or a
    callable ``(request, call_index) -> str``.  The whole script may also be a
    callable.  Unscripted requests get a digest-based default reply.
    """

    def __init__(
        self,
        chat_script: ChatScript | None = None,
        embed_script: EmbedScript | None = None,
    ) -> None:
        self.chat_script = chat_script
        self.embed_script = dict(embed_script or {})
        self._counters: dict[str, int] = {}
        self._lock = threading.Lock()

    def _next_index(self, key: str) -> int:
        with self._lock:
            index = self._counters.get(key, 0)
            self._counters[key] = index + 1
            return index

    def chat(self, profile: ModelProfile, request: ChatRequest, temperature: float, top_p: float) -> ChatResponse:
        digest = hashlib.sha256(
            "\x1f".join(
                [profile.model_id, request.system or "", request.user, f"{temperature:g}", f"{top_p:g}"]
            ).encode("utf-8")
        ).hexdigest()[:12]
        call_index = self._next_index(digest)

        text: str | None = None
        if callable(self.chat_script):
            result = self.chat_script(request, call_index)
            if isinstance(result, Exception):
                raise result
            text = result
        elif self.chat_script is not None and request.user in self.chat_script:
            value = self.chat_script[request.user]
            if isinstance(value, (list, tuple)):
                value = value[min(call_index, len(value) - 1)]
            if callable(value):
                value = value(request, call_index)
            if isinstance(value, Exception):
                raise value
            text = value

        if text is None:
            if temperature == 0:
                text = f"<mock:{profile.model_id}:{digest}>"
            else:
                text = f"<mock:{profile.model_id}:{digest}:{call_index}>"
        return ChatResponse(text=text, model_id=profile.model_id)

    def embed(self, profile: ModelProfile, text: str) -> tuple[float, ...]:
        if text in self.embed_script:
            vector = tuple(float(x) for x in self.embed_script[text])
            if len(vector) != profile.embed_dim:
                raise GatewayError(
                    f"scripted embedding has {len(vector)} dims, profile declares {profile.embed_dim}"
                )
            return vector
        values: list[float] = []
        block = 0
        while len(values) < profile.embed_dim:
            digest = hashlib.sha256(f"{profile.model_id}\x1f{text}\x1f{block}".encode("utf-8")).hexdigest()
            for i in range(0, 64, 8):
                values.append(int(digest[i : i + 8], 16) / 16**8)
            block += 1
        return tuple(values[: profile.embed_dim])


class HttpBackend:
    """OpenAI-style HTTP endpoint with bounded retries and doubling backoff."""

    def __init__(
        self,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self._client = client
        self._sleep = sleep

    def _headers(self, profile: ModelProfile) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if profile.auth_env:
            key = os.environ.get(profile.auth_env)
            if not key:
                raise AuthError(
                    f"profile {profile.name}: environment variable {profile.auth_env} is not set"
                )
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, profile: ModelProfile, path: str, payload: dict[str, Any]) -> dict[str, Any]:
        url = profile.endpoint.rstrip("/") + path
        headers = self._headers(profile)
        client = self._client or httpx.Client(timeout=60.0)
        owned = self._client is None
        delay = _RETRY_BASE_DELAY
        last_error: Exception | None = None
        try:
            for attempt in range(1, _RETRY_ATTEMPTS + 1):
                try:
                    response = client.post(url, json=payload, headers=headers)
                    if response.status_code in (401, 403):
                        raise AuthError(f"{url}: HTTP {response.status_code}, credentials rejected")
                    response.raise_for_status()
                    return response.json()
                except AuthError:
                    raise
                except (httpx.TransportError, httpx.HTTPStatusError) as exc:
                    status = getattr(getattr(exc, "response", None), "status_code", None)
                    if status is not None and status not in _RETRYABLE_STATUS:
                        raise GatewayError(f"{url}: unrecoverable HTTP {status}") from exc
                    last_error = exc
                    if attempt < _RETRY_ATTEMPTS:
                        logger.warning("call to %s failed (attempt %d), retrying in %.1fs", url, attempt, delay)
                        self._sleep(delay)
                        delay *= 2
            raise GatewayError(f"{url}: failed after {_RETRY_ATTEMPTS} attempts") from last_error
        finally:
            if owned:
                client.close()

    def chat(self, profile: ModelProfile, request: ChatRequest, temperature: float, top_p: float) -> ChatResponse:
        messages = []
        if request.system:
            messages.append({"role": "system", "content": request.system})
        messages.append({"role": "user", "content": request.user})
        payload = {
            "model": profile.model_id,
            "messages": messages,
            "temperature": temperature,
            "top_p": top_p,
            "max_tokens": request.max_output or profile.max_output,
        }
        data = self._post(profile, "/chat/completions", payload)
        try:
            choice = data["choices"][0]
            usage = data.get("usage", {})
            return ChatResponse(
                text=choice["message"]["content"],
                model_id=str(data.get("model", profile.model_id)),
                finish_reason=str(choice.get("finish_reason", "stop")),
                prompt_tokens=usage.get("prompt_tokens"),
                completion_tokens=usage.get("completion_tokens"),
            )
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"{profile.endpoint}: malformed chat response: {exc}") from exc

    def embed(self, profile: ModelProfile, text: str) -> tuple[float, ...]:
        payload = {"model": profile.model_id, "input": text}
        data = self._post(profile, "/embeddings", payload)
        try:
            return tuple(float(x) for x in data["data"][0]["embedding"])
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise GatewayError(f"{profile.endpoint}: malformed embedding response: {exc}") from exc


@dataclass
class ModelHandle:
    """A profile bound to a backend, a concurrency cap, and usage counters."""

    profile: ModelProfile
    backend: Any
    requests_started: int = 0
    requests_succeeded: int = 0
    requests_failed: int = 0
    _semaphore: threading.BoundedSemaphore = field(init=False, repr=False)
    _lock: threading.Lock = field(init=False, repr=False)
    _last_dispatch: float = field(default=0.0, repr=False)

    def __post_init__(self) -> None:
        self._semaphore = threading.BoundedSemaphore(self.profile.max_parallel)
        self._lock = threading.Lock()

    @property
    def model_id(self) -> str:
        return self.profile.model_id

    def _pace(self) -> None:
        if self.profile.min_interval <= 0:
            return
        with self._lock:
            now = time.monotonic()
            wait = self._last_dispatch + self.profile.min_interval - now
            if wait > 0:
                time.sleep(wait)
                now = time.monotonic()
            self._last_dispatch = now

    def _record(self, ok: bool) -> None:
        with self._lock:
            if ok:
                self.requests_succeeded += 1
            else:
                self.requests_failed += 1


def complete_chat(handle: ModelHandle, request: ChatRequest) -> ChatResponse:
    """Send one chat request through the handle's backend."""
    if not request.user:
        raise ValueError("chat request has empty user text")
    temperature = request.temperature if request.temperature is not None else handle.profile.temperature
    top_p = request.top_p if request.top_p is not None else handle.profile.top_p
    with handle._semaphore:
        handle._pace()
        with handle._lock:
            handle.requests_started += 1
        try:
            response = handle.backend.chat(handle.profile, request, temperature, top_p)
        except Exception:
            handle._record(False)
            raise
        handle._record(True)
        return response


def embed_text(handle: ModelHandle, text: str) -> tuple[float, ...]:
    """Embed one text through the handle's backend."""
    if not text:
        raise ValueError("cannot embed empty text")
    with handle._semaphore:
        handle._pace()
        with handle._lock:
            handle.requests_started += 1
        try:
            vector = handle.backend.embed(handle.profile, text)
        except Exception:
            handle._record(False)
            raise
        handle._record(True)
        return vector


def build_handle(
    profile: ModelProfile,
    chat_script: ChatScript | None = None,
    embed_script: EmbedScript | None = None,
    client: httpx.Client | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> ModelHandle:
    """Bind a profile to its backend; scripts apply to mock profiles only."""
    if profile.backend == "mock":
        backend: Any = MockBackend(chat_script=chat_script, embed_script=embed_script)
    else:
        backend = HttpBackend(client=client, sleep=sleep)
    return ModelHandle(profile=profile, backend=backend)


def load_profiles(path: str | Path) -> dict[str, ModelProfile]:
    """Read a TOML profile file: one ``[profiles.<name>]`` table per model."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ProfileError(f"cannot read model profiles {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ProfileError(f"{path}: invalid TOML: {exc}") from exc

    tables = data.get("profiles")
    if not isinstance(tables, dict) or not tables:
        raise ProfileError(f"{path}: no [profiles.<name>] tables found")
    profiles: dict[str, ModelProfile] = {}
    for name, table in tables.items():
        if not isinstance(table, dict):
            raise ProfileError(f"{path}: profile {name} is not a table")
        known = {f for f in ModelProfile.__dataclass_fields__ if f != "name"}
        unknown = set(table) - known
        if unknown:
            raise ProfileError(f"{path}: profile {name} has unknown keys: {', '.join(sorted(unknown))}")
        try:
            profiles[name] = ModelProfile(name=name, **table)
        except TypeError as exc:
            raise ProfileError(f"{path}: profile {name}: {exc}") from exc
    return profiles


def resolve_profiles_path(explicit: str | None = None) -> Path:
    """Locate the profile file: explicit flag, then env var, then ./models.toml."""
    if explicit:
        return Path(explicit)
    env = os.environ.get(ENV_MODELS_PATH)
    if env:
        return Path(env)
    local = Path("models.toml")
    if local.exists():
        return local
    import importlib.resources

    packaged = importlib.resources.files("crrefine").joinpath("fixtures", "models.toml")
    with importlib.resources.as_file(packaged) as concrete:
        return Path(str(concrete))


def load_handle(
    profile_name: str,
    path: str | None = None,
    **kwargs: Any,
) -> ModelHandle:
    """Load one profile by name and bind it to a backend."""
    profiles = load_profiles(resolve_profiles_path(path))
    if profile_name not in profiles:
        raise ProfileError(
            f"unknown profile {profile_name!r}; available: {', '.join(sorted(profiles))}"
        )
    return build_handle(profiles[profile_name], **kwargs)
