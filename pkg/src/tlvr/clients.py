"""Wire clients for translation, proposition detection, and answering.

Remote handles speak the OpenAI-compatible chat-completions JSON protocol;
fixture handles serve canned data so the whole symbolic pipeline runs offline.
A content-addressed cache makes repeated remote calls free.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import math
import os
import re
import threading
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import httpx

from .automaton import DetectionMatrix
from .logic import (
    FormulaError,
    Proposition,
    PropositionSet,
    TLFormula,
    parse_tl,
)

logger = logging.getLogger(__name__)

ENV_ENDPOINT = "TLVR_ENDPOINT"
ENV_API_KEY = "TLVR_API_KEY"
ENV_MODEL = "TLVR_MODEL"
ENV_CACHE_DIR = "TLVR_CACHE_DIR"

# Used when the provider returns no log-probabilities.
YES_FALLBACK = 0.99
NO_FALLBACK = 0.01


class ClientError(Exception):
    pass


class TransportError(ClientError):
    """Request could not be completed after the configured retries."""


class TranslationError(ClientError):
    pass


class DetectorError(ClientError):
    pass


def load_prompt(name: str) -> str:
    return resources.files("tlvr").joinpath("prompts", name).read_text(encoding="utf-8")


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant
    text: str
    images: tuple[str, ...] = ()

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"bad role {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[ChatMessage, ...]
    want_logprobs: bool = False
    max_tokens: int = 512
    temperature: float = 0.0


@dataclass(frozen=True)
class ChatReply:
    text: str
    # (token, logprob) alternatives for the first generated token
    first_token_alternatives: tuple[tuple[str, float], ...] = ()


def canonical_fingerprint(request: ChatRequest) -> str:
    """Cache key: sha-256 of the request with prompt whitespace collapsed."""
    payload = {
        "model": request.model,
        "messages": [
            {"role": m.role, "text": " ".join(m.text.split()), "images": list(m.images)}
            for m in request.messages
        ],
        "want_logprobs": request.want_logprobs,
        "max_tokens": request.max_tokens,
        "temperature": request.temperature,
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ResponseCache:
    """Content-addressed reply store: one JSON file per request digest."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.directory / key[:2] / f"{key}.json"

    def get(self, key: str) -> dict | None:
        path = self._path(key)
        if not path.exists():
            return None
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except (json.JSONDecodeError, OSError) as exc:
            logger.warning("corrupt cache entry %s treated as miss: %s", path, exc)
            return None

    def put(self, key: str, value: dict) -> None:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(value, sort_keys=True), encoding="utf-8")
        os.replace(tmp, path)


def _reply_to_dict(reply: ChatReply) -> dict:
    return {
        "text": reply.text,
        "first_token_alternatives": [[t, lp] for t, lp in reply.first_token_alternatives],
    }


def _reply_from_dict(data: dict) -> ChatReply:
    return ChatReply(
        text=data["text"],
        first_token_alternatives=tuple(
            (t, float(lp)) for t, lp in data.get("first_token_alternatives", [])
        ),
    )


def _encode_image(path: str) -> dict:
    data = base64.b64encode(Path(path).read_bytes()).decode("ascii")
    suffix = Path(path).suffix.lstrip(".") or "jpeg"
    return {
        "type": "image_url",
        "image_url": {"url": f"data:image/{suffix};base64,{data}"},
    }


class ChatClient:
    """OpenAI-compatible chat-completions client with retries and caching.

    Endpoint, API key, and default model come from TLVR_ENDPOINT,
    TLVR_API_KEY, and TLVR_MODEL unless given explicitly.
    """

    def __init__(self, endpoint: str | None = None, api_key: str | None = None,
                 model: str | None = None, retries: int = 3, backoff: float = 0.5,
                 timeout: float = 120.0, max_inflight: int = 4,
                 cache: ResponseCache | None = None,
                 transport: httpx.BaseTransport | None = None):
        self.endpoint = (endpoint or os.environ.get(ENV_ENDPOINT, "")).rstrip("/")
        self.api_key = api_key or os.environ.get(ENV_API_KEY, "")
        self.model = model or os.environ.get(ENV_MODEL, "")
        self.retries = retries
        self.backoff = backoff
        self.cache = cache
        self._inflight = threading.Semaphore(max_inflight)
        self._http = httpx.Client(timeout=timeout, transport=transport)

    def close(self) -> None:
        self._http.close()

    def complete(self, request: ChatRequest) -> ChatReply:
        key = canonical_fingerprint(request)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return _reply_from_dict(hit)
        reply = self._send(request)
        if self.cache is not None:
            self.cache.put(key, _reply_to_dict(reply))
        return reply

    def _send(self, request: ChatRequest) -> ChatReply:
        if not self.endpoint:
            raise TransportError(
                f"no endpoint configured (set {ENV_ENDPOINT} or pass endpoint=...)"
            )
        body = self._body(request)
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        url = f"{self.endpoint}/chat/completions"
        last_error: Exception | None = None
        for attempt in range(1, self.retries + 1):
            try:
                with self._inflight:
                    response = self._http.post(url, json=body, headers=headers)
                if response.status_code >= 500:
                    raise httpx.HTTPStatusError(
                        f"server error {response.status_code}",
                        request=response.request,
                        response=response,
                    )
                response.raise_for_status()
                return self._parse(response.json())
            except (httpx.HTTPError, ValueError, KeyError) as exc:
                last_error = exc
                logger.warning("chat attempt %d/%d failed: %s", attempt, self.retries, exc)
                if attempt < self.retries:
                    time.sleep(self.backoff * 2 ** (attempt - 1))
        raise TransportError(f"chat request failed after {self.retries} attempts: {last_error}")

    def _body(self, request: ChatRequest) -> dict:
        messages = []
        for m in request.messages:
            if m.images:
                content: list[dict] = [{"type": "text", "text": m.text}]
                content.extend(_encode_image(p) for p in m.images)
                messages.append({"role": m.role, "content": content})
            else:
                messages.append({"role": m.role, "content": m.text})
        body = {
            "model": request.model or self.model,
            "messages": messages,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        }
        if request.want_logprobs:
            body["logprobs"] = True
            body["top_logprobs"] = 5
        return body

    @staticmethod
    def _parse(data: dict) -> ChatReply:
        choice = data["choices"][0]
        text = choice["message"]["content"] or ""
        if not text:
            raise ValueError("empty reply text")
        alternatives: tuple[tuple[str, float], ...] = ()
        logprobs = choice.get("logprobs") or {}
        content = logprobs.get("content") or []
        if content:
            top = content[0].get("top_logprobs") or []
            alternatives = tuple((alt["token"], float(alt["logprob"])) for alt in top)
        return ChatReply(text=text, first_token_alternatives=alternatives)


class StaticChatClient:
    """Fixture chat handle replaying a scripted list of replies."""

    def __init__(self, replies: list[ChatReply | str]):
        self._replies = [
            r if isinstance(r, ChatReply) else ChatReply(text=r) for r in replies
        ]
        self.requests: list[ChatRequest] = []

    def complete(self, request: ChatRequest) -> ChatReply:
        self.requests.append(request)
        if not self._replies:
            raise TransportError("fixture ran out of scripted replies")
        return self._replies.pop(0)

    def close(self) -> None:
        pass


# --- question -> temporal logic --------------------------------------------

_PROP_LINE_RE = re.compile(r"^p(\d+):\s*(.+?)\s*$")


def parse_translation_reply(text: str) -> tuple[PropositionSet, str]:
    """Parse the constrained PROPOSITIONS/FORMULA reply format."""
    lines = [line.strip() for line in text.strip().splitlines() if line.strip()]
    try:
        prop_start = lines.index("PROPOSITIONS:")
        formula_start = lines.index("FORMULA:")
    except ValueError:
        raise TranslationError("reply lacks PROPOSITIONS:/FORMULA: sections") from None
    if formula_start <= prop_start:
        raise TranslationError("FORMULA: section must follow PROPOSITIONS:")
    texts: list[str] = []
    for line in lines[prop_start + 1 : formula_start]:
        match = _PROP_LINE_RE.match(line)
        if match is None:
            raise TranslationError(f"bad proposition line {line!r}")
        if int(match.group(1)) != len(texts):
            raise TranslationError(f"proposition ids must be dense, got {line!r}")
        texts.append(match.group(2))
    if not texts:
        raise TranslationError("no propositions in reply")
    formula_text = " ".join(lines[formula_start + 1 :])
    if not formula_text:
        raise TranslationError("no formula in reply")
    try:
        props = PropositionSet.from_texts(texts)
    except ValueError as exc:
        raise TranslationError(str(exc)) from exc
    return props, formula_text


class RemoteTranslator:
    """Question-to-temporal-logic via the chat protocol, one retry on bad parses."""

    def __init__(self, client, model: str = ""):
        self.client = client
        self.model = model
        self.system_prompt = load_prompt("q2tl_system.txt")

    def translate(self, question: str) -> tuple[PropositionSet, TLFormula]:
        if not question.strip():
            raise TranslationError("question must be non-empty")
        messages = [
            ChatMessage("system", self.system_prompt),
            ChatMessage("user", question),
        ]
        reply = self.client.complete(ChatRequest(model=self.model, messages=tuple(messages)))
        try:
            return self._parse(reply.text)
        except (TranslationError, FormulaError) as exc:
            logger.warning("translation reply rejected (%s); reprompting once", exc)
            retry_messages = messages + [
                ChatMessage("assistant", reply.text),
                ChatMessage(
                    "user",
                    f"Your reply could not be parsed: {exc}. "
                    "Reply again using exactly the required structure.",
                ),
            ]
            retry = self.client.complete(
                ChatRequest(model=self.model, messages=tuple(retry_messages))
            )
            try:
                return self._parse(retry.text)
            except (TranslationError, FormulaError) as exc2:
                raise TranslationError(f"unparseable after retry: {exc2}") from exc2

    @staticmethod
    def _parse(text: str) -> tuple[PropositionSet, TLFormula]:
        props, formula_text = parse_translation_reply(text)
        return props, parse_tl(formula_text, props)


class FixtureTranslator:
    """Canned (propositions, formula) pair for offline runs."""

    def __init__(self, props: PropositionSet, formula_text: str):
        self.props = props
        self.formula = parse_tl(formula_text, props)

    def translate(self, question: str) -> tuple[PropositionSet, TLFormula]:
        return self.props, self.formula


# --- proposition detection --------------------------------------------------

@dataclass(frozen=True)
class FrameWindow:
    """One detection window: its index and the frame images backing it."""

    index: int
    start_frame: int = 0
    frames: tuple[str, ...] = ()


_YES_RE = re.compile(r"^\W*yes\b", re.IGNORECASE)
_NO_RE = re.compile(r"^\W*no\b", re.IGNORECASE)


def _token_is(token: str, word: str) -> bool:
    return token.strip().strip('".,!?:;()').lower() == word


def yes_no_probability(reply: ChatReply) -> float:
    """Two-way softmax over the first token's Yes/No log-probabilities.

    Falls back to 0.99/0.01 when the provider returned no alternatives.
    """
    lp_yes = None
    lp_no = None
    for token, lp in reply.first_token_alternatives:
        if lp_yes is None and _token_is(token, "yes"):
            lp_yes = lp
        elif lp_no is None and _token_is(token, "no"):
            lp_no = lp
    if lp_yes is not None and lp_no is not None:
        e_yes = math.exp(lp_yes)
        return e_yes / (e_yes + math.exp(lp_no))
    if _YES_RE.match(reply.text):
        return YES_FALLBACK
    if _NO_RE.match(reply.text):
        return NO_FALLBACK
    raise DetectorError(f"reply lacks a Yes/No verdict: {reply.text!r}")


class RemoteDetector:
    """Binary visibility question per proposition, scored from Yes/No logits."""

    def __init__(self, client, model: str = ""):
        self.client = client
        self.model = model
        self.prompt_template = load_prompt("detect.txt")

    def detect(self, prop: Proposition, window: FrameWindow) -> float:
        if not window.frames:
            raise DetectorError("detection needs at least one frame")
        prompt = self.prompt_template.format(proposition=prop.text)
        request = ChatRequest(
            model=self.model,
            messages=(ChatMessage("user", prompt, images=window.frames),),
            want_logprobs=True,
            max_tokens=4,
        )
        return yes_no_probability(self.client.complete(request))


class FixtureDetector:
    """Serves a preloaded detection matrix instead of calling a model."""

    def __init__(self, matrix: DetectionMatrix, props: PropositionSet | None = None):
        if props is not None and len(props) != matrix.n_props:
            raise DetectorError(
                f"fixture matrix has {matrix.n_props} columns for {len(props)} propositions"
            )
        self.matrix = matrix

    def detect(self, prop: Proposition, window: FrameWindow) -> float:
        if not 0 <= window.index < self.matrix.n_windows:
            raise DetectorError(f"window {window.index} outside fixture matrix")
        return float(self.matrix.scores[window.index, prop.id])


# --- answering ---------------------------------------------------------------

_LETTER_RE = re.compile(r"\b([A-Ha-h])\b")


def extract_choice_index(reply_text: str, n_choices: int) -> int | None:
    """Tolerant option-letter extraction; None means abstention."""
    match = _LETTER_RE.search(reply_text)
    if match is None:
        return None
    index = ord(match.group(1).upper()) - ord("A")
    if index >= n_choices:
        return None
    return index


def answer_matches(predicted: int | None, truth: int) -> bool:
    return predicted is not None and predicted == truth


class Answerer:
    """Multiple-choice answering over a trimmed set of frames."""

    def __init__(self, client, model: str = ""):
        self.client = client
        self.model = model
        self.prompt_template = load_prompt("answer.txt")

    def answer(self, question: str, choices: list[str],
               frames: tuple[str, ...]) -> tuple[int | None, str]:
        if len(choices) < 2:
            raise ClientError("need at least 2 answer choices")
        options = "\n".join(
            f"{chr(ord('A') + i)}. {choice}" for i, choice in enumerate(choices)
        )
        prompt = self.prompt_template.format(question=question, options=options)
        request = ChatRequest(
            model=self.model,
            messages=(ChatMessage("user", prompt, images=frames),),
            max_tokens=16,
        )
        reply = self.client.complete(request)
        return extract_choice_index(reply.text, len(choices)), reply.text


def default_cache(no_cache: bool = False) -> ResponseCache | None:
    if no_cache:
        return None
    directory = os.environ.get(ENV_CACHE_DIR) or Path.home() / ".cache" / "tlvr"
    return ResponseCache(directory)
