import json
import math

import httpx
import pytest

from tlvr.automaton import DetectionMatrix
from tlvr.clients import (
    Answerer,
    ChatClient,
    ChatMessage,
    ChatReply,
    ChatRequest,
    DetectorError,
    FixtureDetector,
    FixtureTranslator,
    FrameWindow,
    RemoteDetector,
    RemoteTranslator,
    ResponseCache,
    StaticChatClient,
    TranslationError,
    TransportError,
    answer_matches,
    canonical_fingerprint,
    extract_choice_index,
    parse_translation_reply,
    yes_no_probability,
)
from tlvr.logic import And, Atom, Eventually, PropositionSet


def make_reply_payload(text, top_logprobs=None):
    logprobs = None
    if top_logprobs is not None:
        logprobs = {
            "content": [
                {"top_logprobs": [{"token": t, "logprob": lp} for t, lp in top_logprobs]}
            ]
        }
    return {"choices": [{"message": {"content": text}, "logprobs": logprobs}]}


def make_client(handler, cache=None, retries=3, backoff=0.0):
    transport = httpx.MockTransport(handler)
    return ChatClient(
        endpoint="http://fake.test/v1",
        api_key="k",
        model="test-model",
        retries=retries,
        backoff=backoff,
        cache=cache,
        transport=transport,
    )


def test_chat_client_roundtrip_and_payload_shape():
    seen = {}

    def handler(request):
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json=make_reply_payload("hello"))

    client = make_client(handler)
    reply = client.complete(
        ChatRequest(model="m", messages=(ChatMessage("user", "hi"),), want_logprobs=True)
    )
    assert reply.text == "hello"
    assert seen["body"]["model"] == "m"
    assert seen["body"]["logprobs"] is True
    assert seen["body"]["messages"] == [{"role": "user", "content": "hi"}]


def test_chat_client_retries_then_fails():
    calls = {"n": 0}

    def handler(request):
        calls["n"] += 1
        return httpx.Response(500, json={"error": "boom"})

    client = make_client(handler, retries=3)
    with pytest.raises(TransportError):
        client.complete(ChatRequest(model="m", messages=(ChatMessage("user", "hi"),)))
    assert calls["n"] == 3


def test_chat_client_recovers_after_transient_error():
    calls = {"n": 0}

    def handler(request):
        calls["n"] += 1
        if calls["n"] == 1:
            return httpx.Response(503, json={})
        return httpx.Response(200, json=make_reply_payload("ok"))

    client = make_client(handler)
    assert client.complete(
        ChatRequest(model="m", messages=(ChatMessage("user", "hi"),))
    ).text == "ok"


def test_cache_hits_skip_network(tmp_path):
    calls = {"n": 0}

    def handler(request):
        calls["n"] += 1
        return httpx.Response(200, json=make_reply_payload("cached"))

    cache = ResponseCache(tmp_path)
    client = make_client(handler, cache=cache)
    request = ChatRequest(model="m", messages=(ChatMessage("user", "hi"),))
    assert client.complete(request).text == "cached"
    assert client.complete(request).text == "cached"
    assert calls["n"] == 1


def test_cache_disabled_makes_two_calls(tmp_path):
    calls = {"n": 0}

    def handler(request):
        calls["n"] += 1
        return httpx.Response(200, json=make_reply_payload("x"))

    client = make_client(handler, cache=None)
    request = ChatRequest(model="m", messages=(ChatMessage("user", "hi"),))
    client.complete(request)
    client.complete(request)
    assert calls["n"] == 2


def test_cache_key_ignores_prompt_whitespace():
    a = ChatRequest(model="m", messages=(ChatMessage("user", "hello   world"),))
    b = ChatRequest(model="m", messages=(ChatMessage("user", " hello world "),))
    c = ChatRequest(model="m", messages=(ChatMessage("user", "hello worlds"),))
    assert canonical_fingerprint(a) == canonical_fingerprint(b)
    assert canonical_fingerprint(a) != canonical_fingerprint(c)


def test_corrupt_cache_entry_is_a_miss(tmp_path):
    cache = ResponseCache(tmp_path)
    key = "ab" + "0" * 62
    cache.put(key, {"text": "fine", "first_token_alternatives": []})
    cache._path(key).write_text("{not json", encoding="utf-8")
    assert cache.get(key) is None


def test_yes_no_probability_from_logprobs():
    reply = ChatReply(text="Yes", first_token_alternatives=(("Yes", 0.0), ("No", -2.0)))
    assert yes_no_probability(reply) == pytest.approx(1.0 / (1.0 + math.exp(-2.0)))
    even = ChatReply(text="Yes", first_token_alternatives=(("Yes", -1.0), ("No", -1.0)))
    assert yes_no_probability(even) == pytest.approx(0.5)


def test_yes_no_probability_fallback_without_logprobs():
    assert yes_no_probability(ChatReply(text="Yes, it is.")) == 0.99
    assert yes_no_probability(ChatReply(text="No.")) == 0.01
    with pytest.raises(DetectorError):
        yes_no_probability(ChatReply(text="maybe"))


def test_remote_detector_parses_logprobs():
    def handler(request):
        return httpx.Response(
            200,
            json=make_reply_payload("Yes", top_logprobs=[("Yes", -0.1), ("No", -2.4)]),
        )

    detector = RemoteDetector(make_client(handler), model="m")
    props = PropositionSet.from_texts(["a cat sits"])
    p = detector.detect(props[0], FrameWindow(index=0, frames=("/dev/null",)))
    expected = math.exp(-0.1) / (math.exp(-0.1) + math.exp(-2.4))
    assert p == pytest.approx(expected)


def test_remote_detector_requires_frames():
    detector = RemoteDetector(StaticChatClient(["Yes"]))
    props = PropositionSet.from_texts(["a"])
    with pytest.raises(DetectorError):
        detector.detect(props[0], FrameWindow(index=0))


def test_fixture_detector_returns_matrix_entry():
    matrix = DetectionMatrix([[0.7, 0.2]], window_size=2, stride=2, fps=3.0)
    props = PropositionSet.from_texts(["a", "b"])
    detector = FixtureDetector(matrix, props)
    assert detector.detect(props[0], FrameWindow(index=0)) == 0.7
    assert detector.detect(props[1], FrameWindow(index=0)) == 0.2


def test_fixture_detector_dimension_check():
    matrix = DetectionMatrix([[0.7]], window_size=2, stride=2, fps=3.0)
    with pytest.raises(DetectorError):
        FixtureDetector(matrix, PropositionSet.from_texts(["a", "b"]))


GOOD_REPLY = """PROPOSITIONS:
p0: woman pours hot water over granola
p1: woman spoons yogurt into bowl
p2: woman places topping
FORMULA:
("p0" & "p1") & F "p2"
"""


def test_parse_translation_reply():
    props, formula_text = parse_translation_reply(GOOD_REPLY)
    assert len(props) == 3
    assert formula_text == '("p0" & "p1") & F "p2"'


def test_remote_translator_happy_path():
    translator = RemoteTranslator(StaticChatClient([GOOD_REPLY]))
    props, formula = translator.translate("a cooking question")
    assert props.texts[2] == "woman places topping"
    assert formula == And(And(Atom(0), Atom(1)), Eventually(Atom(2)))


def test_remote_translator_reprompts_once_then_fails():
    bad = "FORMULA:\np0 &&& p1"
    client = StaticChatClient([bad, bad])
    translator = RemoteTranslator(client)
    with pytest.raises(TranslationError):
        translator.translate("q?")
    assert len(client.requests) == 2
    assert "could not be parsed" in client.requests[1].messages[-1].text


def test_remote_translator_recovers_on_reprompt():
    bad = "PROPOSITIONS:\np0: a\nFORMULA:\n\"p0\" $ \"p0\""
    client = StaticChatClient([bad, 'PROPOSITIONS:\np0: a\nFORMULA:\n"p0"'])
    translator = RemoteTranslator(client)
    props, formula = translator.translate("q?")
    assert formula == Atom(0)


def test_remote_translator_rejects_empty_question():
    with pytest.raises(TranslationError):
        RemoteTranslator(StaticChatClient([])).translate("   ")


def test_fixture_translator_roundtrip():
    from tlvr.logic import Until

    props = PropositionSet.from_texts(["a", "b"])
    translator = FixtureTranslator(props, '"a" U "b"')
    got_props, formula = translator.translate("irrelevant")
    assert got_props is props
    assert formula == Until(Atom(0), Atom(1))


def test_extract_choice_index():
    assert extract_choice_index("B", 4) == 1
    assert extract_choice_index("The answer is (C).", 4) == 2
    assert extract_choice_index("no letter here", 4) is None
    assert extract_choice_index("Z", 4) is None


def test_answerer_and_match():
    answerer = Answerer(StaticChatClient(["The answer is (C)."]))
    index, raw = answerer.answer("q?", ["w", "x", "y", "z"], frames=())
    assert index == 2
    assert "C" in raw
    assert answer_matches(index, 2)
    assert not answer_matches(None, 2)


def test_answerer_abstains_on_unparseable():
    answerer = Answerer(StaticChatClient(["mumble mumble"]))
    index, raw = answerer.answer("q?", ["w", "x"], frames=())
    assert index is None
