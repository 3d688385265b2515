"""LLM client conformance against a local chat-completions stub."""

import pytest

from bundlesup.annotate import AnnotationCache, AnnotationConfigError, annotate_all, build_prompt
from bundlesup.graphs import NodeTable
from bundlesup.llm import REASK_SUFFIX, LlmEndpointConfig, annotate_llm
from bundlesup.sampling import Bundle

from llm_stub import ChatStub

CLASSES = ["Agents", "Databases", "Information Retrieval"]


def make_prompt(bundle_id=0):
    table = NodeTable(n=2, class_names=CLASSES, texts=["alpha text", "beta text"])
    return build_prompt(Bundle(id=bundle_id, core=0, members=[0, 1]), table, "Test items.")


def endpoint(url, **kw):
    defaults = dict(base_url=url, model="stub-model", api_key_env_var="STUB_KEY", max_retries=2)
    defaults.update(kw)
    return LlmEndpointConfig(**defaults)


@pytest.fixture(autouse=True)
def api_key(monkeypatch):
    monkeypatch.setenv("STUB_KEY", "sekrit")


def test_happy_path_single_attempt():
    with ChatStub(["Databases"]) as stub:
        rec = annotate_llm(make_prompt(), endpoint(stub.base_url), AnnotationCache(), CLASSES)
    assert rec.label == 1
    assert rec.attempts == 1
    assert rec.error is None
    assert stub.requests[0]["path"].endswith("/chat/completions")
    assert stub.requests[0]["auth"] == "Bearer sekrit"
    body = stub.requests[0]["body"]
    assert body["temperature"] == 0
    assert body["messages"][0]["role"] == "system"
    assert body["messages"][1]["content"] == make_prompt().text


def test_cache_hit_issues_no_request():
    cache = AnnotationCache()
    prompt = make_prompt()
    with ChatStub(["Databases"]) as stub:
        first = annotate_llm(prompt, endpoint(stub.base_url), cache, CLASSES)
        again = annotate_llm(prompt, endpoint(stub.base_url), cache, CLASSES)
        assert len(stub.requests) == 1
    assert again == first


def test_retry_on_unparseable_with_reask_suffix():
    with ChatStub(["hmm, not sure", "still thinking", "Agents"]) as stub:
        rec = annotate_llm(make_prompt(), endpoint(stub.base_url), AnnotationCache(), CLASSES)
        assert rec.label == 0
        assert rec.attempts == 3
        assert not stub.requests[0]["body"]["messages"][1]["content"].endswith(REASK_SUFFIX)
        for req in stub.requests[1:]:
            assert req["body"]["messages"][1]["content"].endswith(REASK_SUFFIX)


def test_exhausted_retries_marks_failure():
    with ChatStub(["gibberish"]) as stub:
        rec = annotate_llm(make_prompt(), endpoint(stub.base_url), AnnotationCache(), CLASSES)
        assert len(stub.requests) == 3  # 1 + max_retries
    assert rec.label is None
    assert rec.attempts == 3
    assert rec.error.startswith("parse:")


def test_transport_error_retried_then_recorded():
    with ChatStub([500, 500, 500]) as stub:
        rec = annotate_llm(make_prompt(), endpoint(stub.base_url), AnnotationCache(), CLASSES)
        assert len(stub.requests) == 3
    assert rec.label is None
    assert rec.error.startswith("transport:")


def test_transport_error_then_recovery():
    with ChatStub([500, "Information Retrieval"]) as stub:
        rec = annotate_llm(make_prompt(), endpoint(stub.base_url), AnnotationCache(), CLASSES)
    assert rec.label == 2
    assert rec.attempts == 2


def test_missing_api_key(monkeypatch):
    monkeypatch.delenv("STUB_KEY", raising=False)
    with ChatStub(["Databases"]) as stub:
        with pytest.raises(AnnotationConfigError, match="STUB_KEY"):
            annotate_llm(make_prompt(), endpoint(stub.base_url), AnnotationCache(), CLASSES)


def test_failure_record_cached_for_idempotent_rerun(tmp_path):
    path = tmp_path / "cache.jsonl"
    prompt = make_prompt()
    with ChatStub(["??"]) as stub:
        first = annotate_llm(prompt, endpoint(stub.base_url), AnnotationCache(path), CLASSES)
        n_requests = len(stub.requests)
        again = annotate_llm(prompt, endpoint(stub.base_url), AnnotationCache(path), CLASSES)
        assert len(stub.requests) == n_requests
    assert first.label is None
    assert again.to_json() == first.to_json()


def test_annotate_all_llm_path(tmp_path):
    table = NodeTable(
        n=4,
        class_names=CLASSES,
        texts=["a_text", "b_text", "c_text", "d_text"],
    )
    bundles = [
        Bundle(id=0, core=0, members=[0, 1]),
        Bundle(id=1, core=2, members=[2, 3]),
    ]
    cfg_kwargs = dict(parallelism=1, max_retries=0)
    with ChatStub(["Agents", "no clue"]) as stub:
        summary = annotate_all(
            bundles,
            table,
            llm=endpoint(stub.base_url, **cfg_kwargs),
            cache=AnnotationCache(tmp_path / "c.jsonl"),
            dataset_description="Things.",
        )
    assert summary.n_labeled == 1 and summary.n_failed == 1
    assert bundles[0].label == 0
    assert bundles[1].label is None
