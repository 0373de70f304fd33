"""Stub-server conformance tests for the chat-completions HTTP backend.

Everything runs against a loopback HTTP server; the suite makes no
external network calls.
"""

import time

import pytest

from bimanual_icl.errors import RequestTimeoutError, TransportError
from bimanual_icl.gateway import ChatRequest, HttpBackend


def backend_for(server, **kwargs):
    url = f"http://127.0.0.1:{server.server_address[1]}/v1/chat/completions"
    defaults = dict(model="test-model", api_key_env="STUB_CHAT_KEY", timeout=5.0)
    defaults.update(kwargs)
    return HttpBackend(url, **defaults)


REQ = ChatRequest(system="be brief", user="{'a': [1, 2, 3]}>", temperature=0.7, tag="leader")


class TestRequestMapping:
    def test_body_fields_and_response_path(self, stub_server, monkeypatch):
        monkeypatch.setenv("STUB_CHAT_KEY", "sk-stub-123")
        backend = backend_for(stub_server)
        text = backend(REQ)
        assert text == "[[1, 2, 3, 4, 5, 6, 1]]"
        sent = stub_server.requests[0]
        assert sent["path"] == "/v1/chat/completions"
        assert sent["content_type"] == "application/json"
        assert sent["body"]["model"] == "test-model"
        assert sent["body"]["temperature"] == 0.7
        assert sent["body"]["messages"] == [
            {"role": "system", "content": "be brief"},
            {"role": "user", "content": "{'a': [1, 2, 3]}>"},
        ]

    def test_bearer_auth_header_from_env(self, stub_server, monkeypatch):
        monkeypatch.setenv("STUB_CHAT_KEY", "sk-stub-123")
        backend_for(stub_server)(REQ)
        assert stub_server.requests[0]["auth"] == "Bearer sk-stub-123"

    def test_no_auth_header_without_key(self, stub_server, monkeypatch):
        monkeypatch.delenv("STUB_CHAT_KEY", raising=False)
        backend_for(stub_server)(REQ)
        assert stub_server.requests[0]["auth"] is None


class TestFailureModes:
    def test_http_error_propagates(self, stub_server):
        stub_server.mode = "error"
        with pytest.raises(TransportError, match="503"):
            backend_for(stub_server)(REQ)

    def test_timeout_raises_with_elapsed(self, stub_server):
        stub_server.mode = "slow"
        backend = backend_for(stub_server, timeout=0.2)
        started = time.perf_counter()
        with pytest.raises(RequestTimeoutError) as excinfo:
            backend(REQ)
        elapsed = time.perf_counter() - started
        assert elapsed < 0.9  # honored the deadline, not the slow handler
        assert excinfo.value.elapsed_ms is not None
        assert excinfo.value.elapsed_ms >= 150

    def test_malformed_response_is_transport_error(self, stub_server):
        stub_server.mode = "malformed"
        with pytest.raises(TransportError, match="malformed"):
            backend_for(stub_server)(REQ)

    def test_connection_refused(self):
        backend = HttpBackend("http://127.0.0.1:9/v1/chat/completions", model="m",
                              timeout=0.5)
        with pytest.raises(TransportError):
            backend(REQ)
