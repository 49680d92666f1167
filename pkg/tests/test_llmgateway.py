import json
import random
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from physcodebench.llmgateway import (
    AuthenticationError,
    ChatMessage,
    ChatRequest,
    ChatResponse,
    GatewayError,
    HttpBackend,
    MalformedResponseError,
    RetriesExhaustedError,
    RetryPolicy,
    ScenarioRule,
    ScriptedBackend,
    backends_from_config,
    complete,
    digest_text,
)


def make_request(text="write a simulation", system="helper"):
    return ChatRequest(
        model="test-model",
        messages=(ChatMessage("system", system), ChatMessage("user", text)),
    )


def completion_body(content="ok"):
    return {
        "choices": [{"message": {"content": content}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": 7, "completion_tokens": 3},
    }


class _ScriptedHTTP(BaseHTTPRequestHandler):
    def do_POST(self):
        self.rfile.read(int(self.headers.get("Content-Length", 0)))
        script = self.server.script
        step = script[min(self.server.hits, len(script) - 1)]
        self.server.hits += 1
        body = json.dumps(step.get("body", {})).encode()
        self.send_response(step["status"])
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture
def http_server():
    servers = []

    def start(script):
        server = HTTPServer(("127.0.0.1", 0), _ScriptedHTTP)
        server.script = script
        server.hits = 0
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        servers.append(server)
        return server, f"http://127.0.0.1:{server.server_port}/v1/chat/completions"

    yield start
    for server in servers:
        server.shutdown()
        server.server_close()


def http_backend(url, attempts=3):
    return HttpBackend(
        name="generator",
        endpoint=url,
        model="test-model",
        retry=RetryPolicy(attempts=attempts, base_delay=0.001),
        sleeper=lambda delay: None,
        rng=random.Random(0),
    )


class TestHttpBackend:
    def test_success_first_try(self, http_server):
        server, url = http_server([{"status": 200, "body": completion_body("CODE_V1")}])
        response = complete(http_backend(url), make_request())
        assert response.content == "CODE_V1"
        assert response.finish_reason == "stop"
        assert response.usage == (7, 3)

    def test_429_then_200_succeeds_after_two_attempts(self, http_server):
        server, url = http_server([
            {"status": 429, "body": {}},
            {"status": 200, "body": completion_body("recovered")},
        ])
        backend = http_backend(url)
        response = complete(backend, make_request())
        assert response.content == "recovered"
        assert server.hits == 2
        log = backend.call_log.snapshot()
        assert len(log) == 2
        assert log[0].status == "http 429"
        assert log[1].status == "ok"

    def test_500_exhausts_retries(self, http_server):
        server, url = http_server([{"status": 500, "body": {}}])
        backend = http_backend(url, attempts=3)
        with pytest.raises(RetriesExhaustedError) as err:
            complete(backend, make_request())
        assert err.value.attempts == 3
        assert server.hits == 3
        assert len(backend.call_log) == 3

    def test_attempt_cap_never_exceeded(self, http_server):
        for cap in (1, 2, 5):
            server, url = http_server([{"status": 503, "body": {}}])
            with pytest.raises(RetriesExhaustedError):
                complete(http_backend(url, attempts=cap), make_request())
            assert server.hits == cap

    def test_auth_failure_not_retried(self, http_server):
        server, url = http_server([{"status": 401, "body": {}}])
        with pytest.raises(AuthenticationError):
            complete(http_backend(url), make_request())
        assert server.hits == 1

    def test_missing_content_is_error(self, http_server):
        server, url = http_server([{"status": 200, "body": {"choices": [{"message": {}}]}}])
        with pytest.raises(MalformedResponseError):
            complete(http_backend(url), make_request())

    def test_backoff_schedule_with_jitter_bounds(self, http_server):
        server, url = http_server([{"status": 500, "body": {}}])
        delays = []
        backend = HttpBackend(
            name="g",
            endpoint=url,
            model="m",
            retry=RetryPolicy(attempts=3, base_delay=1.0, factor=2.0, jitter=0.2),
            sleeper=delays.append,
            rng=random.Random(42),
        )
        with pytest.raises(RetriesExhaustedError):
            backend.complete(make_request())
        assert len(delays) == 2  # no sleep after the final attempt
        assert 0.8 <= delays[0] <= 1.2
        assert 1.6 <= delays[1] <= 2.4


class TestChatRequest:
    def test_empty_messages_rejected(self):
        with pytest.raises(GatewayError):
            ChatRequest(model="m", messages=())

    def test_first_non_system_must_be_user(self):
        with pytest.raises(GatewayError):
            ChatRequest(
                model="m",
                messages=(ChatMessage("system", "s"), ChatMessage("assistant", "hi")),
            )

    def test_negative_temperature_rejected(self):
        with pytest.raises(GatewayError):
            ChatRequest(model="m", messages=(ChatMessage("user", "x"),), temperature=-0.1)

    def test_response_requires_valid_finish_reason(self):
        with pytest.raises(GatewayError):
            ChatResponse(content="x", finish_reason="banana")


class TestScriptedBackend:
    def test_simple_reply(self):
        backend = ScriptedBackend("generator", [ScenarioRule(reply="CODE_V1")])
        response = complete(backend, make_request())
        assert response == ChatResponse(content="CODE_V1", finish_reason="stop")

    def test_turn_indexed_rules(self):
        backend = ScriptedBackend(
            "corrector",
            [
                ScenarioRule(reply="fix-1", turn=0),
                ScenarioRule(reply="fix-2", turn=1),
            ],
        )
        assert backend.complete(make_request()).content == "fix-1"
        assert backend.complete(make_request()).content == "fix-2"

    def test_contains_rule(self):
        backend = ScriptedBackend(
            "generator",
            [
                ScenarioRule(reply="bouncy", contains="trampoline"),
                ScenarioRule(reply="generic"),
            ],
        )
        assert backend.complete(make_request("a trampoline scene")).content == "bouncy"
        assert backend.complete(make_request("a pendulum")).content == "generic"

    def test_digest_prefix_rule(self):
        prompt = "specific prompt"
        prefix = digest_text(prompt)[:6]
        backend = ScriptedBackend("g", [ScenarioRule(reply="hit", digest_prefix=prefix)])
        assert backend.complete(make_request(prompt)).content == "hit"

    def test_role_mismatch_skips_rule(self):
        backend = ScriptedBackend(
            "refiner",
            [ScenarioRule(reply="gen-only", role="generator"), ScenarioRule(reply="fallback")],
        )
        assert backend.complete(make_request()).content == "fallback"

    def test_no_match_is_error(self):
        backend = ScriptedBackend("g", [ScenarioRule(reply="x", turn=5)])
        with pytest.raises(GatewayError, match="no scenario rule"):
            backend.complete(make_request())

    def test_bit_reproducible(self):
        def run():
            backend = ScriptedBackend(
                "g", [ScenarioRule(reply="one", turn=0), ScenarioRule(reply="two", turn=1)]
            )
            replies = [backend.complete(make_request(f"p{i}")).content for i in range(2)]
            return replies, [e.reply_digest for e in backend.call_log.snapshot()]

        assert run() == run()

    def test_scenario_file_round_trip(self, tmp_path):
        scenario = tmp_path / "scenario.yaml"
        scenario.write_text(
            "rules:\n"
            "  - reply: from-file\n"
            "    turn: 0\n"
        )
        backend = ScriptedBackend.from_file(scenario, name="generator")
        assert backend.complete(make_request()).content == "from-file"


class TestConfig:
    def test_mixed_backends(self, tmp_path):
        (tmp_path / "sc.yaml").write_text("rules:\n  - reply: mocked\n")
        config = {
            "generator": {
                "kind": "http",
                "endpoint": "http://example.invalid/v1/chat/completions",
                "model": "m1",
                "api_key_env": "TEST_KEY",
                "attempts": 2,
            },
            "corrector": {"kind": "mock", "scenario": "sc.yaml"},
            "refiner": {"kind": "mock", "rules": [{"reply": "inline"}]},
        }
        backends = backends_from_config(config, base_dir=tmp_path)
        assert isinstance(backends["generator"], HttpBackend)
        assert backends["generator"].retry.attempts == 2
        assert backends["corrector"].complete(make_request()).content == "mocked"
        assert backends["refiner"].complete(make_request()).content == "inline"

    def test_unknown_kind_rejected(self):
        with pytest.raises(GatewayError):
            backends_from_config({"g": {"kind": "carrier-pigeon"}})
