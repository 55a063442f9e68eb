import json
import threading
from dataclasses import replace
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from draftrl.backend import (BackendConfig, BackendUnavailable, FormatRejected, llm_generate,
                             make_sampler)
from draftrl.config import TrainingConfig
from draftrl.env import ChainSpec, generate_suite, make_query
from draftrl.orchestrator import TrainerState, run_iteration
from draftrl.policy import make_hints

Q = make_query(5, ChainSpec(3, (("add", 4), ("mul", 2))))
VALID = "step: apply add 4 get 7\nstep: apply mul 2 get 14\n#### 14"
TOO_LONG = "step: first we apply add 4 get 7\n#### 7"


class Mock:
    """Tiny chat-completion server; ``replies`` is a list of (status, content)."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.requests = []
        mock = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                mock.requests.append((body, self.headers.get("Authorization")))
                status, content = mock.replies[min(len(mock.requests), len(mock.replies)) - 1]
                data = json.dumps({"choices": [{"message": {"role": "assistant",
                                                            "content": content}}]}).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def url(self):
        return f"http://127.0.0.1:{self.server.server_address[1]}/v1/chat/completions"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


HINT = make_hints(3)[1]


def test_round_trip_and_request_shape(monkeypatch):
    monkeypatch.setenv("DRAFTRL_API_KEY", "sk-test")
    with Mock([(200, VALID)]) as m:
        cfg = BackendConfig(m.url, model="toy", timeout=5)
        d = llm_generate(cfg, Q, [], HINT, 0.35, agent_id=2, draft_index=1)
    assert d.step_texts == ["apply add 4 get 7", "apply mul 2 get 14"]
    assert d.answer == "14" and d.ref == (2, 1)
    assert d.meta.temperature == 0.35 and d.meta.strategy_id == 1
    body, auth = m.requests[0]
    assert auth == "Bearer sk-test"
    assert body["model"] == "toy" and body["temperature"] == 0.35
    system, user = body["messages"][0]["content"], body["messages"][1]["content"]
    assert "at most 5 words" in system and "####" in system
    assert Q.prompt in user and HINT.description in user


def test_history_and_temperature_override():
    with Mock([(200, VALID)]) as m:
        cfg = BackendConfig(m.url, temperature=0.9)
        first = llm_generate(cfg, Q, [], HINT, 0.2)
        llm_generate(cfg, Q, [first], HINT, 0.2)
    assert m.requests[1][0]["temperature"] == 0.9
    assert "step: apply mul 2 get 14" in m.requests[1][0]["messages"][1]["content"]


def test_invalid_draft_retried_then_accepted():
    with Mock([(200, TOO_LONG), (200, VALID)]) as m:
        d = llm_generate(BackendConfig(m.url, max_retries=1), Q, [], HINT, 0.5)
    assert len(m.requests) == 2 and d.answer == "14"


def test_format_rejected_after_retries():
    with Mock([(200, TOO_LONG)]) as m:
        with pytest.raises(FormatRejected) as info:
            llm_generate(BackendConfig(m.url, max_retries=2), Q, [], HINT, 0.5)
    assert len(m.requests) == 3
    assert info.value.text == TOO_LONG


def test_unparseable_reply_rejected():
    with Mock([(200, "just the answer 14")]) as m:
        with pytest.raises(FormatRejected):
            llm_generate(BackendConfig(m.url, max_retries=0), Q, [], HINT, 0.5)


def test_non_2xx_is_unavailable():
    with Mock([(503, "")]) as m:
        with pytest.raises(BackendUnavailable, match="503"):
            llm_generate(BackendConfig(m.url, max_retries=1), Q, [], HINT, 0.5)
    assert len(m.requests) == 2


def test_unreachable_endpoint():
    with pytest.raises(BackendUnavailable):
        llm_generate(BackendConfig("http://127.0.0.1:9/none", timeout=1, max_retries=0), Q, [],
                     HINT, 0.5)


def test_config_invariants():
    with pytest.raises(ValueError):
        BackendConfig("http://x", timeout=0)
    with pytest.raises(ValueError):
        BackendConfig("http://x", max_retries=-1)


def test_trainer_with_backend_skips_policy_update():
    suite = generate_suite(2, depth=2, seed=3)
    replies = []
    for q in suite:
        vals = q.payload.intermediates()
        steps = [f"step: apply {op} {x} get {v}" for (op, x), v in zip(q.payload.ops, vals)]
        replies.append("\n".join(steps + [f"#### {vals[-1]}"]))
    with Mock([(200, replies[0])]) as m:
        cfg = replace(TrainingConfig(num_agents=2, drafts_per_query=2), workers=2)
        state = TrainerState.initial(cfg)
        state.sampler = make_sampler(BackendConfig(m.url, max_concurrency=2))
        before = [a.theta.version for a in state.agents]
        metrics = run_iteration(state, suite[:1])
    assert len(m.requests) == 4  # 1 query x 2 agents x 2 drafts
    assert [a.theta.version for a in state.agents] == before
    assert metrics.mean_task_reward == 1.0
    assert state.phi.version > 0
