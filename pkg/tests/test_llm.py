"""
Tests for the chat-completion engine and the script environment
"""
import json
import subprocess
from unittest.mock import patch

import httpx
import pytest

from pymcgs.core.config import RunConfig
from pymcgs.core.engine import EnsembleMember, ProposalRequest, ReferencePayload, ReviewStatus
from pymcgs.core.errors import EngineFailure
from pymcgs.core.graph import ExecState, OperatorKind, SolutionPayload
from pymcgs.core.knowledge import KnowledgeEntry, KnowledgeLevel
from pymcgs.core.llm import LLMEngine, ScriptEnvironment, code_of, extract_solution, parse_verdict

ANSWER = "Train a small CNN.\n```python\nprint('metric: 0.9')\n```\n"


def completion(content):
    return {"choices": [{"message": {"role": "assistant", "content": content}}]}


class Recorder:
    """MockTransport handler replaying canned responses and keeping the requests"""

    def __init__(self, *responses):
        self.responses = list(responses)
        self.requests = []

    def __call__(self, request):
        self.requests.append(request)
        status, body = self.responses.pop(0)
        return httpx.Response(status, json=body)


def engine_with(recorder, token="secret"):
    return LLMEngine("https://llm.test/v1/", "test-model", token=token, backoff=0.0,
                     transport=httpx.MockTransport(recorder), token_env="MCGS_LLM_TOKEN")


def code_request(task, operator=OperatorKind.IMPROVE_FE, snippets=()):
    target = SolutionPayload(plan="baseline", artifact={"code": "print('metric: 0.5')\n", "metric_name": "accuracy"})
    ref = ReferencePayload(SolutionPayload(plan="other", artifact={"code": "x = 1\n"}), None, ExecState.BUGGY)
    return ProposalRequest(operator=operator, target_payload=target, reference_payloads=[ref], task=task,
                           kb_snippets=list(snippets), seed=2 ** 40 + 3, target_metric=0.5)


def test_extract_solution():
    plan, code = extract_solution(ANSWER)
    assert plan == "Train a small CNN."
    assert code == "print('metric: 0.9')\n"
    with pytest.raises(EngineFailure):
        extract_solution("no code here")


@pytest.mark.parametrize("content,status", [
    ('{"status": "pass"}', ReviewStatus.PASS),
    ('Sure: {"status": "warn", "warnings": ["slow loop"]}', ReviewStatus.WARN),
    ('{"status": "reject", "reason": "metric-task mismatch"}', ReviewStatus.REJECT),
    ("looks fine to me", ReviewStatus.WARN),
    ('{"status": "maybe"}', ReviewStatus.WARN),
    ("{not json}", ReviewStatus.WARN),
])
def test_parse_verdict(content, status):
    assert parse_verdict(content).status == status


def test_code_of():
    assert code_of(SolutionPayload(artifact={"code": "x"})) == "x"
    assert code_of(SolutionPayload(artifact="y")) == "y"
    assert code_of(SolutionPayload(artifact=None)) == ""


def test_propose_builds_prompt(task):
    """Test the request body carries operator, knowledge, target and references"""
    recorder = Recorder((200, completion(ANSWER)))
    engine = engine_with(recorder)
    hint = KnowledgeEntry("aug", KnowledgeLevel.DATA, ["image"], "Augment", "flip and crop")
    payload = engine.propose(code_request(task, snippets=[hint]))

    assert payload.artifact == {"code": "print('metric: 0.9')\n", "metric_name": "accuracy"}
    assert payload.plan == "Train a small CNN."

    sent = recorder.requests[0]
    assert str(sent.url) == "https://llm.test/v1/chat/completions"
    assert sent.headers["Authorization"] == "Bearer secret"
    body = json.loads(sent.content)
    assert body["model"] == "test-model"
    assert body["seed"] == (2 ** 40 + 3) % (2 ** 31)
    prompt = body["messages"][1]["content"]
    assert "feature engineering" in prompt
    assert "[Data] Augment: flip and crop" in prompt
    assert "Current solution (0.500000)" in prompt
    assert "Reference 1 (Buggy, failed)" in prompt


def test_retries_server_errors(task):
    recorder = Recorder((503, {}), (429, {}), (200, completion(ANSWER)))
    engine_with(recorder).propose(code_request(task))
    assert len(recorder.requests) == 3


def test_gives_up_after_three_attempts(task):
    recorder = Recorder((500, {}), (502, {}), (503, {}))
    with pytest.raises(EngineFailure, match="no completion after 3 attempts: HTTP 503"):
        engine_with(recorder).propose(code_request(task))


def test_client_error_is_not_retried(task):
    recorder = Recorder((401, {"error": "bad token"}))
    with pytest.raises(EngineFailure, match="HTTP 401"):
        engine_with(recorder).propose(code_request(task))
    assert len(recorder.requests) == 1


def test_transport_errors_are_retried(task):
    calls = []

    def handler(request):
        calls.append(request)
        if len(calls) < 3:
            raise httpx.ConnectError("connection refused", request=request)
        return httpx.Response(200, json=completion(ANSWER))

    engine = LLMEngine("https://llm.test/v1", "m", token="t", backoff=0.0, transport=httpx.MockTransport(handler))
    engine.propose(code_request(task))
    assert len(calls) == 3


def test_malformed_completion(task):
    """Test three malformed bodies in a row become an EngineFailure"""
    recorder = Recorder((200, {"choices": []}), (200, {"bad": 1}), (200, completion(None)))
    with pytest.raises(EngineFailure, match="no completion after 3 attempts: malformed completion"):
        engine_with(recorder).propose(code_request(task))
    assert len(recorder.requests) == 3


def test_malformed_completion_is_retried(task):
    recorder = Recorder((200, {"bad": 1}), (200, {"bad": 2}), (200, completion(ANSWER)))
    payload = engine_with(recorder).propose(code_request(task))
    assert payload.artifact["code"] == "print('metric: 0.9')\n"
    assert len(recorder.requests) == 3


def test_answer_without_code_is_retried(task):
    recorder = Recorder((200, completion("I would train a CNN.")), (200, completion(ANSWER)))
    engine = engine_with(recorder)
    assert engine.propose(code_request(task)).plan == "Train a small CNN."
    assert len(recorder.requests) == 2

    recorder = Recorder(*[(200, completion("no code, sorry"))] * 3)
    with pytest.raises(EngineFailure, match="response contains no code block"):
        engine_with(recorder).propose(code_request(task))


def test_missing_token(task, monkeypatch):
    monkeypatch.delenv("MCGS_LLM_TOKEN", raising=False)
    engine = LLMEngine.from_config(RunConfig(engine="llm"), transport=httpx.MockTransport(Recorder()))
    with pytest.raises(EngineFailure, match="MCGS_LLM_TOKEN is not set"):
        engine.propose(code_request(task))


def test_review_and_ensemble(task):
    recorder = Recorder((200, completion('{"status": "reject", "reason": "leak"}')), (200, completion(ANSWER)))
    engine = engine_with(recorder)
    verdict = engine.review(SolutionPayload(artifact={"code": "x"}), task)
    assert verdict.status == ReviewStatus.REJECT
    assert verdict.reason == "leak"

    members = [EnsembleMember(SolutionPayload(artifact={"code": "a"}), 0.8),
               EnsembleMember(SolutionPayload(artifact={"code": "b"}), 0.7)]
    combined = engine.ensemble(members, task, seed=4)
    assert combined.analysis == "Ensemble by test-model"
    assert "Solution 2 (0.700000)" in json.loads(recorder.requests[1].content)["messages"][1]["content"]


def script(code):
    return SolutionPayload(artifact={"code": code, "metric_name": "accuracy"})


def test_script_environment_runs_code(tmp_path, task):
    environment = ScriptEnvironment(str(tmp_path))
    outcome = environment.evaluate(script("print('training')\nprint('metric: 0.875')\n"), task)
    assert outcome.status == ExecState.EVALUATED
    assert outcome.metric == 0.875
    assert list((tmp_path / "solutions").glob("*.py"))


def test_script_environment_crash(tmp_path, task):
    outcome = ScriptEnvironment(str(tmp_path)).evaluate(script("raise SystemExit(3)\n"), task)
    assert outcome.status == ExecState.BUGGY


def test_script_environment_results(tmp_path, task):
    """Test missing metric lines, empty code and timeouts"""
    environment = ScriptEnvironment(str(tmp_path), timeout=5)
    with patch("pymcgs.core.llm.subprocess.run") as run:
        run.return_value = subprocess.CompletedProcess([], 0, stdout="done\n", stderr="")
        assert environment.evaluate(script("pass\n"), task).status == ExecState.BUGGY

        run.side_effect = subprocess.TimeoutExpired(cmd="python", timeout=5)
        outcome = environment.evaluate(script("while True: pass\n"), task)
        assert outcome.status == ExecState.FAILED
        assert "timed out after 5s" in outcome.log

    assert environment.evaluate(script("   \n"), task).status == ExecState.FAILED
