"""
LLM-backed proposal engine over an OpenAI-style chat-completion endpoint,
and a script environment that runs the proposed Python code
"""
import hashlib
import json
import os
import re
import subprocess
import sys
import time
from typing import TYPE_CHECKING, Any, Callable, Dict, List, Optional, Tuple

import httpx

from .engine import (
    EnsembleMember,
    Environment,
    EvalOutcome,
    ProposalEngine,
    ProposalRequest,
    ReviewVerdict,
    TaskSpec,
)
from .errors import EngineFailure
from .graph import ExecState, OperatorKind, SolutionPayload

if TYPE_CHECKING:
    from .config import RunConfig

ATTEMPTS = 3
CODE_BLOCK = re.compile(r"```(?:python|py)?\s*\n(.*?)```", re.DOTALL)
METRIC_LINE = re.compile(r"^metric:\s*([-+0-9.eEinfaINFA]+)\s*$", re.MULTILINE)

SYSTEM_PROMPT = (
    "You are an expert machine learning engineer solving a competition task. "
    "Answer with a short plan followed by one complete Python script in a ```python block. "
    "The script must print its validation score on a final line formatted as 'metric: <float>'."
)

OPERATOR_INSTRUCTIONS = {
    OperatorKind.DRAFT: "Write a first complete solution from scratch.",
    OperatorKind.DEBUG: "The solution below crashed. Fix the error without changing its approach.",
    OperatorKind.IMPROVE_NORMAL: "Make one small, safe improvement to the solution below.",
    OperatorKind.IMPROVE_FE: "Improve the feature engineering or data preprocessing of the solution below.",
    OperatorKind.IMPROVE_CS: "Apply a competition strategy (augmentation, TTA, ensembling, tuning) to the solution below.",
    OperatorKind.FUSION: "Combine the strongest ideas of the reference solutions into one better solution.",
    OperatorKind.ENSEMBLE: "Combine the solutions below into one robust ensemble script.",
}

REVIEW_PROMPT = (
    "Review the solution for data leakage, naming or import errors, and a metric that does not "
    "match the task. Reply with JSON only: "
    '{"status": "pass" | "warn" | "reject", "warnings": [...], "reason": "..."}'
)


def extract_solution(content: str) -> Tuple[str, str]:
    """
    Split an answer into (plan, code)

    Raises:
        EngineFailure: The answer holds no code block
    """
    match = CODE_BLOCK.search(content)
    if not match:
        raise EngineFailure("response contains no code block")
    plan = content[:match.start()].strip()
    return plan, match.group(1).strip() + "\n"


def parse_verdict(content: str) -> ReviewVerdict:
    """Review verdict from a JSON reply; anything unparsable becomes a warning"""
    start, end = content.find("{"), content.rfind("}")
    try:
        data = json.loads(content[start:end + 1]) if start >= 0 else {}
        status = str(data.get("status", "")).lower()
    except (json.JSONDecodeError, AttributeError):
        return ReviewVerdict.warn(["review reply was not valid JSON"])
    if status == "reject":
        return ReviewVerdict.reject(str(data.get("reason") or "rejected by reviewer"))
    if status == "warn":
        return ReviewVerdict.warn([str(w) for w in data.get("warnings") or ["unspecified warning"]])
    if status == "pass":
        return ReviewVerdict.passed()
    return ReviewVerdict.warn([f"unknown review status {status!r}"])


def code_of(payload: SolutionPayload) -> str:
    artifact = payload.artifact
    if isinstance(artifact, dict):
        return str(artifact.get("code", ""))
    return "" if artifact is None else str(artifact)


class LLMEngine(ProposalEngine):
    """
    Proposal engine calling a chat-completion endpoint with httpx

    Each request is retried ATTEMPTS times on transport errors, 429 and 5xx
    answers and malformed replies before it becomes an EngineFailure.
    """

    def __init__(self, base_url: str, model: str, token: Optional[str] = None,
                 temperature: float = 0.5, timeout: float = 120.0, backoff: float = 1.0,
                 transport: Optional[httpx.BaseTransport] = None, token_env: str = ""):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.token = token
        self.token_env = token_env
        self.temperature = temperature
        self.backoff = backoff
        self.client = httpx.Client(timeout=timeout, transport=transport)

    @classmethod
    def from_config(cls, config: 'RunConfig', transport: Optional[httpx.BaseTransport] = None) -> 'LLMEngine':
        return cls(
            base_url=config.llm_base_url,
            model=config.llm_model,
            token=os.environ.get(config.llm_token_env),
            temperature=config.temperature,
            timeout=config.llm_timeout,
            transport=transport,
            token_env=config.llm_token_env,
        )

    def close(self) -> None:
        self.client.close()

    def complete(self, messages: List[Dict[str, str]], seed: Optional[int] = None,
                 parse: Optional[Callable[[str], Any]] = None) -> Any:
        """
        Send one chat-completion request and return the parsed answer

        A malformed body, or an answer parse rejects, counts as a failed
        attempt like a 5xx answer.

        Args:
            messages: Chat messages
            seed: Sampling seed forwarded to the endpoint
            parse: Converts the answer text; the raw text is returned when None

        Raises:
            EngineFailure: No token, a 4xx answer, or every attempt failed
        """
        if not self.token:
            raise EngineFailure(f"environment variable {self.token_env or 'for the LLM token'} is not set")
        body: Dict[str, Any] = {"model": self.model, "messages": messages, "temperature": self.temperature}
        if seed is not None:
            body["seed"] = seed % (2 ** 31)
        headers = {"Authorization": f"Bearer {self.token}"}

        last_error = ""
        for attempt in range(ATTEMPTS):
            try:
                response = self.client.post(f"{self.base_url}/chat/completions", json=body, headers=headers)
                if response.status_code == 429 or response.status_code >= 500:
                    last_error = f"HTTP {response.status_code}"
                else:
                    response.raise_for_status()
                    content = response.json()["choices"][0]["message"]["content"]
                    if not isinstance(content, str):
                        raise ValueError("content is not text")
                    return parse(content) if parse else content
            except httpx.HTTPStatusError as e:
                raise EngineFailure(f"HTTP {e.response.status_code} from {self.base_url}") from None
            except httpx.HTTPError as e:
                last_error = str(e) or type(e).__name__
            except (KeyError, IndexError, TypeError, ValueError, EngineFailure) as e:
                last_error = f"malformed completion: {e}"
            if attempt + 1 < ATTEMPTS and self.backoff > 0:
                time.sleep(self.backoff * 2 ** attempt)
        raise EngineFailure(f"no completion after {ATTEMPTS} attempts: {last_error}")

    def _prompt(self, request: ProposalRequest) -> str:
        task = request.task
        parts = [
            f"Task: {task.description}",
            f"Metric: {task.metric_name} ({task.direction.value.lower()})",
            OPERATOR_INSTRUCTIONS[request.operator],
        ]
        if request.kb_snippets:
            parts.append("Domain knowledge:\n" + "\n".join(
                f"- [{e.level.value}] {e.title}: {e.guidance}" for e in request.kb_snippets))
        code = code_of(request.target_payload)
        if code:
            metric = "not evaluated" if request.target_metric is None else f"{request.target_metric:.6f}"
            parts.append(f"Current solution ({metric}):\n```python\n{code}```")
        for i, ref in enumerate(request.reference_payloads, 1):
            metric = "failed" if ref.metric is None else f"{ref.metric:.6f}"
            parts.append(f"Reference {i} ({ref.state.value}, {metric}):\n{ref.payload.plan}\n"
                         f"```python\n{code_of(ref.payload)}```")
        return "\n\n".join(parts)

    def _payload(self, content: str, task: TaskSpec, operator: OperatorKind) -> SolutionPayload:
        plan, code = extract_solution(content)
        return SolutionPayload(plan=plan or operator.value,
                               artifact={"code": code, "metric_name": task.metric_name},
                               analysis=f"{operator.value} by {self.model}")

    def propose(self, request: ProposalRequest) -> SolutionPayload:
        messages = [{"role": "system", "content": SYSTEM_PROMPT},
                    {"role": "user", "content": self._prompt(request)}]
        return self.complete(messages, request.seed,
                             parse=lambda content: self._payload(content, request.task, request.operator))

    def review(self, candidate: SolutionPayload, task: TaskSpec) -> ReviewVerdict:
        messages = [
            {"role": "system", "content": REVIEW_PROMPT},
            {"role": "user", "content": f"Task: {task.description}\nMetric: {task.metric_name}\n\n"
                                        f"```python\n{code_of(candidate)}```"},
        ]
        return parse_verdict(self.complete(messages))

    def ensemble(self, members: List[EnsembleMember], task: TaskSpec, seed: int) -> SolutionPayload:
        listing = "\n\n".join(f"Solution {i} ({m.metric:.6f}):\n```python\n{code_of(m.payload)}```"
                              for i, m in enumerate(members, 1))
        messages = [
            {"role": "system", "content": SYSTEM_PROMPT},
            {"role": "user", "content": f"Task: {task.description}\n\n"
                                        f"{OPERATOR_INSTRUCTIONS[OperatorKind.ENSEMBLE]}\n\n{listing}"},
        ]
        return self.complete(messages, seed,
                             parse=lambda content: self._payload(content, task, OperatorKind.ENSEMBLE))


class ScriptEnvironment(Environment):
    """
    Runs a candidate's code with the current interpreter

    A 'metric: <float>' line on stdout makes it Evaluated, a nonzero exit
    or a missing metric line Buggy, a timeout Failed. No sandboxing.
    """

    def __init__(self, workdir: str, timeout: float = 600.0, python: Optional[str] = None):
        self.workdir = os.path.join(workdir, "solutions")
        self.timeout = timeout
        self.python = python or sys.executable

    def evaluate(self, payload: SolutionPayload, task: TaskSpec) -> EvalOutcome:
        code = code_of(payload)
        if not code.strip():
            return EvalOutcome(ExecState.FAILED, log="candidate has no code")

        os.makedirs(self.workdir, exist_ok=True)
        path = os.path.join(self.workdir, f"{hashlib.sha1(code.encode()).hexdigest()[:16]}.py")
        with open(path, 'w') as f:
            f.write(code)

        try:
            result = subprocess.run([self.python, path], cwd=self.workdir, capture_output=True,
                                    text=True, timeout=self.timeout)
        except subprocess.TimeoutExpired:
            return EvalOutcome(ExecState.FAILED, log=f"timed out after {self.timeout:g}s")

        if result.returncode != 0:
            return EvalOutcome(ExecState.BUGGY, log=result.stderr[-2000:])
        matches = METRIC_LINE.findall(result.stdout)
        if not matches:
            return EvalOutcome(ExecState.BUGGY, log="no 'metric:' line in output")
        try:
            metric = float(matches[-1])
        except ValueError:
            return EvalOutcome(ExecState.BUGGY, log=f"unparsable metric {matches[-1]!r}")
        return EvalOutcome(ExecState.EVALUATED, metric=metric, log=result.stdout[-2000:])
