"""Choice-making agents.

Every agent answers a rendered prompt with reply text, so LLMs and synthetic
agents go through the same parse path. Synthetic agents also receive the
trial's structured state (``TrialInfo``) instead of reading their own prompt.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Protocol

import httpx
import numpy as np

from .cogmodel import ModelParams, ModelVariant, RLLearner
from .promptgen import forced_reply
from .taskdef import TIE_TOL, TaskSpec

log = logging.getLogger(__name__)

AGENT_KINDS = ("llm_endpoint", "rl_simulated", "ideal", "uniform_random")
RETRY_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}


class ConfigurationError(RuntimeError):
    """Bad or missing agent configuration (including rejected credentials)."""


class TransportError(RuntimeError):
    def __init__(self, message: str, status: int | None = None, attempts: int = 0):
        super().__init__(message)
        self.status = status
        self.attempts = attempts


@dataclass
class AgentConfig:
    kind: str
    base_url: str = "https://api.openai.com/v1"
    model: str = ""
    auth_env: str = "OPENAI_API_KEY"
    temperature: float = 0.0
    timeout: float = 60.0
    max_retries: int = 5
    backoff: float = 1.0
    rate_limit: float = 1.0  # requests per second
    params: ModelParams | None = None
    variant: ModelVariant | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in AGENT_KINDS:
            raise ConfigurationError(f"unknown agent kind {self.kind!r}")
        if self.kind == "llm_endpoint":
            if self.temperature != 0:
                raise ConfigurationError("LLM agents run at temperature 0")
            if not self.model:
                raise ConfigurationError("llm_endpoint needs a model name")
        if self.kind == "rl_simulated" and self.params is None:
            raise ConfigurationError("rl_simulated needs model parameters")

    def describe(self) -> dict:
        d = {"kind": self.kind, "seed": self.seed}
        if self.kind == "llm_endpoint":
            d.update(base_url=self.base_url, model=self.model, auth_env=self.auth_env,
                     temperature=self.temperature, timeout=self.timeout,
                     max_retries=self.max_retries, rate_limit=self.rate_limit)
        if self.params is not None:
            d["params"] = self.params.to_dict()
        if self.variant is not None:
            d["variant"] = self.variant.name
        return d


@dataclass
class AgentReply:
    raw: str
    latency: float = 0.0
    attempts: int = 1
    usage: dict | None = None
    generation: dict = field(default_factory=dict)


@dataclass(frozen=True)
class TrialInfo:
    """Structured sidecar for synthetic agents."""

    phase: str
    options: tuple[str, ...]  # option ids in listed order
    letters: tuple[str, ...]  # matching letters


# --------------------------------------------------------------------------
# remote chat endpoint


class RateLimiter:
    """Token bucket shared by all callers of one endpoint."""

    def __init__(self, rate: float, burst: int = 1, clock=time.monotonic, sleep=time.sleep):
        self.rate = rate
        self.burst = burst
        self._tokens = float(burst)
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if self.rate <= 0:
            return
        with self._lock:
            now = self._clock()
            self._tokens = min(self.burst, self._tokens + (now - self._last) * self.rate)
            self._last = now
            if self._tokens < 1:
                wait = (1 - self._tokens) / self.rate
                self._sleep(wait)
                self._last = self._clock()
                self._tokens = 0.0
            else:
                self._tokens -= 1


_LIMITERS: dict[str, RateLimiter] = {}
_LIMITERS_LOCK = threading.Lock()


def limiter_for(cfg: AgentConfig) -> RateLimiter:
    with _LIMITERS_LOCK:
        if cfg.base_url not in _LIMITERS:
            _LIMITERS[cfg.base_url] = RateLimiter(cfg.rate_limit)
        return _LIMITERS[cfg.base_url]


def chat_payload(prompt: str, cfg: AgentConfig) -> dict:
    return {
        "model": cfg.model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": cfg.temperature,
    }


def llm_choose(
    prompt: str,
    cfg: AgentConfig,
    client: httpx.Client | None = None,
    limiter: RateLimiter | None = None,
    sleep=time.sleep,
) -> AgentReply:
    """One single-turn chat-completion request at temperature 0.

    Retries transport failures, 429 and 5xx with exponential backoff. A
    well-formed reply is returned as-is whatever its content.
    """
    if cfg.kind != "llm_endpoint":
        raise ConfigurationError(f"llm_choose needs an llm_endpoint config, got {cfg.kind}")
    token = os.environ.get(cfg.auth_env)
    if not token:
        raise ConfigurationError(f"environment variable {cfg.auth_env} is not set")
    own_client = client is None
    client = client or httpx.Client(timeout=cfg.timeout)
    limiter = limiter or limiter_for(cfg)
    url = cfg.base_url.rstrip("/") + "/chat/completions"
    headers = {"Authorization": f"Bearer {token}"}
    payload = chat_payload(prompt, cfg)
    last_status = None
    last_error = ""
    try:
        for attempt in range(1, cfg.max_retries + 1):
            limiter.acquire()
            t0 = time.monotonic()
            try:
                resp = client.post(url, json=payload, headers=headers, timeout=cfg.timeout)
            except httpx.TransportError as exc:
                last_status, last_error = None, repr(exc)
            else:
                if resp.status_code in (401, 403):
                    raise ConfigurationError(
                        f"endpoint rejected credentials from {cfg.auth_env} (HTTP {resp.status_code})"
                    )
                if resp.status_code == 200:
                    body = resp.json()
                    content = body["choices"][0]["message"]["content"] or ""
                    generation = {k: body[k] for k in ("model", "system_fingerprint") if k in body}
                    return AgentReply(content, time.monotonic() - t0, attempt,
                                      body.get("usage"), generation)
                last_status, last_error = resp.status_code, resp.text[:200]
                if resp.status_code not in RETRY_STATUS:
                    raise TransportError(f"HTTP {resp.status_code}: {last_error}",
                                         resp.status_code, attempt)
            if attempt < cfg.max_retries:
                delay = cfg.backoff * 2 ** (attempt - 1)
                log.warning("attempt %d/%d failed (%s); retrying in %.1fs",
                            attempt, cfg.max_retries, last_status or last_error, delay)
                sleep(delay)
    finally:
        if own_client:
            client.close()
    raise TransportError(f"gave up after {cfg.max_retries} attempts: {last_status} {last_error}",
                         last_status, cfg.max_retries)


# --------------------------------------------------------------------------
# synthetic agents


def rl_agent_choose(learner: RLLearner, trial: TrialInfo, rng: np.random.Generator) -> str:
    """Sample a letter from the learner's softmax probabilities."""
    p = learner.probabilities(trial.options, trial.phase)
    return trial.letters[int(rng.choice(len(p), p=p))]


def ideal_choose(options, task: TaskSpec, rng: np.random.Generator | None = None) -> str | None:
    """Highest expected value; ties between the best options go to a coin flip.

    Returns None for a tie when no ``rng`` is given (credit 0.5 downstream).
    """
    evs = task.expected_values()
    options = list(options)
    best = max(evs[o] for o in options)
    top = [o for o in options if evs[o] >= best - TIE_TOL]
    if len(top) == 1:
        return top[0]
    if rng is None:
        return None
    return top[int(rng.integers(len(top)))]


class Agent(Protocol):
    def start_run(self, run_seed: int) -> None: ...

    def choose(self, prompt: str, trial: TrialInfo) -> AgentReply: ...

    def observe(self, outcomes: dict[str, float], chosen: str | None) -> None: ...


class LLMAgent:
    def __init__(self, cfg: AgentConfig, client: httpx.Client | None = None):
        self.cfg = cfg
        self.client = client

    def start_run(self, run_seed: int) -> None:
        pass

    def choose(self, prompt: str, trial: TrialInfo) -> AgentReply:
        return llm_choose(prompt, self.cfg, client=self.client)

    def observe(self, outcomes, chosen) -> None:
        pass


class RLAgent:
    def __init__(self, cfg: AgentConfig):
        params = cfg.params
        if cfg.variant is not None:
            params = params.restricted(cfg.variant)
        self.learner = RLLearner(params)
        self.rng = np.random.default_rng(cfg.seed)

    def start_run(self, run_seed: int) -> None:
        self.learner.reset()
        self.rng = np.random.default_rng(run_seed)

    def choose(self, prompt: str, trial: TrialInfo) -> AgentReply:
        return AgentReply(forced_reply(rl_agent_choose(self.learner, trial, self.rng)))

    def observe(self, outcomes, chosen) -> None:
        self.learner.learn(outcomes, chosen)


class IdealAgent:
    def __init__(self, cfg: AgentConfig, task: TaskSpec):
        self.task = task
        self.rng = np.random.default_rng(cfg.seed)

    def start_run(self, run_seed: int) -> None:
        self.rng = np.random.default_rng(run_seed)

    def choose(self, prompt: str, trial: TrialInfo) -> AgentReply:
        oid = ideal_choose(trial.options, self.task, self.rng)
        return AgentReply(forced_reply(trial.letters[trial.options.index(oid)]))

    def observe(self, outcomes, chosen) -> None:
        pass


class UniformRandomAgent:
    def __init__(self, cfg: AgentConfig):
        self.rng = np.random.default_rng(cfg.seed)

    def start_run(self, run_seed: int) -> None:
        self.rng = np.random.default_rng(run_seed)

    def choose(self, prompt: str, trial: TrialInfo) -> AgentReply:
        return AgentReply(forced_reply(trial.letters[int(self.rng.integers(len(trial.letters)))]))

    def observe(self, outcomes, chosen) -> None:
        pass


def make_agent(cfg: AgentConfig, task: TaskSpec, client: httpx.Client | None = None) -> Agent:
    if cfg.kind == "llm_endpoint":
        return LLMAgent(cfg, client)
    if cfg.kind == "rl_simulated":
        return RLAgent(cfg)
    if cfg.kind == "ideal":
        return IdealAgent(cfg, task)
    return UniformRandomAgent(cfg)

