"""Experiment runs: training with complete feedback, then a transfer test.

Log format: one JSON object per trial (see ``LOG_SCHEMA_VERSION``), runs
written back to back. A ``<log>.ckpt.json`` file records completed runs and
the byte offset where the next run starts; resuming truncates anything past
that offset and restarts the interrupted run from its beginning.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import seeding
from .agents import Agent, AgentConfig, TrialInfo, make_agent
from .promptgen import (
    INSTRUCTIONS, OutcomeHistory, PromptStyle, assign_letters, parse_choice,
    render_choice_query, render_history, render_prompt,
)
from .taskdef import (
    RewardSchedule, TaskSpec, build_reward_schedule, default_catalog_path,
    shuffled_transfer_pairs, training_sequence,
)

log = logging.getLogger(__name__)

LOG_SCHEMA_VERSION = 1


class LogSchemaError(ValueError):
    pass


@dataclass
class RunConfig:
    task: TaskSpec
    style: PromptStyle
    agent: AgentConfig
    n_runs: int = 30
    seed: int = 0
    full_prompts: bool = False

    def __post_init__(self):
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")


@dataclass
class RunContext:
    """Everything one run needs, all derived from its run seed."""

    task: TaskSpec
    style: PromptStyle
    agent: Agent
    run_id: int
    run_seed: int
    schedule: RewardSchedule
    sequence: list[int]
    letters: dict[str, str]
    history: OutcomeHistory
    order_rng: np.random.Generator
    full_prompts: bool = False
    clock: Callable[[], str] = field(default=lambda: datetime.now(timezone.utc).isoformat())

    @classmethod
    def create(cls, task, style, agent, run_id, run_seed, full_prompts=False, clock=None):
        letters = assign_letters(task.option_ids, seeding.rng_for(run_seed, seeding.LETTERS))
        ctx = cls(
            task=task, style=style, agent=agent, run_id=run_id, run_seed=run_seed,
            schedule=build_reward_schedule(task, seeding.derive_seed(run_seed, seeding.SCHEDULE)),
            sequence=training_sequence(task, seeding.derive_seed(run_seed, seeding.SEQUENCE)),
            letters=letters,
            history=OutcomeHistory(letters, task.currency),
            order_rng=seeding.rng_for(run_seed, seeding.ORDER),
            full_prompts=full_prompts,
        )
        if clock is not None:
            ctx.clock = clock
        return ctx


def _ask(ctx: RunContext, phase: str, options, history_text: str) -> tuple[dict, str | None]:
    letters = [ctx.letters[o] for o in options]
    order_seed = int(ctx.order_rng.integers(2**63))
    query = render_choice_query(letters, order_seed, ctx.style.mode)
    by_letter = {ctx.letters[o]: o for o in options}
    listed = tuple(by_letter[x] for x in query.listed)
    prompt = render_prompt(ctx.task, history_text, query)
    reply = ctx.agent.choose(prompt, TrialInfo(phase, listed, query.listed))
    parsed = parse_choice(reply.raw, query.listed, ctx.style.mode)
    chosen = by_letter[parsed.letter] if parsed.valid else None
    record = {
        "schema": LOG_SCHEMA_VERSION,
        "run": ctx.run_id,
        "run_seed": ctx.run_seed,
        "task": ctx.task.name,
        "style": ctx.style.variant,
        "phase": phase,
        "trial": None,
        "context": None,
        "options": list(listed),
        "letters": list(query.listed),
        "first": query.first,
        "choice": chosen,
        "choice_letter": parsed.letter,
        "valid": parsed.valid,
        "outcomes": None,
        "reply": reply.raw,
        "attempts": reply.attempts,
        "prompt_sha256": hashlib.sha256(prompt.encode("utf-8")).hexdigest(),
        "timestamp": ctx.clock(),
    }
    if reply.generation:
        record["generation"] = reply.generation
    if ctx.full_prompts:
        record["prompt"] = prompt
    return record, chosen


def run_training_phase(ctx: RunContext) -> list[dict]:
    """Training trials; every context member's scheduled outcome is appended each round."""
    records = []
    seen = {c.id: 0 for c in ctx.task.contexts}
    for t, cid in enumerate(ctx.sequence):
        context = ctx.task.context(cid)
        k = seen[cid]
        seen[cid] += 1
        history_text = render_history(ctx.history, ctx.style)
        record, chosen = _ask(ctx, "training", context.options, history_text)
        outcomes = {o: ctx.schedule.outcomes[o][k] for o in record["options"]}
        record.update(trial=t, context=cid, outcomes=outcomes)
        ctx.history.append(cid, outcomes)
        ctx.agent.observe(outcomes, chosen)
        records.append(record)
    return records


def run_transfer_phase(ctx: RunContext) -> list[dict]:
    """Transfer trials over shuffled option pairs; the history stays frozen."""
    history_text = render_history(ctx.history, ctx.style)
    pairs = shuffled_transfer_pairs(ctx.task, seeding.derive_seed(ctx.run_seed, seeding.TRANSFER))
    records = []
    for t, pair in enumerate(pairs):
        record, _ = _ask(ctx, "transfer", pair, history_text)
        record.update(trial=t, pair="|".join(sorted(pair)))
        records.append(record)
    return records


def run_single(task, style, agent: Agent, run_id: int, run_seed: int, full_prompts=False, clock=None):
    agent.start_run(seeding.derive_seed(run_seed, seeding.AGENT))
    ctx = RunContext.create(task, style, agent, run_id, run_seed, full_prompts, clock)
    return run_training_phase(ctx) + run_transfer_phase(ctx)


def simulate_records(task, agent_cfg: AgentConfig, n_runs: int, seed: int,
                     style: PromptStyle | None = None) -> list[dict]:
    """In-memory batch (no files); used by recovery and predictive checks."""
    style = style or PromptStyle()
    agent = make_agent(agent_cfg, task)
    records = []
    for i in range(n_runs):
        records += run_single(task, style, agent, i, seeding.derive_seed(seed, i),
                              clock=lambda: "")
    return records


# --------------------------------------------------------------------------
# batches on disk


def checkpoint_path(log_path: Path) -> Path:
    return log_path.with_name(log_path.name + ".ckpt.json")


def manifest_path(log_path: Path) -> Path:
    return log_path.with_name(log_path.name + ".manifest.json")


def _file_sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def prompt_golden_hash() -> str:
    h = hashlib.sha256()
    for name in sorted(INSTRUCTIONS):
        h.update(INSTRUCTIONS[name].encode())
    return h.hexdigest()


def batch_manifest(cfg: RunConfig, catalog_path: Path | None = None) -> dict:
    catalog_path = catalog_path or default_catalog_path()
    return {
        "log_schema": LOG_SCHEMA_VERSION,
        "task": cfg.task.name,
        "style": cfg.style.variant,
        "mode": cfg.style.mode,
        "n_runs": cfg.n_runs,
        "master_seed": cfg.seed,
        "seed_derivation": "run_seed = splitmix64(splitmix64(master) ^ run_index)",
        "agent": cfg.agent.describe(),
        "task_catalog_sha256": _file_sha256(catalog_path),
        "prompt_text_sha256": prompt_golden_hash(),
    }


def run_experiment_batch(
    cfg: RunConfig,
    out: str | Path,
    agent: Agent | None = None,
    force: bool = False,
    catalog_path: Path | None = None,
    clock=None,
    on_run_done: Callable[[int], None] | None = None,
) -> Path:
    """Execute ``cfg.n_runs`` runs into a JSONL log, resuming if a checkpoint exists."""
    out = Path(out)
    ckpt_file = checkpoint_path(out)
    manifest = batch_manifest(cfg, catalog_path)
    completed, offset = 0, 0
    if out.exists() and not force:
        if not ckpt_file.exists():
            raise FileExistsError(f"{out} exists; pass force=True to overwrite")
        ckpt = json.loads(ckpt_file.read_text())
        if ckpt.get("manifest") != manifest:
            raise FileExistsError(f"{out} was produced with a different configuration")
        completed, offset = ckpt["completed_runs"], ckpt["offset"]
        if completed >= cfg.n_runs:
            return out
        log.info("resuming %s at run %d", out, completed)
    elif out.exists():
        out.unlink()
        ckpt_file.unlink(missing_ok=True)
    out.parent.mkdir(parents=True, exist_ok=True)
    manifest_path(out).write_text(json.dumps(manifest, indent=2) + "\n")

    agent = agent or make_agent(cfg.agent, cfg.task)
    with open(out, "a+b") as fh:
        fh.truncate(offset)
        fh.seek(offset)
        for run_id in range(completed, cfg.n_runs):
            run_seed = seeding.derive_seed(cfg.seed, run_id)
            records = run_single(cfg.task, cfg.style, agent, run_id, run_seed, cfg.full_prompts, clock)
            for r in records:
                fh.write((json.dumps(r, ensure_ascii=False) + "\n").encode("utf-8"))
            fh.flush()
            os.fsync(fh.fileno())
            offset = fh.tell()
            _write_checkpoint(ckpt_file, manifest, run_id + 1, offset)
            if on_run_done:
                on_run_done(run_id)
    return out


def _write_checkpoint(path: Path, manifest: dict, completed: int, offset: int) -> None:
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps({"manifest": manifest, "completed_runs": completed, "offset": offset}))
    tmp.replace(path)


def read_log(path: str | Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            r = json.loads(line)
            if r.get("schema") != LOG_SCHEMA_VERSION:
                raise LogSchemaError(
                    f"{path}:{n}: log schema {r.get('schema')} != {LOG_SCHEMA_VERSION}; "
                    "re-run the batch or convert the log with the matching relbias release"
                )
            records.append(r)
    return records


def invalid_fraction(records: Iterable[dict]) -> float:
    records = list(records)
    return sum(not r["valid"] for r in records) / len(records) if records else 0.0
