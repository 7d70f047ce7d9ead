"""Discrete-event engine for speculative decoding with two alternating batches.

Each step works on two request batches.  The "skip" batch is drafted for while
the other ("target") batch has last step's drafts verified; the two model
passes overlap, so the step costs max(verify, draft) plus a communication
overhead, and the roles swap at the sync point that ends the step.  The very
first step bootstraps the pipeline: it drafts the target batch serially, then
verifies it while the skip batch gets its first drafts.

When the target batch has no pre-drafted tokens (its batch drained, or a
preemption wiped the drafts) the step falls back to plain speculative decoding:
draft and verify the surviving batch back to back in one step, with no overlap
and no communication charge.  Mode "psd-fallback-disabled" turns that case into
an error instead, and mode "standard-sd" runs plain speculative decoding over a
single batch from the start.

Sync points order their work as: commit finishes, apply due preemptions, swap
batch roles, admit arrivals.  Admitted requests prefill at the start of the
next step and are drafted for in the same step, so they join verification one
step later.

Block-table growth is scheduled by the KV policy (see kv_manager).  Whenever a
request is granted growth, the engine sizes it to exactly cover that request's
next commit, peeking at the request's own acceptance stream; the streams are
keyed by (seed, request, verification index), so the peek and the later commit
always agree.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .acceptance_model import acceptance_stream, accepted_count
from .batch_manager import BatchManager
from .errors import CapacityError, ProtocolError
from .kv_manager import ALLOCATE, AllocationContext, KVBlockTable, blocks_needed
from .metrics import MetricsReport, compute_metrics
from .request_model import (
    TERMINAL_STATES,
    Request,
    RequestState,
    SimConfig,
    StepRecord,
    validate_config,
)
from .workload import Preemption

__all__ = ["PendingDraft", "KvStepRecord", "FinishRecord", "EngineState", "run", "step_once"]


@dataclass(frozen=True)
class PendingDraft:
    """Drafted tokens waiting for verification, plus the time spent drafting
    them (which the frontier-coupled acceptance model consumes)."""

    tokens: int
    draft_time: float


@dataclass(frozen=True)
class KvStepRecord:
    """Per-step block-table activity: who was granted growth, who was skipped,
    and the blocks in use once the step's writes landed."""

    step_index: int
    allocated_ids: tuple[int, ...]
    skipped_ids: tuple[int, ...]
    blocks_in_use: int


@dataclass(frozen=True)
class FinishRecord:
    """Snapshot taken when a request finishes, before its blocks are freed."""

    request_id: int
    finish_time: float
    blocks_at_finish: int
    prompt_len: int
    total_len: int


@dataclass
class EngineState:
    config: SimConfig
    requests: dict[int, Request]
    waiting: list[int]
    bm: BatchManager
    kv: KVBlockTable
    clock: float = 0.0
    step_index: int = 0
    pending: dict[int, dict[int, PendingDraft]] = field(
        default_factory=lambda: {0: {}, 1: {}}
    )
    verify_counts: dict[int, int] = field(default_factory=dict)
    newly_admitted: list[int] = field(default_factory=list)
    preemptions: list[Preemption] = field(default_factory=list)
    step_log: list[StepRecord] = field(default_factory=list)
    kv_log: list[KvStepRecord] = field(default_factory=list)
    finish_log: list[FinishRecord] = field(default_factory=list)
    sd_members: dict[int, None] = field(default_factory=dict)

    def request_list(self) -> list[Request]:
        return [self.requests[rid] for rid in sorted(self.requests)]


def _all_terminal(state: EngineState) -> bool:
    return all(r.state in TERMINAL_STATES for r in state.requests.values())


def _arrived(state: EngineState) -> list[int]:
    out = []
    for rid in state.waiting:
        if state.requests[rid].arrival_time <= state.clock:
            out.append(rid)
    return out


def _admit_psd(state: EngineState) -> None:
    """Move arrived requests into batches until placement stops."""
    for rid in _arrived(state):
        try:
            batch_id = state.bm.assign(rid)
        except CapacityError:
            break
        req = state.requests[rid]
        req.batch_id = batch_id
        req.transition(RequestState.PREFILL)
        state.waiting.remove(rid)
        state.newly_admitted.append(rid)


def _admit_sd(state: EngineState, config: SimConfig) -> None:
    cap = config.m * config.sd_batch_factor
    for rid in _arrived(state):
        if len(state.sd_members) >= cap:
            break
        state.sd_members[rid] = None
        req = state.requests[rid]
        req.batch_id = 0
        req.transition(RequestState.PREFILL)
        state.waiting.remove(rid)
        state.newly_admitted.append(rid)


def _advance_to_arrivals(state: EngineState, running: int) -> None:
    """With nothing running, idle forward to the earliest waiting arrival."""
    if running > 0:
        return
    if not state.waiting:
        raise ProtocolError("engine stepped with no runnable requests")
    earliest = min(state.requests[rid].arrival_time for rid in state.waiting)
    state.clock = max(state.clock, earliest)


def _draft_quota(state: EngineState, config: SimConfig, rid: int) -> int:
    """Tokens to draft for a request: its configured depth, clamped so the
    following commit (accepted + 1 bonus) can never overshoot the output
    budget.  Keeps every accepted token countable and the bonus always 1."""
    return min(config.draft_len(rid), max(state.requests[rid].remaining - 1, 0))


def _planned_commit(
    state: EngineState, config: SimConfig, rid: int, k_i: int, draft_time: float
) -> int:
    """Peek the request's next commit size without advancing its stream."""
    req = state.requests[rid]
    if config.kv_policy == "eager":
        return min(k_i + 1, req.remaining)
    if k_i > 0:
        j = state.verify_counts.get(rid, 0) + 1
        rng = acceptance_stream(config.seed, rid, j)
        a = accepted_count(config.acceptance, k_i, draft_time, rng)
    else:
        a = 0
    return min(a + 1, req.remaining)


def _run_allocations(
    state: EngineState,
    config: SimConfig,
    ctx: AllocationContext,
    sizing: dict[int, tuple[int, float]],
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Apply the policy's allocation decisions, sizing each grant to the
    request's next commit (or the worst case, under the eager policy).

    ``sizing`` maps a request to the draft backing its next commit: the
    tokens drafted this step for the drafting batch, or the pending drafts
    awaiting verification for the batch being verified."""
    decisions = state.kv.schedule_allocation(ctx)
    allocated: list[int] = []
    skipped: list[int] = []
    for rid, decision in decisions.items():
        if decision != ALLOCATE:
            skipped.append(rid)
            continue
        allocated.append(rid)
        req = state.requests[rid]
        if config.kv_policy == "eager":
            k_i, draft_time = sizing.get(
                rid, (_draft_quota(state, config, rid), 0.0)
            )
        elif rid in sizing:
            k_i, draft_time = sizing[rid]
        elif rid in ctx.prefill_ids:
            # A fresh admission placed straight into the batch under
            # verification has no draft yet; its pass commits only the
            # single non-drafted token.
            k_i, draft_time = 0, 0.0
        else:
            raise ProtocolError(
                f"request {rid} granted block growth outside any draft/verify role"
            )
        planned = _planned_commit(state, config, rid, k_i, draft_time)
        total = req.prompt_len + req.generated + planned
        state.kv.ensure_capacity(rid, total)
    return tuple(allocated), tuple(skipped)


def _prefill_commit(state: EngineState, prefill_ids: tuple[int, ...]) -> None:
    for rid in prefill_ids:
        req = state.requests[rid]
        state.kv.commit_write(rid, req.prompt_len)
        req.transition(RequestState.DECODING)


def _verify_batch(
    state: EngineState,
    config: SimConfig,
    ids: list[int],
    drafts: dict[int, PendingDraft],
) -> tuple[int, int, int, list[int]]:
    """Verify a batch against its pending drafts.

    Members without drafts take an idle pass: nothing to check, but the pass
    still yields their single non-drafted token.  Returns (tokens verified,
    committed accepted, committed bonus, finished ids).  Accepted tokens past
    a request's output budget are dropped rather than counted, so the two
    committed columns always sum to the tokens actually generated.
    """
    verified_tokens = 0
    accepted_total = 0
    bonus_total = 0
    finished: list[int] = []
    for rid in ids:
        req = state.requests[rid]
        pend = drafts.pop(rid, None)
        k_i = pend.tokens if pend else 0
        draft_time = pend.draft_time if pend else 0.0
        j = state.verify_counts.get(rid, 0) + 1
        state.verify_counts[rid] = j
        if k_i > 0:
            rng = acceptance_stream(config.seed, rid, j)
            a = accepted_count(config.acceptance, k_i, draft_time, rng)
        else:
            a = 0
        commit = min(a + 1, req.remaining)
        req.generated += commit
        state.kv.commit_write(rid, commit)
        verified_tokens += k_i
        accepted_total += min(a, commit)
        bonus_total += commit - min(a, commit)
        if req.remaining == 0:
            finished.append(rid)
    return verified_tokens, accepted_total, bonus_total, finished


def _finish_requests(state: EngineState, finished: list[int], in_psd: bool) -> None:
    for rid in finished:
        req = state.requests[rid]
        state.finish_log.append(
            FinishRecord(
                request_id=rid,
                finish_time=state.clock,
                blocks_at_finish=state.kv.allocated_of(rid),
                prompt_len=req.prompt_len,
                total_len=req.prompt_len + req.target_output_len,
            )
        )
        req.finish_time = state.clock
        req.transition(RequestState.FINISHED)
        if in_psd:
            batch_id = state.bm.recycle(rid)
            state.pending[batch_id].pop(rid, None)
        else:
            del state.sd_members[rid]
        # finished requests keep batch_id for post-run inspection; only
        # preemption scrubs it.
        state.kv.release(rid)


def _apply_preemptions(state: EngineState, in_psd: bool) -> int:
    """Apply injections that are due; only decoding requests are affected."""
    applied = 0
    remaining: list[Preemption] = []
    for pre in state.preemptions:
        if pre.time > state.clock:
            remaining.append(pre)
            continue
        req = state.requests.get(pre.request_index)
        if req is None or req.state is not RequestState.DECODING:
            continue
        if in_psd:
            batch_id = state.bm.recycle(req.id)
            state.pending[batch_id].pop(req.id, None)
        else:
            state.sd_members.pop(req.id, None)
        req.batch_id = None
        req.transition(RequestState.PREEMPTED)
        state.kv.release(req.id)
        applied += 1
    state.preemptions = remaining
    return applied


def _check_verify_capacity(config: SimConfig, tokens: int, scale: int = 1) -> None:
    cap = config.effective_capacity * scale
    if tokens > cap:
        raise ProtocolError(
            f"verifier capacity exceeded: {tokens} drafted tokens in one pass, "
            f"capacity {cap}"
        )


def _psd_step(state: EngineState, config: SimConfig) -> StepRecord:
    bm = state.bm
    running = bm.size_of(0) + bm.size_of(1)
    if running == 0 and not state.newly_admitted:
        _advance_to_arrivals(state, running)
        _admit_psd(state)
        if not state.newly_admitted:
            raise ProtocolError("no request could be admitted to an empty engine")

    step_index = state.step_index + 1
    prefill_ids = tuple(state.newly_admitted)
    state.newly_admitted = []
    prefill_tokens = sum(state.requests[rid].prompt_len for rid in prefill_ids)
    prefill_dur = config.verify_latency.duration(prefill_tokens, len(prefill_ids))

    startup = not bm.first_step_done
    target = bm.target_batch
    skip = bm.skip_batch
    target_ids = bm.members_of(target)
    skip_ids = bm.members_of(skip)
    comm = config.comm_overhead

    draft_info: dict[int, tuple[int, float]] = {}
    fallback = False

    if startup and target_ids and skip_ids:
        # Bootstrap: draft the target batch serially, then verify it while the
        # skip batch gets its first drafts.  With fewer than two requests one
        # batch is empty and there is nothing to overlap, so that case takes
        # the serial fallback branch below instead.
        quotas = {rid: _draft_quota(state, config, rid) for rid in target_ids}
        quotas.update({rid: _draft_quota(state, config, rid) for rid in skip_ids})
        t_tokens = sum(quotas[rid] for rid in target_ids)
        s_tokens = sum(quotas[rid] for rid in skip_ids)
        d_target = config.draft_latency.duration(t_tokens, len(target_ids))
        d_skip = config.draft_latency.duration(s_tokens, len(skip_ids))
        for rid in target_ids:
            draft_info[rid] = (quotas[rid], d_target)
        for rid in skip_ids:
            draft_info[rid] = (quotas[rid], d_skip)
        verify_ids = list(target_ids)
        verify_drafts = {
            rid: PendingDraft(*draft_info[rid]) for rid in target_ids
        }
        drafted_tokens = t_tokens + s_tokens
        draft_dur = d_target + d_skip
        record_target: int | None = target
        pre_overlap = d_target
        overlap_draft = d_skip
    elif state.pending[target]:
        # Normal overlapped step.
        quotas = {rid: _draft_quota(state, config, rid) for rid in skip_ids}
        s_tokens = sum(quotas.values())
        d_skip = config.draft_latency.duration(s_tokens, len(skip_ids))
        for rid in skip_ids:
            draft_info[rid] = (quotas[rid], d_skip)
        verify_ids = list(target_ids)
        verify_drafts = state.pending[target]
        drafted_tokens = s_tokens
        draft_dur = d_skip
        record_target = target
        pre_overlap = 0.0
        overlap_draft = d_skip
    else:
        # The target batch has nothing pre-drafted: fall back to plain
        # speculative decoding on whichever batch still has requests.
        if config.mode == "psd-fallback-disabled":
            raise ProtocolError(
                f"step {step_index}: target batch {target} has no pre-drafted "
                "tokens and fallback is disabled"
            )
        fallback = True
        if state.pending[0] or state.pending[1]:
            raise ProtocolError("stale pending drafts at fallback entry")
        eff_ids = target_ids if target_ids else skip_ids
        quotas = {rid: _draft_quota(state, config, rid) for rid in eff_ids}
        eff_tokens = sum(quotas.values())
        d_eff = config.draft_latency.duration(eff_tokens, len(eff_ids))
        for rid in eff_ids:
            draft_info[rid] = (quotas[rid], d_eff)
        verify_ids = list(eff_ids)
        verify_drafts = {rid: PendingDraft(*draft_info[rid]) for rid in eff_ids}
        drafted_tokens = eff_tokens
        draft_dur = d_eff
        record_target = target if target_ids else skip
        pre_overlap = 0.0
        overlap_draft = 0.0

    ctx = AllocationContext(
        prefill_ids=prefill_ids,
        decode_ids=tuple(bm.members_of(0) + bm.members_of(1)),
        draft_batch_ids=frozenset(draft_info),
        batch_sizes=(bm.size_of(0), bm.size_of(1)),
    )
    # Grants may land on either side of the overlap, so sizing covers the
    # drafting batch and the pending drafts of the batch being verified.
    sizing = dict(draft_info)
    for rid, pend in verify_drafts.items():
        sizing.setdefault(rid, (pend.tokens, pend.draft_time))
    allocated_ids, skipped_ids = _run_allocations(state, config, ctx, sizing)
    _prefill_commit(state, prefill_ids)

    verify_tokens_planned = sum(d.tokens for d in verify_drafts.values())
    _check_verify_capacity(config, verify_tokens_planned)
    verify_dur = config.verify_latency.duration(verify_tokens_planned, len(verify_ids))

    _, accepted, bonus, finished = _verify_batch(
        state, config, verify_ids, verify_drafts
    )

    if fallback:
        step_dur = prefill_dur + draft_dur + verify_dur
    elif startup:
        step_dur = (
            prefill_dur + pre_overlap + comm + max(verify_dur, overlap_draft) + comm
        )
    else:
        step_dur = prefill_dur + max(verify_dur, overlap_draft) + comm

    if not fallback:
        # Only the skip batch's fresh drafts pend for the next verification;
        # the target batch's drafts (startup case) were consumed above.
        for rid in skip_ids:
            if rid not in finished:
                state.pending[skip][rid] = PendingDraft(*draft_info[rid])

    state.clock += step_dur
    state.kv_log.append(
        KvStepRecord(
            step_index=step_index,
            allocated_ids=allocated_ids,
            skipped_ids=skipped_ids,
            blocks_in_use=state.kv.total_blocks_in_use,
        )
    )
    _finish_requests(state, finished, in_psd=True)
    _apply_preemptions(state, in_psd=True)
    bm.alternate_skip()
    _admit_psd(state)

    return StepRecord(
        step_index=step_index,
        target_batch=record_target,
        draft_batch=skip if not fallback else record_target,
        drafted_tokens=drafted_tokens,
        accepted_tokens=accepted,
        bonus_tokens=bonus,
        draft_duration=draft_dur,
        verify_duration=verify_dur,
        prefill_duration=prefill_dur,
        step_duration=step_dur,
        fallback=fallback,
    )


def _sd_step(state: EngineState, config: SimConfig) -> StepRecord:
    if not state.sd_members and not state.newly_admitted:
        _advance_to_arrivals(state, 0)
        _admit_sd(state, config)
        if not state.newly_admitted:
            raise ProtocolError("no request could be admitted to an empty engine")

    step_index = state.step_index + 1
    prefill_ids = tuple(state.newly_admitted)
    state.newly_admitted = []
    prefill_tokens = sum(state.requests[rid].prompt_len for rid in prefill_ids)
    prefill_dur = config.verify_latency.duration(prefill_tokens, len(prefill_ids))

    ids = list(state.sd_members)
    quotas = {rid: _draft_quota(state, config, rid) for rid in ids}
    tokens = sum(quotas.values())
    draft_dur = config.draft_latency.duration(tokens, len(ids))
    # Durations are settled before acceptance is drawn, so frontier-coupled
    # acceptance can key off this step's drafting time.
    draft_info = {rid: (quotas[rid], draft_dur) for rid in ids}

    ctx = AllocationContext(
        prefill_ids=prefill_ids,
        decode_ids=tuple(ids),
        draft_batch_ids=frozenset(ids),
        batch_sizes=(len(ids), 0),
    )
    decisions = {rid: ALLOCATE for rid in dict.fromkeys(prefill_ids + tuple(ids))}
    allocated: list[int] = []
    for rid in decisions:
        req = state.requests[rid]
        k_i, dt = draft_info.get(rid, (0, 0.0))
        planned = _planned_commit(state, config, rid, k_i, dt)
        state.kv.ensure_capacity(rid, req.prompt_len + req.generated + planned)
        allocated.append(rid)
    _prefill_commit(state, prefill_ids)

    _check_verify_capacity(config, tokens, scale=config.sd_batch_factor)
    verify_dur = config.verify_latency.duration(tokens, len(ids))
    drafts = {rid: PendingDraft(*draft_info[rid]) for rid in ids}
    _, accepted, bonus, finished = _verify_batch(state, config, ids, drafts)

    step_dur = prefill_dur + draft_dur + verify_dur
    state.clock += step_dur
    state.kv_log.append(
        KvStepRecord(
            step_index=step_index,
            allocated_ids=tuple(allocated),
            skipped_ids=(),
            blocks_in_use=state.kv.total_blocks_in_use,
        )
    )
    _finish_requests(state, finished, in_psd=False)
    _apply_preemptions(state, in_psd=False)
    _admit_sd(state, config)

    return StepRecord(
        step_index=step_index,
        target_batch=None,
        draft_batch=None,
        drafted_tokens=tokens,
        accepted_tokens=accepted,
        bonus_tokens=bonus,
        draft_duration=draft_dur,
        verify_duration=verify_dur,
        prefill_duration=prefill_dur,
        step_duration=step_dur,
        fallback=False,
    )


def step_once(state: EngineState, config: SimConfig) -> StepRecord:
    """Advance the engine by one step and append to the step log."""
    if config.mode == "standard-sd":
        record = _sd_step(state, config)
    else:
        record = _psd_step(state, config)
    state.step_log.append(record)
    state.step_index = record.step_index
    return record


def new_state(config: SimConfig, workload: list[Request]) -> EngineState:
    """Build a fresh engine state over the given requests."""
    config = validate_config(config)
    requests: dict[int, Request] = {}
    for req in workload:
        if req.id in requests:
            raise ProtocolError(f"duplicate request id {req.id}")
        if req.state is not RequestState.WAITING:
            raise ProtocolError(f"request {req.id} must start in the waiting state")
        requests[req.id] = req
    if not requests:
        raise ProtocolError("workload is empty")
    waiting = sorted(requests, key=lambda rid: (requests[rid].arrival_time, rid))
    return EngineState(
        config=config,
        requests=requests,
        waiting=waiting,
        bm=BatchManager(config.m, config.assign_policy),
        kv=KVBlockTable(config.block_size, config.kv_policy),
    )


def run(
    config: SimConfig,
    workload: list[Request],
    preemptions: list[Preemption] | None = None,
    max_steps: int = 5_000_000,
) -> tuple[EngineState, MetricsReport]:
    """Run the engine to completion; return the final state and its metrics."""
    state = new_state(config, workload)
    if preemptions:
        for pre in preemptions:
            if pre.request_index not in state.requests:
                raise ProtocolError(
                    f"preemption targets unknown request {pre.request_index}"
                )
        state.preemptions = sorted(preemptions, key=lambda p: (p.time, p.request_index))
    while not _all_terminal(state):
        step_once(state, config)
        if state.step_index >= max_steps:
            raise ProtocolError(f"exceeded {max_steps} steps without finishing")
    report = compute_metrics(state.step_log, state.request_list(), state.kv_log)
    return state, report
