"""Paged KV-cache accounting with allocation deferral for draft batches.

Requests write tokens into fixed-size blocks.  The table tracks, per request,
how many tokens have been written and how many blocks are allocated, and
enforces that a write never runs past the allocated area.

Block growth is gated by schedule_allocation, called once per engine step.  The
default "deferred" policy exploits the draft/verify alternation: a decode
request only needs room at the step where its freshly drafted tokens will be
committed, so growth is scheduled only for requests in the batch currently
being drafted (plus anyone not yet scheduled at all, which covers the first
verification after admission).  Prefill requests always get room for the
prompt.  Once the scheduler has ever observed one batch empty, the alternation
is about to degrade, so from the next observation on it falls back to growing
every running request.  The "eager" policy simply grows everyone every step
and exists as the comparison baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import KVError

__all__ = ["blocks_needed", "AllocationContext", "KVBlockTable"]

ALLOCATE = "allocate"
SKIP = "skip"


def blocks_needed(tokens: int, block_size: int) -> int:
    """Blocks required to hold the given number of tokens."""
    if tokens < 0:
        raise ValueError(f"tokens must be nonnegative, got {tokens}")
    if block_size <= 0:
        raise ValueError(f"block size must be positive, got {block_size}")
    return -(-tokens // block_size)


@dataclass(frozen=True)
class AllocationContext:
    """What the allocation scheduler sees at the start of a step.

    prefill_ids are requests whose prompt is written this step; decode_ids are
    running requests in either batch; draft_batch_ids is the subset currently
    being drafted for.  A request newly admitted this step appears in both
    prefill_ids and decode_ids.  batch_sizes are the current sizes of batches
    0 and 1.
    """

    prefill_ids: tuple[int, ...]
    decode_ids: tuple[int, ...]
    draft_batch_ids: frozenset[int]
    batch_sizes: tuple[int, int]


class KVBlockTable:
    def __init__(self, block_size: int, policy: str = "deferred") -> None:
        if block_size <= 0:
            raise KVError(f"block size must be positive, got {block_size}")
        if policy not in ("deferred", "eager"):
            raise KVError(f"unknown kv policy {policy!r}")
        self.block_size = block_size
        self.policy = policy
        self.has_deferred: set[int] = set()
        self.empty_batch_seen = False
        self._written: dict[int, int] = {}
        self._allocated: dict[int, int] = {}

    def written_of(self, request_id: int) -> int:
        return self._written.get(request_id, 0)

    def allocated_of(self, request_id: int) -> int:
        return self._allocated.get(request_id, 0)

    @property
    def total_blocks_in_use(self) -> int:
        return sum(self._allocated.values())

    def schedule_allocation(self, ctx: AllocationContext) -> dict[int, str]:
        """Decide, per request, whether block growth happens this step.

        Returns an insertion-ordered mapping (prefill ids first) of request id
        to "allocate" or "skip".
        """
        decisions: dict[int, str] = {}
        if self.policy == "eager":
            for rid in ctx.prefill_ids:
                decisions[rid] = ALLOCATE
            for rid in ctx.decode_ids:
                decisions.setdefault(rid, ALLOCATE)
            return decisions

        one_empty = ctx.batch_sizes[0] == 0 or ctx.batch_sizes[1] == 0
        degraded = False
        if one_empty:
            if self.empty_batch_seen:
                degraded = True
            else:
                self.empty_batch_seen = True

        for rid in ctx.prefill_ids:
            decisions[rid] = ALLOCATE
        for rid in ctx.decode_ids:
            if rid in decisions:
                continue
            if degraded or rid not in self.has_deferred or rid in ctx.draft_batch_ids:
                decisions[rid] = ALLOCATE
            else:
                decisions[rid] = SKIP
        self.has_deferred.update(ctx.decode_ids)
        return decisions

    def ensure_capacity(self, request_id: int, total_tokens: int) -> int:
        """Grow the request's allocation to cover total_tokens; never shrinks.

        Returns the number of blocks added.
        """
        target = blocks_needed(total_tokens, self.block_size)
        current = self._allocated.get(request_id, 0)
        if request_id not in self._allocated:
            self._written.setdefault(request_id, 0)
            self._allocated[request_id] = 0
            current = 0
        if target <= current:
            return 0
        self._allocated[request_id] = target
        return target - current

    def commit_write(self, request_id: int, tokens: int) -> None:
        """Record tokens written; writing past the allocation is an error."""
        if tokens < 0:
            raise KVError(f"cannot commit a negative token count ({tokens})")
        if request_id not in self._allocated:
            raise KVError(f"request {request_id} has no block-table entry")
        new_written = self._written[request_id] + tokens
        limit = self._allocated[request_id] * self.block_size
        if new_written > limit:
            raise KVError(
                f"request {request_id}: write of {tokens} tokens overruns "
                f"allocation ({self._written[request_id]} written, "
                f"{limit} token capacity)"
            )
        self._written[request_id] = new_written

    def release(self, request_id: int) -> int:
        """Free a departing request's blocks; returns the count freed."""
        if request_id not in self._allocated:
            raise KVError(f"request {request_id} has no block-table entry")
        freed = self._allocated.pop(request_id)
        del self._written[request_id]
        self.has_deferred.discard(request_id)
        return freed
