"""Membership and role bookkeeping for the two decode batches.

One batch per step is the "skip" batch: it is being drafted for while the other
batch ("target") gets verified, and the roles swap at every sync point.  The
manager tracks membership, the size balance between the batches, and which
batch newly admitted or recycled requests should land in.

balance is |batch 1| - |batch 0|.  The default "skip-batch" policy balances the
very first assignment wave, then routes every later admission into the current
skip batch so the new request can be drafted for immediately; recycled slots go
to the opposite batch of the one they left, restoring the balance they
disturbed.  "always-balance" instead applies the balance rule to every
admission.
"""

from __future__ import annotations

from .errors import CapacityError, ProtocolError

__all__ = ["BatchManager"]


class BatchManager:
    def __init__(self, batch_capacity: int, policy: str = "skip-batch") -> None:
        if batch_capacity <= 0:
            raise ValueError(f"batch_capacity must be positive, got {batch_capacity}")
        if policy not in ("skip-batch", "always-balance"):
            raise ValueError(f"unknown assignment policy {policy!r}")
        self.batch_capacity = batch_capacity
        self.policy = policy
        self.balance = 0
        self.skip_batch = 1
        self.first_step_done = False
        # Insertion-ordered membership per batch; order drives deterministic
        # iteration in the engine.
        self._members: tuple[dict[int, None], dict[int, None]] = ({}, {})

    def members_of(self, batch_id: int) -> list[int]:
        return list(self._members[batch_id])

    def size_of(self, batch_id: int) -> int:
        return len(self._members[batch_id])

    def batch_of(self, request_id: int) -> int:
        for b in (0, 1):
            if request_id in self._members[b]:
                return b
        raise ProtocolError(f"request {request_id} is not in any batch")

    @property
    def target_batch(self) -> int:
        return 1 - self.skip_batch

    def _place(self, request_id: int, batch_id: int) -> int:
        if len(self._members[batch_id]) >= self.batch_capacity:
            raise CapacityError(
                f"batch {batch_id} is full ({self.batch_capacity} slots)"
            )
        self._members[batch_id][request_id] = None
        return batch_id

    def _balanced_choice(self) -> int:
        # balance >= 0 means batch 1 is at least as big, so fill batch 0.
        return 0 if self.balance >= 0 else 1

    def assign(self, request_id: int) -> int:
        """Place a new request and return its batch id."""
        for b in (0, 1):
            if request_id in self._members[b]:
                raise ProtocolError(f"request {request_id} is already assigned")
        if self.policy == "always-balance" or not self.first_step_done:
            batch_id = self._balanced_choice()
        else:
            batch_id = self.skip_batch
        self._place(request_id, batch_id)
        self.balance += 1 if batch_id == 1 else -1
        return batch_id

    def recycle(self, request_id: int) -> int:
        """Drop a departing request and return the batch it occupied."""
        for b in (0, 1):
            if request_id in self._members[b]:
                del self._members[b][request_id]
                # Removing from batch 0 shrinks it, raising balance, and
                # vice versa.
                self.balance += 1 if b == 0 else -1
                return b
        raise ProtocolError(f"request {request_id} is not in any batch")

    def alternate_skip(self) -> int:
        """Swap draft/verify roles at a sync point; returns the new skip batch."""
        self.skip_batch = 1 - self.skip_batch
        self.first_step_done = True
        return self.skip_batch
