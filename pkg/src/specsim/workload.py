"""Workload construction: arrival processes, length distributions, trace files,
and preemption injections.

Request generation is deterministic for a given seed.  Per request the draws
happen in a fixed order (prompt length, output length, inter-arrival gap) from
a dedicated RNG stream, so changing unrelated config does not shift the
workload.

Trace files are plain text, one request per line:

    prompt_len,output_len[,arrival_time]

Blank lines and lines starting with '#' are skipped.  If any row carries an
arrival time, every row must, and those times replace the configured arrival
process.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .acceptance_model import mix_stream_key
from .errors import WorkloadError
from .request_model import Request

__all__ = [
    "LengthSpec",
    "Preemption",
    "TraceRow",
    "WorkloadSpec",
    "parse_trace",
    "parse_preemptions",
    "generate_requests",
]

ARRIVAL_KINDS = ("all-at-once", "poisson")

# Stream label for workload draws, distinct from any request id.
_WORKLOAD_TAG = 0x776B6C64


@dataclass(frozen=True)
class LengthSpec:
    """How one length field is produced: a constant, uniform:LO:HI, or trace."""

    kind: str
    value: int = 0
    lo: int = 0
    hi: int = 0

    @staticmethod
    def parse(text: str, field: str, minimum: int) -> "LengthSpec":
        text = text.strip()
        if text == "trace":
            return LengthSpec("trace")
        if text.startswith("uniform:"):
            parts = text.split(":")
            if len(parts) != 3:
                raise WorkloadError(
                    f"{field}: expected uniform:LO:HI, got {text!r}"
                )
            try:
                lo, hi = int(parts[1]), int(parts[2])
            except ValueError as exc:
                raise WorkloadError(f"{field}: non-integer bound in {text!r}") from exc
            if lo < minimum or hi < lo:
                raise WorkloadError(
                    f"{field}: bounds must satisfy {minimum} <= LO <= HI, got {text!r}"
                )
            return LengthSpec("uniform", lo=lo, hi=hi)
        try:
            value = int(text)
        except ValueError as exc:
            raise WorkloadError(
                f"{field}: expected an integer, uniform:LO:HI, or trace, got {text!r}"
            ) from exc
        if value < minimum:
            raise WorkloadError(f"{field}: must be at least {minimum}, got {value}")
        return LengthSpec("constant", value=value)

    def draw(self, rng: random.Random) -> int:
        if self.kind == "constant":
            return self.value
        if self.kind == "uniform":
            return rng.randint(self.lo, self.hi)
        raise WorkloadError(f"length kind {self.kind!r} needs a trace row")


@dataclass(frozen=True)
class Preemption:
    """Kick request_index out of the engine at the first sync point at or
    after `time`."""

    request_index: int
    time: float


@dataclass(frozen=True)
class TraceRow:
    prompt_len: int
    output_len: int
    arrival_time: float | None


@dataclass(frozen=True)
class WorkloadSpec:
    arrival: str = "all-at-once"
    rate: float = 0.0
    count: int | None = None
    prompt_len: LengthSpec = LengthSpec("constant", value=32)
    output_len: LengthSpec = LengthSpec("constant", value=128)
    trace_path: str | None = None
    preemptions: tuple[Preemption, ...] = ()


def parse_trace(path: str) -> list[TraceRow]:
    rows: list[TraceRow] = []
    saw_arrival = False
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise WorkloadError(f"cannot read trace {path!r}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) not in (2, 3):
            raise WorkloadError(
                f"{path}:{lineno}: expected prompt_len,output_len[,arrival_time]"
            )
        try:
            prompt_len = int(parts[0])
            output_len = int(parts[1])
        except ValueError as exc:
            raise WorkloadError(f"{path}:{lineno}: non-integer length") from exc
        arrival: float | None = None
        if len(parts) == 3:
            try:
                arrival = float(parts[2])
            except ValueError as exc:
                raise WorkloadError(f"{path}:{lineno}: bad arrival time") from exc
            if arrival < 0.0:
                raise WorkloadError(f"{path}:{lineno}: negative arrival time")
            saw_arrival = True
        elif saw_arrival:
            raise WorkloadError(
                f"{path}:{lineno}: arrival time missing but earlier rows have one"
            )
        if prompt_len < 0:
            raise WorkloadError(f"{path}:{lineno}: negative prompt length")
        if output_len <= 0:
            raise WorkloadError(f"{path}:{lineno}: output length must be positive")
        rows.append(TraceRow(prompt_len, output_len, arrival))
    if not rows:
        raise WorkloadError(f"{path}: trace has no usable rows")
    if saw_arrival and any(row.arrival_time is None for row in rows):
        raise WorkloadError(
            f"{path}: arrival times must be given on every row or none"
        )
    return rows


def parse_preemptions(text: str) -> tuple[Preemption, ...]:
    """Parse "IDX@TIME IDX@TIME ..." into preemption injections."""
    out: list[Preemption] = []
    for token in text.split():
        if "@" not in token:
            raise WorkloadError(f"preemption {token!r}: expected IDX@TIME")
        idx_text, time_text = token.split("@", 1)
        try:
            idx = int(idx_text)
            when = float(time_text)
        except ValueError as exc:
            raise WorkloadError(f"preemption {token!r}: expected IDX@TIME") from exc
        if idx < 0 or when < 0.0:
            raise WorkloadError(f"preemption {token!r}: index and time must be >= 0")
        out.append(Preemption(idx, when))
    return tuple(out)


def generate_requests(spec: WorkloadSpec, seed: int) -> list[Request]:
    """Materialise the request list described by the spec."""
    if spec.arrival not in ARRIVAL_KINDS:
        raise WorkloadError(f"unknown arrival kind {spec.arrival!r}")

    rows: list[TraceRow] | None = None
    needs_trace = "trace" in (spec.prompt_len.kind, spec.output_len.kind)
    if spec.trace_path is not None:
        rows = parse_trace(spec.trace_path)
    elif needs_trace:
        raise WorkloadError("a length field says 'trace' but no trace path is set")

    if rows is not None:
        count = len(rows) if spec.count is None else spec.count
        if count > len(rows):
            raise WorkloadError(
                f"count={count} but trace only has {len(rows)} rows"
            )
    else:
        if spec.count is None:
            raise WorkloadError("workload count is required without a trace")
        count = spec.count
    if count <= 0:
        raise WorkloadError(f"workload count must be positive, got {count}")

    if spec.arrival == "poisson" and not (spec.rate > 0.0):
        raise WorkloadError(f"poisson arrivals need a positive rate, got {spec.rate}")

    for pre in spec.preemptions:
        if pre.request_index >= count:
            raise WorkloadError(
                f"preemption targets request {pre.request_index} "
                f"but only {count} requests exist"
            )

    rng = random.Random(mix_stream_key(seed, _WORKLOAD_TAG))
    trace_arrivals = rows is not None and rows[0].arrival_time is not None

    requests: list[Request] = []
    clock = 0.0
    for i in range(count):
        row = rows[i] if rows is not None else None
        if spec.prompt_len.kind == "trace":
            prompt_len = row.prompt_len
        else:
            prompt_len = spec.prompt_len.draw(rng)
        if spec.output_len.kind == "trace":
            output_len = row.output_len
        else:
            output_len = spec.output_len.draw(rng)
        if trace_arrivals:
            arrival = row.arrival_time
        elif spec.arrival == "poisson":
            clock += rng.expovariate(spec.rate)
            arrival = clock
        else:
            arrival = 0.0
        requests.append(
            Request(
                id=i,
                arrival_time=arrival,
                prompt_len=prompt_len,
                target_output_len=output_len,
            )
        )
    return requests
