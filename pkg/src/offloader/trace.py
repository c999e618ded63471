"""Training-iteration trace model and its line-delimited file format.

A trace describes exactly one training iteration: the ordered GPU kernels
with their durations, and the tensors those kernels touch. All times are
integer microseconds and all sizes integer bytes; derived quantities use
exact integer arithmetic so downstream planning is deterministic. Kernel
start times are not stored, they are the prefix sums of the durations.

File format (UTF-8, one JSON object per line):

    {"version": 1, "meta": {...}}
    {"kernel": {"index": 0, "name": "fwd0", "duration_us": 10, "stage": null, "layer": null}}
    ... kernels in index order, then ...
    {"tensor": {"id": 0, "size_bytes": 4096, "kind": "intermediate", "accesses": [0, 4], "layer": null}}

Unknown keys are rejected so that version skew between a profiler and this
toolkit fails loudly instead of silently dropping information.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Iterable

TRACE_FORMAT_VERSION = 1


class TraceParseError(ValueError):
    """Structurally malformed trace stream. Carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class TraceValidationError(ValueError):
    """A structurally well-formed trace that violates a model invariant."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


class TensorKind(str, Enum):
    INTERMEDIATE = "intermediate"
    GLOBAL = "global"


@dataclass(frozen=True)
class KernelRecord:
    """One kernel launch. `duration_us` must be positive."""

    index: int
    name: str
    duration_us: int
    stage: int | None = None
    layer: int | None = None


@dataclass(frozen=True)
class TensorRecord:
    """One tensor with the ordered kernel indices at which it is used.

    Intermediate tensors live from their first to their last access; global
    tensors (weights, optimizer state) are allocated before the iteration and
    survive across iterations.
    """

    id: int
    size_bytes: int
    kind: TensorKind
    accesses: tuple[int, ...]
    layer: int | None = None

    @property
    def first_access(self) -> int:
        return self.accesses[0]

    @property
    def last_access(self) -> int:
        return self.accesses[-1]


@dataclass
class Trace:
    kernels: list[KernelRecord]
    tensors: list[TensorRecord]
    meta: dict = field(default_factory=dict)

    @property
    def num_kernels(self) -> int:
        return len(self.kernels)

    def kernel_start_times(self) -> list[int]:
        """Start time of each kernel: prefix sums of durations, kernel 0 at 0."""
        starts = []
        t = 0
        for k in self.kernels:
            starts.append(t)
            t += k.duration_us
        return starts

    def iteration_length(self) -> int:
        return sum(k.duration_us for k in self.kernels)

    def tensor_by_id(self) -> dict[int, TensorRecord]:
        return {t.id: t for t in self.tensors}


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, message: str) -> None:
        self.violations.append(message)


def validate_trace(trace: Trace) -> ValidationReport:
    """Check every model invariant; an empty report means the trace is valid."""
    report = ValidationReport()
    n = trace.num_kernels

    for pos, k in enumerate(trace.kernels):
        if k.index != pos:
            report.add(f"kernel at position {pos}: index {k.index} not contiguous")
        if k.duration_us <= 0:
            report.add(f"kernel {k.index}: duration {k.duration_us} must be > 0")

    seen_ids: set[int] = set()
    for t in trace.tensors:
        label = f"tensor {t.id}"
        if t.id in seen_ids:
            report.add(f"{label}: duplicate tensor id")
        seen_ids.add(t.id)
        if t.size_bytes <= 0:
            report.add(f"{label}: size {t.size_bytes} must be > 0")
        if not isinstance(t.kind, TensorKind):
            report.add(f"{label}: unknown kind {t.kind!r}")
        if len(t.accesses) == 0:
            report.add(f"{label}: accesses must be non-empty")
        else:
            for a, b in zip(t.accesses, t.accesses[1:]):
                if b <= a:
                    report.add(f"{label}: accesses {list(t.accesses)} not strictly increasing")
                    break
            for a in t.accesses:
                if not (0 <= a < n):
                    report.add(f"{label}: access index {a} out of range ({n} kernels)")
                    break
    return report


# --- file format -----------------------------------------------------------

_KERNEL_KEYS = {"index", "name", "duration_us", "stage", "layer"}
_KERNEL_REQUIRED = {"index", "name", "duration_us"}
_TENSOR_KEYS = {"id", "size_bytes", "kind", "accesses", "layer"}
_TENSOR_REQUIRED = {"id", "size_bytes", "kind", "accesses"}


def _require_int(value, what: str, line: int, allow_none: bool = False) -> int | None:
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise TraceParseError(f"{what} must be an integer, got {value!r}", line)
    return value


def _parse_kernel(obj: dict, line: int) -> KernelRecord:
    unknown = set(obj) - _KERNEL_KEYS
    if unknown:
        raise TraceParseError(f"unknown kernel keys {sorted(unknown)}", line)
    missing = _KERNEL_REQUIRED - set(obj)
    if missing:
        raise TraceParseError(f"kernel record missing keys {sorted(missing)}", line)
    if not isinstance(obj["name"], str):
        raise TraceParseError("kernel name must be a string", line)
    return KernelRecord(
        index=_require_int(obj["index"], "kernel index", line),
        name=obj["name"],
        duration_us=_require_int(obj["duration_us"], "kernel duration_us", line),
        stage=_require_int(obj.get("stage"), "kernel stage", line, allow_none=True),
        layer=_require_int(obj.get("layer"), "kernel layer", line, allow_none=True),
    )


def _parse_tensor(obj: dict, line: int) -> TensorRecord:
    unknown = set(obj) - _TENSOR_KEYS
    if unknown:
        raise TraceParseError(f"unknown tensor keys {sorted(unknown)}", line)
    missing = _TENSOR_REQUIRED - set(obj)
    if missing:
        raise TraceParseError(f"tensor record missing keys {sorted(missing)}", line)
    try:
        kind = TensorKind(obj["kind"])
    except ValueError:
        raise TraceParseError(f"unknown tensor kind {obj['kind']!r}", line) from None
    accesses = obj["accesses"]
    if not isinstance(accesses, list):
        raise TraceParseError("tensor accesses must be a list", line)
    return TensorRecord(
        id=_require_int(obj["id"], "tensor id", line),
        size_bytes=_require_int(obj["size_bytes"], "tensor size_bytes", line),
        kind=kind,
        accesses=tuple(_require_int(a, "tensor access", line) for a in accesses),
        layer=_require_int(obj.get("layer"), "tensor layer", line, allow_none=True),
    )


def parse_trace(data: bytes | str | IO) -> Trace:
    """Parse and validate a trace stream.

    Raises TraceParseError for malformed content (with the offending line
    number) and TraceValidationError when the parsed trace violates a model
    invariant.
    """
    if isinstance(data, bytes):
        text = data.decode("utf-8")
    elif isinstance(data, str):
        text = data
    else:
        raw = data.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw

    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise TraceParseError("missing header line", 1)

    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise TraceParseError(f"invalid JSON: {exc.msg}", 1) from None
    if not isinstance(header, dict) or set(header) - {"version", "meta"}:
        raise TraceParseError("header must be {\"version\": ..., \"meta\": {...}}", 1)
    if header.get("version") != TRACE_FORMAT_VERSION:
        raise TraceParseError(f"unsupported version {header.get('version')!r}", 1)
    meta = header.get("meta", {})
    if not isinstance(meta, dict):
        raise TraceParseError("meta must be an object", 1)

    kernels: list[KernelRecord] = []
    tensors: list[TensorRecord] = []
    for lineno, raw_line in enumerate(lines[1:], start=2):
        if not raw_line.strip():
            continue
        try:
            obj = json.loads(raw_line)
        except json.JSONDecodeError as exc:
            raise TraceParseError(f"invalid JSON: {exc.msg}", lineno) from None
        if not isinstance(obj, dict) or len(obj) != 1:
            raise TraceParseError("record must be a single-key object", lineno)
        key, body = next(iter(obj.items()))
        if not isinstance(body, dict):
            raise TraceParseError(f"{key} record body must be an object", lineno)
        if key == "kernel":
            if tensors:
                raise TraceParseError("kernel record after tensor records", lineno)
            kernels.append(_parse_kernel(body, lineno))
        elif key == "tensor":
            tensors.append(_parse_tensor(body, lineno))
        else:
            raise TraceParseError(f"unknown record type {key!r}", lineno)

    trace = Trace(kernels=kernels, tensors=tensors, meta=meta)
    report = validate_trace(trace)
    if not report.ok:
        raise TraceValidationError(report.violations)
    return trace


def write_trace(trace: Trace) -> bytes:
    """Serialize a trace; parse_trace(write_trace(t)) == t for valid traces."""
    out = io.StringIO()
    out.write(json.dumps({"version": TRACE_FORMAT_VERSION, "meta": trace.meta}))
    out.write("\n")
    for k in trace.kernels:
        out.write(json.dumps({"kernel": {
            "index": k.index,
            "name": k.name,
            "duration_us": k.duration_us,
            "stage": k.stage,
            "layer": k.layer,
        }}))
        out.write("\n")
    for t in trace.tensors:
        out.write(json.dumps({"tensor": {
            "id": t.id,
            "size_bytes": t.size_bytes,
            "kind": t.kind.value,
            "accesses": list(t.accesses),
            "layer": t.layer,
        }}))
        out.write("\n")
    return out.getvalue().encode("utf-8")


def load_trace(path) -> Trace:
    with open(path, "rb") as fh:
        return parse_trace(fh)


def save_trace(trace: Trace, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_trace(trace))


def make_trace(kernels: Iterable[KernelRecord], tensors: Iterable[TensorRecord],
               meta: dict | None = None) -> Trace:
    """Build and validate a trace in one step; raises on invariant violations."""
    trace = Trace(kernels=list(kernels), tensors=list(tensors), meta=meta or {})
    report = validate_trace(trace)
    if not report.ok:
        raise TraceValidationError(report.violations)
    return trace
