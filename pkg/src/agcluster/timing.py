"""Phase-time breakdown of a generation run and its plain-text report."""

from __future__ import annotations

import re
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass

REPORT_LABELS = (
    "phase 1 total",
    "phase 2 total",
    "phase 3 total",
    "- comm prep",
    "- transport send/recv",
    "- merging states",
    "- merging edges",
    "total time",
)

_FIELDS = (
    "phase1_total",
    "phase2_total",
    "phase3_total",
    "comm_prep",
    "send_recv",
    "merging_states",
    "merging_edges",
    "total_time",
)

_LINE = re.compile(r"^(?P<label>-? ?[a-z0-9 /]+): (?P<value>\d+(?:\.\d+)?) seconds$")


@dataclass
class PhaseProfile:
    phase1_total: float = 0.0
    phase2_total: float = 0.0
    phase3_total: float = 0.0
    comm_prep: float = 0.0
    send_recv: float = 0.0
    merging_states: float = 0.0
    merging_edges: float = 0.0
    total_time: float = 0.0
    states: int = 0
    edges: int = 0
    duplicates_dropped: int = 0
    messages_sent: int = 0
    bytes_sent: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def violations(self, slack: float = 0.05) -> list[str]:
        out = []
        phases = self.phase1_total + self.phase2_total + self.phase3_total
        if self.total_time < phases * (1 - slack):
            out.append(f"total_time {self.total_time:.4f} < sum of phases {phases:.4f}")
        for name in ("comm_prep", "send_recv", "merging_states", "merging_edges"):
            if getattr(self, name) > self.phase3_total * (1 + slack) + 1e-6:
                out.append(f"{name} exceeds phase3_total")
        return out


def emit_profile_report(p: PhaseProfile) -> str:
    lines = [f"{label}: {getattr(p, name):.2f} seconds" for label, name in zip(REPORT_LABELS, _FIELDS)]
    return "\n".join(lines) + "\n"


def parse_profile_report(text: str) -> dict[str, float]:
    """Parse a report back into ``{label: seconds}``; raises ValueError on any stray line."""
    out: dict[str, float] = {}
    for raw in text.strip().splitlines():
        m = _LINE.match(raw.strip("\r"))
        if m is None:
            raise ValueError(f"unparseable report line {raw!r}")
        label = m["label"]
        if label not in REPORT_LABELS or label in out:
            raise ValueError(f"unexpected or repeated label {label!r}")
        out[label] = float(m["value"])
    if tuple(out) != REPORT_LABELS:
        raise ValueError(f"labels missing or out of order: {list(out)}")
    return out


class Stopwatch:
    """Accumulates elapsed wall time per named bucket."""

    def __init__(self) -> None:
        self.totals: dict[str, float] = {}

    @contextmanager
    def time(self, bucket: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.totals[bucket] = self.totals.get(bucket, 0.0) + time.perf_counter() - t0

    def get(self, bucket: str) -> float:
        return self.totals.get(bucket, 0.0)
