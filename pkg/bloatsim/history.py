"""Per-event trace recording for single-run debugging."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, List, Optional


@dataclass
class TraceRecord:
    """One line of the trace: an executed event or a component note."""

    time_ns: int
    seq: Optional[int]
    text: str

    def render(self) -> str:
        stamp = f"{self.time_ns / 1_000_000:14.6f} ms"
        if self.seq is None:
            return f"{stamp}         {self.text}"
        return f"{stamp} #{self.seq:<7d} {self.text}"


@dataclass
class EventTrace:
    """Keeps track of the executed events of one simulation run."""

    records: List[TraceRecord] = field(default_factory=list)
    max_records: Optional[int] = None
    truncated: bool = False

    def _append(self, record: TraceRecord) -> None:
        if self.max_records is not None and len(self.records) >= self.max_records:
            self.truncated = True
            return
        self.records.append(record)

    def add_event(self, time_ns: int, seq: int, label: str) -> None:
        self._append(TraceRecord(time_ns=time_ns, seq=seq, text=label))

    def add_note(self, time_ns: int, text: str) -> None:
        self._append(TraceRecord(time_ns=time_ns, seq=None, text=f"  {text}"))

    def to_text(self) -> str:
        """Return the human-readable trace, one record per line."""
        if not self.records:
            return "(No events executed.)"
        lines = [record.render() for record in self.records]
        if self.truncated:
            lines.append(f"... trace truncated at {self.max_records} records")
        return "\n".join(lines)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TraceRecord]:
        return iter(self.records)
