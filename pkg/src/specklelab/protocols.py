"""Exposure protocols: per-class schedules of camera exposure times.

Four protocol families are supported. A and B use a single exposure per
class (short and long respectively). C records different exposures
within one class, assigning lots in 2:2:1 proportion. D mixes lots from
A, B and C in 2:2:1 proportion, taking only C's longest exposure.

``reference_protocol`` returns the microsecond-scale reference tables
for classes 0.5 / 2.0 / 3.2 wt%; desk-scale simulations use their own
tables (see specklelab.config) scaled to the simulated decorrelation
times, since the protocol mechanism, not the absolute exposure, is what
transfers.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError

__all__ = ["ExposureProtocol", "reference_protocol", "REFERENCE_CLASSES"]

REFERENCE_CLASSES = ("0.5", "2.0", "3.2")

_US = 1e-6

# exposure [s] per class; C as (long, mid, short); D = (A, B, C-longest)
_REFERENCE_A = {"0.5": 0.6 * _US, "2.0": 0.2 * _US, "3.2": 0.1 * _US}
_REFERENCE_B = {"0.5": 4.0 * _US, "2.0": 2.0 * _US, "3.2": 1.0 * _US}
_REFERENCE_C = {
    "0.5": (4.5 * _US, 4.0 * _US, 3.5 * _US),
    "2.0": (3.0 * _US, 2.5 * _US, 2.0 * _US),
    "3.2": (1.5 * _US, 1.0 * _US, 0.5 * _US),
}


@dataclass(frozen=True)
class ExposureProtocol:
    """Schedule of (exposure seconds, lot share) entries per class label.

    Shares are interpreted relative to each other and scaled to the
    actual number of lots by largest remainder, so the canonical 2:2:1
    pattern holds exactly for 5 lots and proportionally otherwise.
    """

    tag: str
    schedule: dict[str, list[tuple[float, int]]]

    def __post_init__(self):
        if self.tag not in ("A", "B", "C", "D"):
            raise ConfigError(f"unknown protocol tag {self.tag!r}")
        for label, entries in self.schedule.items():
            if not entries:
                raise ConfigError(f"protocol {self.tag}: empty schedule for class {label}")
            if any(e <= 0 for e, _ in entries) or any(n <= 0 for _, n in entries):
                raise ConfigError(f"protocol {self.tag}: nonpositive entry for class {label}")
            if self.tag in ("A", "B") and len(entries) != 1:
                raise ConfigError(f"protocol {self.tag} must have a single exposure per class")
            if self.tag in ("C", "D"):
                shares = tuple(n for _, n in entries)
                if len(entries) != 3 or shares != (2, 2, 1):
                    raise ConfigError(f"protocol {self.tag} requires three exposures in 2:2:1 proportion")

    @property
    def classes(self) -> tuple[str, ...]:
        return tuple(self.schedule)

    def covers(self, class_labels) -> bool:
        return all(label in self.schedule for label in class_labels)

    def exposures_for_lots(self, class_label: str, n_lots: int) -> list[float]:
        """Exposure for each lot index 0..n_lots-1 of one class."""
        if class_label not in self.schedule:
            raise ConfigError(f"protocol {self.tag} does not cover class {class_label!r}")
        if n_lots < 1:
            raise ConfigError("n_lots must be >= 1")
        entries = self.schedule[class_label]
        shares = [n for _, n in entries]
        total = sum(shares)
        exact = [n_lots * s / total for s in shares]
        counts = [int(c) for c in exact]
        remainders = [c - int(c) for c in exact]
        for i in sorted(range(len(entries)), key=lambda i: (-remainders[i], i)):
            if sum(counts) == n_lots:
                break
            counts[i] += 1
        out: list[float] = []
        for (exposure, _), n in zip(entries, counts):
            out.extend([exposure] * n)
        return out


def reference_protocol(tag: str) -> ExposureProtocol:
    """Microsecond-scale reference exposure tables for the standard classes."""
    if tag == "A":
        schedule = {c: [(_REFERENCE_A[c], 1)] for c in REFERENCE_CLASSES}
    elif tag == "B":
        schedule = {c: [(_REFERENCE_B[c], 1)] for c in REFERENCE_CLASSES}
    elif tag == "C":
        schedule = {
            c: [(_REFERENCE_C[c][0], 2), (_REFERENCE_C[c][1], 2), (_REFERENCE_C[c][2], 1)]
            for c in REFERENCE_CLASSES
        }
    elif tag == "D":
        schedule = {
            c: [(_REFERENCE_A[c], 2), (_REFERENCE_B[c], 2), (_REFERENCE_C[c][0], 1)]
            for c in REFERENCE_CLASSES
        }
    else:
        raise ConfigError(f"unknown protocol tag {tag!r}")
    return ExposureProtocol(tag=tag, schedule=schedule)
