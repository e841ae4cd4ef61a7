"""Masked / SDC / DUE classification with cause attribution."""
import enum
from dataclasses import dataclass
from typing import Optional

from .isa.encoding import OperatorTag


class MismatchedTrace(ValueError):
    """Trial result and golden trace belong to different programs."""


class OutcomeKind(str, enum.Enum):
    MASKED = "MASKED"
    SDC = "SDC"
    DUE = "DUE"


class SdcCause(str, enum.Enum):
    NUMERIC = "NUMERIC"
    ADDRESS = "ADDRESS"


# Full DUE taxonomy.  E2 (MMU fault), E6 (bus error) and E7 (thermal) are
# hardware-only causes kept for schema completeness; the simulator has no
# mechanism that could produce them.
DUE_CAUSES_ALL = ("E1", "E2", "E3", "E4", "E5", "E6", "E7", "HANG")
DUE_CAUSES_EMITTED = ("E1", "E3", "E4", "E5", "HANG")
NEVER_EMITTED = frozenset({"E2", "E6", "E7"})


@dataclass(frozen=True)
class Outcome:
    kind: OutcomeKind
    due_cause: Optional[str] = None
    sdc_cause: Optional[SdcCause] = None
    first_inconsistent: Optional[OperatorTag] = None
    max_logit_dev: float = 0.0
    tokens_equal: bool = True

    def __post_init__(self):
        if (self.kind is OutcomeKind.DUE) != (self.due_cause is not None):
            raise ValueError("a DUE outcome needs a cause, and only a DUE has one")
        if self.due_cause is not None and self.due_cause not in DUE_CAUSES_EMITTED:
            raise ValueError(f"cause {self.due_cause} cannot be produced by the simulator")
        if self.kind is OutcomeKind.SDC and (self.tokens_equal or self.sdc_cause is None):
            raise ValueError("an SDC outcome has differing tokens and a sub-cause")
        if self.kind is OutcomeKind.MASKED and not self.tokens_equal:
            raise ValueError("a masked outcome has golden tokens")

    @property
    def abnormal(self):
        return self.kind is not OutcomeKind.MASKED


def attribute_sdc(raw) -> SdcCause:
    """ADDRESS when a tainted base register fed a completed memory access."""
    return SdcCause.ADDRESS if raw.tainted_address else SdcCause.NUMERIC


def first_inconsistent_operator(raw) -> Optional[OperatorTag]:
    return raw.first_diff_tag if raw.first_diff >= 0 else None


def classify(raw, golden) -> Outcome:
    if raw.program_digest != golden.program_digest:
        raise MismatchedTrace(f"result of program {raw.program_digest}, "
                              f"golden of {golden.program_digest}")
    first = first_inconsistent_operator(raw)
    if raw.trap is not None:
        return Outcome(OutcomeKind.DUE, due_cause=raw.trap.cause.value, first_inconsistent=first,
                       max_logit_dev=raw.max_logit_dev, tokens_equal=raw.tokens_equal)
    if not raw.tokens_equal:
        return Outcome(OutcomeKind.SDC, sdc_cause=attribute_sdc(raw), first_inconsistent=first,
                       max_logit_dev=raw.max_logit_dev, tokens_equal=False)
    return Outcome(OutcomeKind.MASKED, first_inconsistent=first,
                   max_logit_dev=raw.max_logit_dev, tokens_equal=True)
