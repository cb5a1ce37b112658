"""
Cycle-cost model.

This is a model, not a measurement: each event counted by a runtime gets a
fixed cycle weight. The defaults are the smallest integer weights that keep
the expected orderings between run modes (baseline < heapsafe-nb < heapsafe
< softbc on heap-heavy workloads, with heapsafe running fewer instructions
at a lower IPC than softbc). A software check retires fewer instructions than
it spends cycles, so softbc also sits below the stall-free IPC of 1.
"""

from dataclasses import asdict, dataclass, fields
from typing import Dict, Optional

from components.safe_heap import InstructionProfile, OpCounters, RunMode
from workloads.generator import OpKind

# Config-file key -> CostModel field.
COST_KEYS: Dict[str, str] = {
    "plainInstr": "plain_instr",
    "softBoundsCheck": "soft_bounds_check",
    "blockingValidateStall": "blocking_validate_stall",
    "nbIssue": "nb_issue",
    "storeIssue": "store_issue",
    "freeIssue": "free_issue",
}


class InvalidCostWeight(ValueError):
    """A cost weight failed validation; ``field`` names the CostModel field."""

    def __init__(self, field: str, message: str):
        super().__init__(message)
        self.field = field


@dataclass(frozen=True)
class CostModel:
    plain_instr: int = 1
    soft_bounds_check: int = 8
    blocking_validate_stall: int = 4
    nb_issue: int = 1
    store_issue: int = 1
    free_issue: int = 1

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise InvalidCostWeight(f.name, f"cost weight {f.name} must be >= 0")
        if self.nb_issue > self.blocking_validate_stall:
            raise InvalidCostWeight("nb_issue", "a non-blocking issue cannot cost more than a blocking validate stall")

    @classmethod
    def with_overrides(cls, overrides: Dict[str, int]) -> "CostModel":
        """Build from config keys such as ``softBoundsCheck``."""
        values = asdict(cls())
        for key, value in overrides.items():
            values[COST_KEYS.get(key, key)] = value
        return cls(**values)

    def cycles(self, c: OpCounters) -> int:
        return (c.plain_instructions * self.plain_instr
                + c.soft_bounds_checks * self.soft_bounds_check
                + c.blocking_validates * self.blocking_validate_stall
                + c.nb_validates * self.nb_issue
                + c.store_issues * self.store_issue
                + c.free_issues * self.free_issue)

    @staticmethod
    def instructions(c: OpCounters, profile: Optional[InstructionProfile] = None) -> int:
        profile = profile or InstructionProfile()
        return (c.plain_instructions
                + c.soft_bounds_checks * profile.soft_check_instructions
                + c.blocking_validates + c.nb_validates + c.store_issues + c.free_issues)

    def protection_cycles(self, mode: RunMode, kind: OpKind,
                          profile: Optional[InstructionProfile] = None, tbi: bool = False) -> int:
        """Extra cycles one violation-free op costs in ``mode`` over baseline."""
        profile = profile or InstructionProfile()
        mode = RunMode(mode)
        if mode == RunMode.BASELINE or kind == OpKind.STACK_COPY:
            return 0
        extract = 0 if (tbi and mode.uses_engine) else profile.extract
        check = {
            RunMode.SOFTBC: self.soft_bounds_check,
            RunMode.HEAPSAFE: self.blocking_validate_stall,
            RunMode.HEAPSAFE_NB: self.nb_issue,
        }[mode]
        if kind == OpKind.COPY:
            return extract * self.plain_instr + 2 * check
        if kind == OpKind.ALLOC:
            store = self.soft_bounds_check if mode == RunMode.SOFTBC else self.store_issue
            return (profile.tag_management + profile.make_pointer) * self.plain_instr + store
        if kind == OpKind.FREE:
            free = self.soft_bounds_check if mode == RunMode.SOFTBC else self.free_issue
            return (extract + profile.tag_management) * self.plain_instr + free
        raise ValueError(f"no closed-form protection cost for {kind.value}")


@dataclass
class RunMetrics:
    mode: str
    total_cycles: int = 0
    instruction_count: int = 0
    violations_detected: int = 0
    detection_latency: int = 0
    partial: bool = False
    error: Optional[str] = None

    @property
    def ipc(self) -> float:
        return self.instruction_count / self.total_cycles if self.total_cycles else 0.0

    @classmethod
    def from_counters(cls, mode: RunMode, counters: OpCounters, cost: CostModel,
                      profile: Optional[InstructionProfile] = None) -> "RunMetrics":
        return cls(mode=RunMode(mode).value,
                   total_cycles=cost.cycles(counters),
                   instruction_count=cost.instructions(counters, profile))
