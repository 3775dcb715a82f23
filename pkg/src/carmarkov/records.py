"""Check records shared by the verification routines."""
import math
from dataclasses import asdict, dataclass

KINDS = ("check", "control", "info")


@dataclass(frozen=True)
class CheckRecord:
    """Outcome of one numerical check.

    ``kind`` is ``check`` (passes when residual < tolerance), ``control``
    (a negative control: passes when the targeted check fails, i.e.
    residual >= tolerance) or ``info`` (reported, never gating).
    """
    check: str
    anchor: str
    residual: float
    tolerance: float
    kind: str = "check"
    detail: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        object.__setattr__(self, "residual", float(self.residual))
        object.__setattr__(self, "tolerance", float(self.tolerance))

    @property
    def passed(self):
        if math.isnan(self.residual):
            return False
        below = self.residual < self.tolerance
        return not below if self.kind == "control" else below

    @property
    def gating(self):
        return self.kind != "info"

    def as_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        return d


def all_passed(records):
    return all(r.passed for r in records if r.gating)


def failures(records):
    return [r for r in records if r.gating and not r.passed]


def worst(records, check):
    """Largest residual among records with the given check id."""
    vals = [r.residual for r in records if r.check == check]
    return max(vals) if vals else float("nan")
