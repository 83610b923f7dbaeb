"""Pass/fail reporting for the standing-assumption validators.

Validators are necessary-condition checks on finite sample grids, never
proofs; failures are report entries, not exceptions.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    worst: float            # worst observed margin (>= 0 means pass)
    witness: dict = field(default_factory=dict)

    def __str__(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: worst margin {self.worst:.3e} {self.witness}"


@dataclass
class ValidationReport:
    subject: str
    checks: list[CheckResult] = field(default_factory=list)

    def add(self, name, passed, worst, **witness):
        self.checks.append(CheckResult(name=name, passed=bool(passed), worst=float(worst), witness=witness))

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def __str__(self):
        head = f"validation of {self.subject}: {'all-pass' if self.passed else 'FAILURES'}"
        return "\n".join([head] + ["  " + str(c) for c in self.checks])

    def to_dict(self) -> dict:
        return {
            "subject": self.subject,
            "passed": self.passed,
            "checks": [
                {"name": c.name, "passed": c.passed, "worst": c.worst, "witness": c.witness}
                for c in self.checks
            ],
        }
