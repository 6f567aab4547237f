"""Run configuration: one JSON file plus command-line overrides."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Optional

from .errors import InputError
from .search import BERT_TARGETS, DEFAULT_STEPS
from .store import DEFAULT_SAMPLE_BUDGET, read_json

EVALUATORS = ("proxy", "chain")


@dataclass
class RunConfig:
    model: Optional[str] = None
    calibration: Optional[str] = None
    latency_table: Optional[str] = None
    bench_batch: int = 128
    bench_reps: int = 7
    targets: list[float] = field(default_factory=lambda: list(BERT_TARGETS))
    damping: Optional[float] = None
    seed: int = 0
    sample_budget: int = DEFAULT_SAMPLE_BUDGET
    output: str = "zipkit-out"
    evaluator: str = "proxy"
    steps: int = DEFAULT_STEPS
    threads: Optional[int] = None

    def validate(self):
        self.targets = [float(t) for t in self.targets]
        if not self.targets:
            raise InputError("at least one speedup target required")
        if self.targets != sorted(self.targets) or self.targets[0] < 1.0:
            raise InputError("speedup targets must be ascending and at least 1.0")
        if self.sample_budget < 1:
            raise InputError("sample budget must be at least 1")
        if self.evaluator not in EVALUATORS:
            raise InputError(f"evaluator must be one of {EVALUATORS}")
        if self.steps < 0:
            raise InputError("steps must be non-negative")
        return self

    def as_dict(self) -> dict:
        return asdict(self)


def load_config(path: Optional[str] = None, **overrides) -> RunConfig:
    """Read ``path`` (if given) and apply non-None ``overrides``; overrides win."""
    values = {}
    if path:
        doc = read_json(path)
        known = {f.name for f in fields(RunConfig)}
        unknown = set(doc) - known
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        values.update(doc)
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise InputError(f"bad configuration: {exc}") from exc
    return cfg.validate()
