"""Named collections of measured quantities, serialisable to JSON records."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any


def _plain(value: Any) -> Any:
    # numpy scalars/arrays -> builtins so json output is stable
    if hasattr(value, "tolist"):
        return value.tolist()
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


@dataclass
class NormReport:
    """Measured norms, ratios or constants together with grid metadata.

    ``values`` maps quantity names to numbers; ``oracle`` optionally maps the
    same names to independently computed reference values.
    """

    name: str
    values: dict[str, Any] = field(default_factory=dict)
    grid: dict[str, Any] = field(default_factory=dict)
    oracle: dict[str, Any] = field(default_factory=dict)
    passed: bool | None = None
    notes: str = ""

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def records(self) -> list[dict[str, Any]]:
        out = []
        for key, value in self.values.items():
            rec = {"quantity": f"{self.name}.{key}", "grid": _plain(self.grid),
                   "value": _plain(value)}
            if key in self.oracle:
                rec["oracle_value"] = _plain(self.oracle[key])
            out.append(rec)
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "passed": self.passed,
            "grid": _plain(self.grid),
            "values": _plain(self.values),
            "oracle": _plain(self.oracle),
            "notes": self.notes,
        }

    def to_json(self, **kwargs: Any) -> str:
        kwargs.setdefault("indent", 2)
        kwargs.setdefault("sort_keys", True)
        return json.dumps(self.to_dict(), **kwargs)
