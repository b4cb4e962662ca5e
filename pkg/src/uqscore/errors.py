"""Typed errors raised across the package.

Every error carries a short machine-readable ``kind`` so the command line can
print ``<kind>: <detail>`` on a single line.
"""


class UqScoreError(Exception):
    kind = "error"

    def __init__(self, detail: str = ""):
        super().__init__(detail)
        self.detail = detail

    def __str__(self) -> str:
        return f"{self.kind}: {self.detail}" if self.detail else self.kind


class InvalidParameter(UqScoreError, ValueError):
    kind = "invalid-parameter"


class MetricUndefined(UqScoreError, ValueError):
    """Raised instead of returning NaN when a metric has no comparable pairs."""

    kind = "metric-undefined"


class DegenerateData(UqScoreError, ValueError):
    kind = "degenerate-data"


class JoinFailure(UqScoreError, KeyError):
    kind = "join-failure"

    def __init__(self, missing):
        self.missing = sorted(missing)
        shown = ",".join(self.missing[:10])
        more = f" (+{len(self.missing) - 10} more)" if len(self.missing) > 10 else ""
        super().__init__(f"unmatched ids {shown}{more}")


class InfeasibleBudget(UqScoreError, ValueError):
    kind = "infeasible-budget"


class SchemaError(UqScoreError, ValueError):
    kind = "schema-error"

    def __init__(self, detail: str, line: int | None = None):
        self.line = line
        if line is not None:
            detail = f"line {line}: {detail}"
        super().__init__(detail)
