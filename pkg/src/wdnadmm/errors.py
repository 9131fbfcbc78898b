"""Exception hierarchy shared by the solver modules and the file loaders."""


class WdnError(Exception):
    """Base class for every error raised by this package."""

    kind = "error"

    def as_record(self):
        return {"error": self.kind, "message": str(self)}


class StructuralError(WdnError):
    """Network topology is unusable (dangling reference, disconnected node)."""

    kind = "structural"


class ParameterError(WdnError):
    """A physical or algorithmic parameter lies outside its admissible range."""

    kind = "parameter"


class NonconvergenceError(WdnError):
    """An iterative solver ran out of iterations or could not make progress."""

    kind = "nonconvergence"

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual

    def as_record(self):
        rec = super().as_record()
        if self.residual is not None:
            rec["residual"] = float(self.residual)
        return rec


class ParseError(WdnError):
    """Input file could not be parsed."""

    kind = "parse"


class UnitError(WdnError):
    """Unknown or inconsistent unit declaration in an input file."""

    kind = "unit"


class ValidationError(WdnError):
    """Parsed input violates a model invariant."""

    kind = "validation"

    def __init__(self, message, field=None):
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field

    def as_record(self):
        rec = super().as_record()
        if self.field is not None:
            rec["field"] = self.field
        return rec


class InfeasibleToleranceError(ValidationError):
    """Pressure range tolerance is below what the uncontrolled network achieves."""

    kind = "infeasible-delta"

    def __init__(self, message, node=None, baseline_range=None):
        super().__init__(message)
        self.node = node
        self.baseline_range = baseline_range

    def as_record(self):
        rec = super().as_record()
        rec["node"] = self.node
        if self.baseline_range is not None:
            rec["baseline_range"] = float(self.baseline_range)
        return rec
