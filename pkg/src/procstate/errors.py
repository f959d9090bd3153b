"""Exception hierarchy shared by all modules."""


class ProcStateError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class SchemaError(ProcStateError, ValueError):
    """Malformed input file or configuration, with location coordinates."""

    exit_code = 2

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class DimensionError(SchemaError):
    """Tensor or grid dimensions disagree with the paragraph they belong to."""


DimensionMismatch = DimensionError


class InstanceTooLarge(ProcStateError, ValueError):
    exit_code = 2


class IllegalTransition(ProcStateError, ValueError):
    """A state change cannot be applied to the current entity state."""

    exit_code = 3

    def __init__(self, message, step=None, entity=None):
        self.step = step
        self.entity = entity
        if step is not None or entity is not None:
            message = f"{message} (step={step}, entity={entity})"
        super().__init__(message)


class GoldPathPruned(ProcStateError):
    """A gold step was rejected by the hard constraints during training."""

    exit_code = 3

    def __init__(self, message, paragraph_id=None, step=None):
        self.paragraph_id = paragraph_id
        self.step = step
        if paragraph_id is not None:
            message = f"paragraph {paragraph_id!r}: {message}"
        super().__init__(message)


class DeadEnd(ProcStateError):
    """No allowable expansion exists from a search node."""

    exit_code = 3


class MissingPrediction(ProcStateError, KeyError):
    exit_code = 3

    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__("no prediction for paragraph(s): " + ", ".join(self.missing))

    def __str__(self):
        return self.args[0]
