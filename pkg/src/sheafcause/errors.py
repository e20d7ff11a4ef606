"""Exception hierarchy. Each class carries a machine-readable code and the CLI exit status."""


class SheafCauseError(Exception):
    code = "ERROR"
    exit_code = 5


class ParseError(SheafCauseError):
    code = "PARSE_ERROR"
    exit_code = 1


class ValidationError(SheafCauseError):
    code = "VALIDATION_ERROR"
    exit_code = 2

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class ShapeMismatchError(ValidationError):
    code = "SHAPE_MISMATCH"


class InvalidEventError(ValidationError):
    code = "INVALID_EVENT"


class InvalidDistributionError(ValidationError):
    code = "INVALID_DISTRIBUTION"


class EmptyLocalSectionsError(ValidationError):
    code = "EMPTY_LOCAL_SECTIONS"

    def __init__(self, block):
        super().__init__(f"block {list(block)!r} has no locally consistent sections")
        self.block = tuple(block)


class CapExceededError(SheafCauseError):
    code = "CAP_EXCEEDED"
    exit_code = 3

    def __init__(self, message, required=None, cap=None):
        super().__init__(message)
        self.required = required
        self.cap = cap


class TotalityError(SheafCauseError):
    code = "TOTALITY_ERROR"
    exit_code = 4

    def __init__(self, node, own_state, inputs):
        super().__init__(
            f"kernel of node {node!r} is undefined for own state {own_state} "
            f"and incoming edge states {tuple(inputs)}"
        )
        self.node = node
        self.own_state = own_state
        self.inputs = tuple(inputs)


class InvariantBreachError(SheafCauseError):
    code = "INVARIANT_BREACH"
    exit_code = 5
