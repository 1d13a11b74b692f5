"""Exception types shared across the package.

Every error carries a stable ``code`` string so the HTTP layer and the
worker protocol can map failures without string-matching messages.
"""

from __future__ import annotations


class AnnoflowError(Exception):
    code = "error"

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.message = message
        self.context = context


class TemplateParseError(AnnoflowError):
    code = "template_parse"

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        super().__init__(message, line=line, column=column)
        self.line = line
        self.column = column


class InvalidTemplateError(AnnoflowError):
    """Raised when an operation requires a template with no violations."""

    code = "invalid_template"

    def __init__(self, message: str, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class BindingError(AnnoflowError):
    code = "binding"


class MissingBindingError(BindingError):
    code = "missing_binding"

    def __init__(self, element_id: str, parameter: str):
        super().__init__(f"element {element_id!r} is missing required parameter {parameter!r}")
        self.element_id = element_id
        self.parameter = parameter


class BindingTypeError(BindingError):
    code = "binding_type"


class StateError(AnnoflowError):
    """An operation was attempted against an entity in the wrong state."""

    code = "invalid_state"


class LogCorruptionError(AnnoflowError):
    """The persisted event log violates its ordering invariants."""

    code = "corrupt_log"

    def __init__(self, message: str, event_index: int):
        super().__init__(message, event_index=event_index)
        self.event_index = event_index


class LeaseError(AnnoflowError):
    code = "lease"


class LeaseExpiredError(LeaseError):
    code = "lease_expired"


class NotAssignedError(LeaseError):
    code = "not_assigned"


class ActionNotAllowedError(AnnoflowError):
    code = "action_not_allowed"


class LabelScopeError(AnnoflowError):
    code = "label_out_of_scope"


class GeometryError(AnnoflowError):
    code = "bad_geometry"


class InvalidAnnotationError(AnnoflowError):
    code = "invalid_annotation"


class UnknownEntityError(AnnoflowError):
    code = "unknown_entity"


class DuplicateError(AnnoflowError):
    code = "duplicate"


class ConflictError(AnnoflowError):
    code = "conflict"


class EvaluationError(AnnoflowError):
    code = "evaluation"


class StorageError(AnnoflowError):
    code = "storage"


class SessionError(AnnoflowError):
    code = "session_required"
