"""Exception types shared across the pipeline."""


class VitalguardError(Exception):
    """Base class for all pipeline errors."""


# --- dataset ---

class MalformedRow(VitalguardError):
    def __init__(self, line, n_fields=None):
        self.line = line
        self.n_fields = n_fields
        super().__init__(f"line {line}: expected 24 numeric fields, got {n_fields}")


class EmptyRecording(VitalguardError):
    pass


class ParseError(VitalguardError):
    def __init__(self, line, col, token):
        self.line = line
        self.col = col
        self.token = token
        super().__init__(f"line {line}, field {col}: non-numeric token {token!r}")


class WindowTooLong(VitalguardError):
    pass


class MissingBaseline(VitalguardError):
    def __init__(self, activity):
        self.activity = activity
        super().__init__(f"no baseline for activity {activity}")


# --- noise ---

class InvalidSpec(VitalguardError):
    pass


# --- denoise ---

class BadStep(VitalguardError):
    pass


class NoData(VitalguardError):
    pass


class ModelNotReady(VitalguardError):
    pass


# --- text ---

class UnknownCode(VitalguardError):
    def __init__(self, code):
        self.code = code
        super().__init__(f"unknown condition code {code!r}")


class BadDimension(VitalguardError):
    pass


class AdapterUnavailable(VitalguardError):
    pass


# --- gate ---

class DuplicateExpert(VitalguardError):
    pass


class TagCollision(VitalguardError):
    def __init__(self, tag, owner):
        self.tag = tag
        self.owner = owner
        super().__init__(f"tag {tag!r} already owned by expert {owner!r}")


class UnknownExpert(VitalguardError):
    pass


# --- agent ---

class ShapeError(VitalguardError):
    pass


class InsufficientReplay(VitalguardError):
    pass


class PersistFormatError(VitalguardError):
    pass


# --- feedback ---

class UnparseableFeedback(VitalguardError):
    pass


class UnknownSlot(VitalguardError):
    pass


# --- protocol ---

class FrameTooLarge(VitalguardError):
    pass


class IncompleteFrame(VitalguardError):
    pass


class MalformedPayload(VitalguardError):
    pass


class ProtocolError(VitalguardError):
    pass


class HubUnreachable(VitalguardError):
    pass
