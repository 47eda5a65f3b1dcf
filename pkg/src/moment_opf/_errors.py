class MomentOpfError(Exception):
    """Base class for every error raised by the library."""


class CaseFormatError(MomentOpfError, ValueError):
    """A case file could not be parsed.

    Carries the 1-based ``line`` and the ``field`` (e.g. ``"branch[3][2]"``)
    where parsing stopped, when known.
    """

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        location = []
        if line is not None:
            location.append(f"line {line}")
        if field is not None:
            location.append(field)
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)


class CaseValidationError(MomentOpfError, ValueError):
    """A parsed case violates a network model invariant."""


class ModifierError(MomentOpfError, ValueError):
    """Case modifiers are inconsistent (e.g. V_min above V_max)."""


class UnknownMonomialError(MomentOpfError, KeyError):
    """A monomial was looked up that the relaxation never instantiated."""


class DisconnectedNetworkError(CaseValidationError):
    """The network graph has more than one island."""


class NonChordalGraphError(MomentOpfError, ValueError):
    """A graph expected to be chordal has no perfect elimination ordering."""


class OrderTooLowError(MomentOpfError, ValueError):
    """A constraint needs a higher relaxation order than its bus carries."""


class AssemblyError(MomentOpfError, ValueError):
    """The relaxation cannot be assembled for the given case."""


class MalformedProblemError(MomentOpfError, ValueError):
    """A conic problem is dimensionally inconsistent."""


class SignMergeConflictError(MomentOpfError):
    """Clique-local voltage vectors disagree on shared buses."""


class OrderCapError(MomentOpfError):
    """Escalation would raise a bus above the configured maximum order."""


class OracleDimensionError(MomentOpfError, ValueError):
    """The brute-force oracle was asked to scan too many variables."""
