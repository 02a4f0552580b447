"""Exception hierarchy shared by every hflow-lab module."""


class HflowError(Exception):
    """Base class for all library errors."""


class ConfigurationError(HflowError):
    """Invalid chart, recipe or run configuration."""


class SingularFrameError(HflowError):
    """A frame or gauge field is not invertible at some grid node."""

    def __init__(self, node, det):
        self.node = tuple(int(i) for i in node)
        self.det = float(det)
        super().__init__(f"singular frame at node {self.node}: |det| = {abs(self.det):.3e}")


class IllegalIndexError(HflowError):
    """An index operation was requested on an index of the wrong kind."""


class IdentityViolation(HflowError):
    """Two formulas that must agree by construction disagree (convention bug)."""


class ContinuationError(HflowError):
    """A development left the chart before reaching the end of its path."""


class FieldFileError(HflowError):
    """Malformed field file."""


class FieldFileVersionError(FieldFileError):
    pass


class FieldFileShapeError(FieldFileError):
    pass
