"""Exception hierarchy shared by all manigrad modules."""


class ManigradError(Exception):
    """Base class for every error raised by manigrad."""


class ContractError(ManigradError, ValueError):
    """An argument violates a documented precondition."""


class PLYFormatError(ManigradError, ValueError):
    """Malformed or unsupported PLY content.

    ``offset`` is the byte offset into the file where parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class MeshValidationError(ManigradError, ValueError):
    """Mesh connectivity is invalid (bad indices, non-manifold or inconsistently oriented edges)."""

    def __init__(self, message, edges=None):
        super().__init__(message)
        self.edges = list(edges) if edges is not None else []


class DegenerateFaceError(ManigradError, ValueError):
    """A face has (numerically) zero area."""

    def __init__(self, message, faces=None):
        super().__init__(message)
        self.faces = list(faces) if faces is not None else []


class DegenerateFieldError(ManigradError, ValueError):
    """A tangent field query touched a vertex flagged as degenerate."""

    def __init__(self, message, vertices=None):
        super().__init__(message)
        self.vertices = list(vertices) if vertices is not None else []


class FactorizationError(ManigradError, ArithmeticError):
    """Cholesky factorization failed even after the maximal jitter."""


class ConvergenceError(ManigradError, RuntimeError):
    """An iterative solver or sampler failed to converge."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
