"""Exception hierarchy shared by all modules."""


class DgfemError(Exception):
    """Base class for library errors."""


class UnsupportedDimensionError(DgfemError):
    pass


class DegenerateElementError(DgfemError):
    def __init__(self, message, element_ids=()):
        super().__init__(message)
        self.element_ids = tuple(int(i) for i in element_ids)


class RefinementError(DgfemError):
    def __init__(self, message, element_ids=()):
        super().__init__(message)
        self.element_ids = tuple(int(i) for i in element_ids)


class MeshFormatError(DgfemError):
    """Malformed mesh or function file; ``line`` is 1-based."""

    def __init__(self, message, line=None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


class InvalidDataError(DgfemError):
    def __init__(self, message, element_id=None):
        super().__init__(message)
        self.element_id = element_id


class IncompatibleOperandsError(DgfemError):
    pass


class InvalidOperandError(DgfemError):
    pass


class SolverError(DgfemError):
    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class GeometryError(DgfemError):
    pass


class FixedPointError(DgfemError):
    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class UndefinedOscillationError(DgfemError):
    pass
