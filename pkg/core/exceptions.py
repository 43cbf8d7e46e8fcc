class QCSError(Exception):
    """Base error for quantizer design, reconstruction and experiments"""


class DomainError(QCSError, ValueError):
    """An argument lies outside the domain an operation is defined on"""


class ShapeError(DomainError):
    """Vector/matrix dimensions do not agree"""


class ConvergenceError(QCSError):
    """An iterative scheme stopped without meeting its tolerance"""

    def __init__(self, message: str, diagnostics: dict = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
