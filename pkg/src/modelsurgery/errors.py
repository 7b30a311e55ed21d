class SurgeryError(Exception):
    """Base class for every error raised by the toolkit."""


class DomainError(SurgeryError, ValueError):
    pass


class DTypeError(SurgeryError, TypeError):
    pass


class ShapeError(SurgeryError):
    def __init__(self, message: str, node: str | None = None):
        super().__init__(f"{node}: {message}" if node else message)
        self.node = node


class GraphCycleError(SurgeryError):
    pass


class RewireError(SurgeryError):
    def __init__(self, report):
        super().__init__("rewrite produced an invalid graph:\n" + report.describe())
        self.report = report


class FeedError(SurgeryError):
    pass


class ApplicabilityError(SurgeryError):
    pass


class VerificationError(SurgeryError):
    pass


class ParseError(SurgeryError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


class VersionError(ParseError):
    pass
