"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class ZipkitError(Exception):
    exit_code = 1


class InputError(ZipkitError):
    """Malformed, missing or inconsistent input files."""

    exit_code = 2


class MissingBlobError(InputError):
    pass


class ShapeMismatchError(InputError):
    pass


class VersionMismatchError(InputError):
    pass


class TableError(ZipkitError):
    """Invalid latency table or an unreachable speedup target."""

    exit_code = 3


class NumericalError(ZipkitError):
    """Factorization failures and other numerical breakdowns."""

    exit_code = 4
