"""Exception types shared across the package.

Each error carries the process exit code the command line front end uses
when the error escapes a subcommand.
"""


class PointScatterError(Exception):
    exit_code = 1


class UsageError(PointScatterError, ValueError):
    """Invalid parameters (aspect, coupling, thresholds)."""

    exit_code = 2


class PrecisionError(PointScatterError):
    """Two distinct norms of an irrational lattice fall within grouping tolerance."""

    exit_code = 3


class CoverageError(PointScatterError):
    """A request needs data beyond what a norm table or spectrum covers."""

    exit_code = 4


class PoleError(PointScatterError, ValueError):
    """Spectral parameter sits on a Laplace eigenvalue."""

    exit_code = 5


class BracketError(PointScatterError):
    """Root bracketing failed where the pole structure guarantees a root."""

    exit_code = 6


class CacheFormatError(PointScatterError):
    """A persisted norm table is truncated, corrupt or of another version."""

    exit_code = 7
