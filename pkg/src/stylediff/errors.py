"""Exception hierarchy shared by the package and the CLI.

Exit code convention: 1 usage/configuration error, 2 data/format error,
3 numerical failure (NaN abort).
"""


class StyleDiffError(Exception):
    exit_code = 1


class ConfigError(StyleDiffError):
    """Bad configuration or invalid arguments."""

    exit_code = 1


class DataFormatError(StyleDiffError):
    """Corrupt or incompatible file contents (mel binaries, manifests, checkpoints)."""

    exit_code = 2


class NumericalError(StyleDiffError):
    """Non-finite values where finite ones are required (e.g. NaN during sampling)."""

    exit_code = 3
