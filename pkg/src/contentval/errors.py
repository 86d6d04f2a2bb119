"""Exception hierarchy. The CLI maps InputError/ConfigError to exit 2, RemoteError to exit 3."""


class ContentValidityError(Exception):
    exit_code = 1


class InputError(ContentValidityError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 2


class ConfigError(ContentValidityError):
    """Missing or invalid configuration (thresholds, provider settings)."""

    exit_code = 2


class RemoteError(ContentValidityError):
    """A remote provider failed after all retries, or violated its wire contract."""

    exit_code = 3


class GenerationError(ContentValidityError):
    """A generator could not satisfy its constraints within its retry budget."""

    exit_code = 3
