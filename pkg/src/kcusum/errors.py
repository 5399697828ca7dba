"""Exception hierarchy shared by all modules."""


class KcusumError(Exception):
    """Base class for errors raised by this package."""


class InputError(KcusumError, ValueError):
    """Malformed observations: wrong dimension, non-finite values, too few points."""


class ConfigError(KcusumError, ValueError):
    """Invalid parameters such as a non-positive delta or bandwidth."""


class UndetectableChangeError(ConfigError):
    """The post-change law is within the detectability radius (mmd2 <= delta)."""


class UsageError(KcusumError, RuntimeError):
    """API misuse, e.g. stepping a detector that has already alarmed."""


class DataError(KcusumError, RuntimeError):
    """A data source could not deliver, e.g. an exhausted reference database."""
