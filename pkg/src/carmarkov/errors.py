"""Exception hierarchy shared by all modules."""


class CarMarkovError(Exception):
    """Base class for library errors."""


class WindowError(CarMarkovError, ValueError):
    """A site, region or operator does not fit the window it is used with."""


class ConstraintError(CarMarkovError, ValueError):
    """Family parameters violate a construction precondition."""


class FaithfulnessError(CarMarkovError):
    """A density has an eigenvalue below the faithfulness floor."""


class ClassificationError(CarMarkovError):
    """A two-step expectation range does not match any admissible class."""


class InvariantError(CarMarkovError):
    """An internal consistency condition was violated."""


class ConfigError(CarMarkovError, ValueError):
    """Invalid run configuration."""
