"""Exception types shared across the package."""


class DomainError(ValueError):
    """A time or state lies outside the region where an object is defined."""


class ConvergenceError(RuntimeError):
    """An iterative construction (event location, shooting) failed to converge."""


class LevelNotCrossedError(ValueError):
    """Requested level is not attained by a scanned series."""


class EnvelopeError(ValueError):
    """A certified truncation or tail bound exceeds its tolerance target."""


class AdmissibilityError(ValueError):
    """No admissible shift time found within the search budget."""
