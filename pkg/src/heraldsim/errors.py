"""Exception types shared across the package."""


class LayoutError(ValueError):
    """Structural problem: mismatched dimensions, duplicate or unknown factor labels."""


class TruncationError(ValueError):
    """A Fock-space cutoff is too small for the requested state."""


class IntegrityError(RuntimeError):
    """A numerical invariant (trace, positivity, norm) was violated beyond tolerance."""


class ConvergenceError(RuntimeError):
    """A convergence gate (step halving, cutoff doubling) failed."""


class ConfigError(ValueError):
    """Invalid or unknown configuration input."""
