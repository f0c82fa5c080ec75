"""Exception hierarchy shared by every module of the package."""


class DomainError(ValueError):
    """An argument lies outside the domain where a model or formula is valid."""


class DegenerateAuctionError(DomainError):
    """All bids are zero, so proportional allocation is undefined."""


class NumericalError(RuntimeError):
    """A numerical routine (bracketing, root finding) failed to converge."""


class ScenarioError(ValueError):
    """A scenario file could not be parsed or violates an invariant."""


class ExperimentError(RuntimeError):
    """Too many Monte Carlo trials failed for the experiment to be trusted."""
