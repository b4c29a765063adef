"""Exception hierarchy shared by all feederguard modules."""


class FeederError(Exception):
    """Base class for every error raised by this package."""


class CaseError(FeederError, ValueError):
    """Malformed or inconsistent network case data."""


class TopologyError(CaseError):
    """The in-service branch set is not a tree rooted at the slack bus."""


class BoundsError(CaseError):
    """A DG unit or parameter lies outside its allowed range."""


class PowerFlowError(FeederError):
    """Power flow could not produce a usable solution."""


class ScenarioError(FeederError):
    """A scenario file is invalid or one of its actions failed."""
