"""Exception hierarchy shared by every wireqc module."""


class WireQCError(Exception):
    """Base class for all wireqc errors."""


class InvalidParameterError(WireQCError, ValueError):
    """A physical parameter is outside its allowed domain."""


class WrongProfileError(InvalidParameterError):
    """Operation needs a different node detuning profile."""


class InfeasibleMatchingError(InvalidParameterError):
    """Matched atom number would be below one atom."""


class ResonantRegimeError(InvalidParameterError):
    """Dispersive formulas requested at zero detuning."""


class OverdampedRegimeError(InvalidParameterError):
    """Self-mode frequency would be imaginary."""


class BandwidthError(InvalidParameterError):
    """Signal bandwidth exceeds the simulated bandwidth."""


class TemporalCrowdingError(InvalidParameterError):
    """Adjacent temporal modes overlap too much."""


class UnsupportedConfigurationError(WireQCError):
    """Configuration outside what the simulator models."""


class AddressingError(WireQCError, LookupError):
    """Unknown node, bus, or mode index."""


class SequencingError(WireQCError):
    """Protocol steps requested in an impossible order."""


class SchedulingError(WireQCError):
    """Program cannot be compiled under the scheduling constraints."""


class ReachabilityError(SchedulingError):
    """Gate requested between nodes that do not share a bus."""


class ConsistencyError(WireQCError, ArithmeticError):
    """Numerical bookkeeping broke beyond tolerance."""


class RegimeError(WireQCError):
    """Simulated trace is not in the regime an extraction assumes."""


class ContractError(WireQCError, ValueError):
    """Input violates a documented contract."""
