"""Exception types shared across the package."""

from __future__ import annotations


class CommunityFlError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CommunityFlError, ValueError):
    """Dimension or length mismatch between weights, data, or signatures."""


class ConfigError(CommunityFlError, ValueError):
    """Invalid configuration value (threshold range, scenario field, ...)."""


class PlanError(CommunityFlError, ValueError):
    """Contradictory or out-of-range hyperparameters in a federated plan."""


class DuplicateTaskError(CommunityFlError):
    """A different task was already registered under the same task id."""


class UnregisteredClientError(CommunityFlError):
    """Operation requires a registered client."""


class AdmissionRefused(CommunityFlError):
    """Community collaboration criteria rejected the participant."""

    def __init__(self, reason: str):
        super().__init__(f"admission refused: {reason}")
        self.reason = reason


class EmptyAggregationError(CommunityFlError, ValueError):
    """Aggregation over an empty update list."""


class DelegationError(CommunityFlError):
    """Training delegation refused (unknown or untrusted neighbor)."""


class ProtocolError(CommunityFlError):
    """Typed wire-protocol failure; ``code`` is a stable machine-readable name."""

    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code
        self.message = message


class DeliveryError(CommunityFlError):
    """Transport-level delivery failure (scripted fault or broken connection)."""
