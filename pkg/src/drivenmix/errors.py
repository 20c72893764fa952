"""Exception types shared across the solvers and the run orchestration."""

from __future__ import annotations


class DrivenMixError(Exception):
    """Base class for package-specific failures."""


class ProtocolModeError(DrivenMixError, ValueError):
    """Operation undefined for the active driving mode."""


class CouplingSingularityError(DrivenMixError, ValueError):
    """Effective 1D coupling evaluated at the confinement-induced resonance pole."""


class ConvergenceError(DrivenMixError, RuntimeError):
    """Iterative solver exhausted its budget without reaching tolerance."""


class StepSizeError(DrivenMixError, RuntimeError):
    """Propagation step rejected (norm drift or Krylov failure below the dt floor)."""


class BackendCapabilityError(DrivenMixError, TypeError):
    """Requested observable cannot be furnished by this state's backend."""


class ConfigError(DrivenMixError, ValueError):
    """Malformed or invalid run configuration."""
