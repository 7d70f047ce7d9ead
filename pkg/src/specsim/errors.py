"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration and workload problems are
validation failures (exit 2), protocol / accounting / numeric failures are
runtime errors (exit 3), and theory-check failures use their own code (exit 4,
handled in the CLI itself).
"""

from __future__ import annotations


class SpecsimError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(SpecsimError, ValueError):
    """A configuration value violates an invariant."""


class WorkloadError(SpecsimError, ValueError):
    """A workload description (trace file, preemption list) is malformed."""


class ProtocolError(SpecsimError, RuntimeError):
    """The engine was driven into a state the protocol forbids."""


class CapacityError(ProtocolError):
    """A batch assignment was attempted against a full batch."""


class KVError(SpecsimError, RuntimeError):
    """Block-table accounting was violated (e.g. write past allocation)."""


class NumericError(SpecsimError, RuntimeError):
    """An iterative numeric routine failed to converge."""
