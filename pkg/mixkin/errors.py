"""
errors.py — Exception hierarchy shared by every mixkin module.

The CLI maps each family to its own exit code (see ``mixkin.app.exit_code_for``).
"""

from __future__ import annotations

from typing import List, Optional, Sequence


class MixkinError(Exception):
    """Base class for all library errors."""


class ConfigError(MixkinError, ValueError):
    """Invalid run configuration or invalid construction arguments."""

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GeometryError(MixkinError):
    """Embedded-domain construction failed (projection, stencil, containment)."""


class ConvergenceError(MixkinError):
    """An iterative procedure did not reach its tolerance."""

    def __init__(self, message: str, history: Sequence[float] = ()) -> None:
        self.history: List[float] = [float(r) for r in history]
        if self.history:
            tail = ", ".join(f"{r:.3e}" for r in self.history[-5:])
            message = f"{message} (last residuals: {tail})"
        super().__init__(message)


class CFLError(MixkinError, ValueError):
    """Explicit time step exceeds the stability limit."""


class SnapshotError(MixkinError, OSError):
    """Snapshot or output file could not be read or written."""


class NonFiniteError(MixkinError, FloatingPointError):
    """A field picked up NaN or Inf values."""


class DiagnosticsError(MixkinError, ValueError):
    """A diagnostic is undefined for the given fields."""
