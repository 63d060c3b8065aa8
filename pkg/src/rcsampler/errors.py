"""Exception hierarchy. Each class carries the CLI exit code it maps to."""

from __future__ import annotations


class RCSError(Exception):
    exit_code = 1


class ConfigError(RCSError, ValueError):
    """Invalid experiment or circuit configuration."""

    exit_code = 2


class InputError(RCSError, ValueError):
    """A caller passed arguments that violate an operation's preconditions."""

    exit_code = 2


class InfeasibleError(RCSError):
    """No contraction plan fits the requested memory budget."""

    exit_code = 2


class RegressionError(RCSError):
    exit_code = 2


class NumericFault(RCSError, ArithmeticError):
    """A NaN or Inf showed up during contraction."""

    exit_code = 3

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class CapacityError(RCSError):
    exit_code = 4

    def __init__(self, message: str, cap: int | None = None):
        super().__init__(message)
        self.cap = cap


class SubtaskError(RCSError):
    """A parallel subtask failed; ``config_bits`` identifies which one."""

    exit_code = 3

    def __init__(self, message: str, subtask_id: int = -1, config_bits: str = "", step: int | None = None):
        super().__init__(message)
        self.subtask_id = subtask_id
        self.config_bits = config_bits
        self.step = step
