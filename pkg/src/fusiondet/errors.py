"""Exception types shared across the package.

The CLI maps these to exit codes: InputError / ParseError → 2,
numerical failures (gradient check) → 3, other check failures → 1.
"""


class InputError(ValueError):
    """Invalid user-supplied input (shapes, counts, file contents)."""


class ParseError(InputError):
    """Malformed on-disk data; message names the file and line/key."""

    def __init__(self, path, where, message):
        self.path = str(path)
        self.where = where
        super().__init__(f"{path}: {where}: {message}")


class CheckpointError(InputError):
    """Checkpoint file malformed or incompatible with the model."""


class GenerationError(InputError):
    """Scene generation could not satisfy its placement constraints."""


class NumericalError(RuntimeError):
    """A computation produced non-finite values and cannot continue."""
