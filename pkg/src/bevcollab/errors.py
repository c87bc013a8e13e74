"""Shared exception types."""


class CapacityError(RuntimeError):
    """A size or retry budget was exhausted (scene placement, exact-mode caps)."""
