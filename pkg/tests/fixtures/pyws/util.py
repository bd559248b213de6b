"""Helpers shared by the option parser."""


def normalize(name: str) -> str:
    """Return the canonical spelling of an option name."""
    return name.strip().lower()


def unused_helper() -> int:
    return 0


DEFAULT = normalize("  --Verbose ")
