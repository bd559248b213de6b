"""Repository-level code translation and validation orchestrator."""

__version__ = "0.1.0"
