"""Physics-aware planning of box removals from cluttered shelf stacks."""

__version__ = "0.1.0"
