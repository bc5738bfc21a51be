"""ghostforge: ghost-style CNN blocks, exact cost model, toy trainer, CLI."""

__version__ = "0.1.0"
