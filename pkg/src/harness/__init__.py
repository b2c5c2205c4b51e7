"""
Experiment harness: datasets, result tables, artifacts and the CLI commands.

Commands live in `src.harness.commands`; they are not imported here so the
lower layers can use the dataset module without pulling in the whole stack.
"""

from .dataset import Dataset, generate_dataset, load_dataset, save_dataset

__all__ = ["Dataset", "generate_dataset", "load_dataset", "save_dataset"]
