"""
Command-line subcommands; each module registers itself on the top-level parser.
"""
from nucleiseg.commands import evaluate, infer, phantom, train

__all__ = ["phantom", "train", "infer", "evaluate"]
