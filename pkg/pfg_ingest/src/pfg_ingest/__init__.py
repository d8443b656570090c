"""Exporter turning the PersuasionForGood corpus into episode files.

The corpus stores persuasion dialogues between a persuader (ER) and a
persuadee (EE), each annotated with the persuadee's Big-Five trait scores
and donation amount.  This package embeds every speaker turn, maps EE
turns to states and ER turns to actions, and writes the language-neutral
episode file format consumed by the cfdial laboratory.  The file format
is the only interface between the two packages.
"""

from .corpus import CorpusRecord, read_corpus
from .encoders import HashedBagEncoder, TransformersEncoder
from .export import ExportStats, export_corpus, write_episode_file

__all__ = [
    "CorpusRecord",
    "read_corpus",
    "HashedBagEncoder",
    "TransformersEncoder",
    "ExportStats",
    "export_corpus",
    "write_episode_file",
]
