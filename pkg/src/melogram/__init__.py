"""Monophonic melody modeling with grammar-filtered data augmentation.

The package ingests melodies from MIDI, encodes each note as one
pitch+duration vector, trains a from-scratch LSTM next-note model, filters
a first generation pass through music-theory rules to harvest corrective
training pairs, retrains on the augmented data, and evaluates the final
free-running output with diatonic, interval and triad metrics.
"""

from .encoding import NoteVocabulary, default_vocabulary
from .grammar import Rule
from .notes import Key, Melody, NoteEvent
from .pipeline import RunConfig, Seeds, run_experiment

__version__ = "0.1.0"

__all__ = [
    "Key",
    "Melody",
    "NoteEvent",
    "NoteVocabulary",
    "Rule",
    "RunConfig",
    "Seeds",
    "default_vocabulary",
    "run_experiment",
    "__version__",
]
