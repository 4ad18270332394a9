"""Note vocabulary and the two-segment one-hot vector representation.

Each note becomes a single binary vector of length P + D: a pitch segment
with one hot bit among P semitone slots, concatenated with a duration
segment with one hot bit among D duration-table slots. Model outputs over
the same layout are normalized per segment before sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .notes import Melody, NoteEvent

DEFAULT_PITCH_LO = 36
DEFAULT_PITCH_HI = 94
DEFAULT_DURATIONS = tuple(range(1, 29)) + (30, 32)

MIN_PITCH_SPAN = 13  # at least one full octave, keeps interval rules satisfiable


class EncodingError(ValueError):
    """A note or vector does not fit the vocabulary layout."""


@dataclass(frozen=True)
class NoteVocabulary:
    """Pitch range and duration table defining the vector layout.

    Pitches run from ``pitch_lo`` to ``pitch_hi`` inclusive (P slots);
    ``durations`` is a strictly increasing table of sixteenth-note counts
    (D slots). The encoded vector length is P + D.
    """

    pitch_lo: int = DEFAULT_PITCH_LO
    pitch_hi: int = DEFAULT_PITCH_HI
    durations: tuple[int, ...] = DEFAULT_DURATIONS

    def __post_init__(self) -> None:
        if not (0 <= self.pitch_lo <= self.pitch_hi <= 127):
            raise ValueError(
                f"pitch bounds {self.pitch_lo}..{self.pitch_hi} must lie in 0..127"
            )
        if self.pitch_count < MIN_PITCH_SPAN:
            raise ValueError(
                f"pitch range must span at least {MIN_PITCH_SPAN} semitones, "
                f"got {self.pitch_count}"
            )
        if len(self.durations) == 0:
            raise ValueError("duration table must be non-empty")
        if any(d < 1 for d in self.durations):
            raise ValueError("durations must all be >= 1")
        if any(b <= a for a, b in zip(self.durations, self.durations[1:])):
            raise ValueError("duration table must be strictly increasing")
        object.__setattr__(
            self, "_dur_index", {d: i for i, d in enumerate(self.durations)}
        )

    @property
    def pitch_count(self) -> int:
        return self.pitch_hi - self.pitch_lo + 1

    @property
    def duration_count(self) -> int:
        return len(self.durations)

    @property
    def dim(self) -> int:
        return self.pitch_count + self.duration_count

    def pitch_index(self, pitch: int) -> int:
        if not self.pitch_lo <= pitch <= self.pitch_hi:
            raise EncodingError(
                f"pitch {pitch} outside vocabulary range "
                f"{self.pitch_lo}..{self.pitch_hi}"
            )
        return pitch - self.pitch_lo

    def duration_index(self, duration: int) -> int:
        try:
            return self._dur_index[duration]  # type: ignore[attr-defined]
        except KeyError:
            raise EncodingError(
                f"duration {duration} not in vocabulary table {self.durations}"
            ) from None

    def contains(self, note: NoteEvent) -> bool:
        return (
            self.pitch_lo <= note.pitch <= self.pitch_hi
            and note.duration in self._dur_index  # type: ignore[attr-defined]
        )


def default_vocabulary() -> NoteVocabulary:
    return NoteVocabulary()


def note_indices(note: NoteEvent, vocab: NoteVocabulary) -> tuple[int, int]:
    """Return the (pitch slot, duration slot) index pair for a note."""
    return vocab.pitch_index(note.pitch), vocab.duration_index(note.duration)


def encode_note(note: NoteEvent, vocab: NoteVocabulary) -> np.ndarray:
    """Encode a note as a two-segment one-hot vector of length P + D."""
    pi, di = note_indices(note, vocab)
    vec = np.zeros(vocab.dim)
    vec[pi] = 1.0
    vec[vocab.pitch_count + di] = 1.0
    return vec


def decode_note(vec: np.ndarray, vocab: NoteVocabulary) -> NoteEvent:
    """Invert :func:`encode_note`, validating the two-segment invariant."""
    vec = np.asarray(vec)
    if vec.shape != (vocab.dim,):
        raise EncodingError(f"expected vector of length {vocab.dim}, got {vec.shape}")
    p = vocab.pitch_count
    pitch_hot = np.flatnonzero(vec[:p])
    dur_hot = np.flatnonzero(vec[p:])
    if len(pitch_hot) != 1 or vec[pitch_hot[0]] != 1.0:
        raise EncodingError("pitch segment must contain exactly one 1")
    if len(dur_hot) != 1 or vec[p + dur_hot[0]] != 1.0:
        raise EncodingError("duration segment must contain exactly one 1")
    return NoteEvent(
        pitch=vocab.pitch_lo + int(pitch_hot[0]),
        duration=vocab.durations[int(dur_hot[0])],
    )


def split_distribution(
    raw: np.ndarray, vocab: NoteVocabulary
) -> tuple[np.ndarray, np.ndarray]:
    """Softmax-normalize the pitch and duration segments independently."""
    raw = np.asarray(raw, dtype=float)
    if raw.shape != (vocab.dim,):
        raise EncodingError(f"expected vector of length {vocab.dim}, got {raw.shape}")
    return _softmax(raw[: vocab.pitch_count]), _softmax(raw[vocab.pitch_count :])


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - np.max(x))
    return e / e.sum()


def sample_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Draw an index from a probability vector via the inverse CDF.

    The draw is scaled by the actual total mass so tiny normalization
    residue cannot push the cut point past the last slot.
    """
    cum = np.cumsum(probs)
    idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return min(idx, len(probs) - 1)


def fold_pitch(pitch: int, vocab: NoteVocabulary) -> int:
    """Shift a pitch by whole octaves until it lands in the vocabulary range.

    Octave shifts preserve the pitch class, which every grammar rule and
    metric depends on. The vocabulary spans at least an octave, so the fold
    always terminates.
    """
    while pitch < vocab.pitch_lo:
        pitch += 12
    while pitch > vocab.pitch_hi:
        pitch -= 12
    return pitch


@dataclass(frozen=True)
class TrainingExample:
    """A fixed-length encoded context and the index pair of the next note."""

    context: np.ndarray  # shape (W, P + D)
    target: tuple[int, int]  # (pitch slot, duration slot)


def make_training_windows(
    melody: Melody, window: int, vocab: NoteVocabulary
) -> list[TrainingExample]:
    """Slide a next-note prediction window over one melody.

    Produces one example per position from ``window`` to the end; a melody
    shorter than ``window + 1`` notes yields no examples. Windows never
    cross melody boundaries because each melody is processed on its own.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    n = len(melody.notes)
    if n < window + 1:
        return []
    encoded = np.stack([encode_note(note, vocab) for note in melody.notes])
    examples = []
    for i in range(window, n):
        examples.append(
            TrainingExample(
                context=encoded[i - window : i].copy(),
                target=note_indices(melody.notes[i], vocab),
            )
        )
    return examples


def stack_examples(
    examples: list[TrainingExample],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pack examples into (contexts, pitch targets, duration targets) arrays."""
    if not examples:
        raise ValueError("no training examples to stack")
    contexts = np.stack([ex.context for ex in examples])
    pitch_targets = np.array([ex.target[0] for ex in examples], dtype=np.int64)
    dur_targets = np.array([ex.target[1] for ex in examples], dtype=np.int64)
    return contexts, pitch_targets, dur_targets
