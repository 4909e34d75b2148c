"""Alphabets and datasets of discrete multivariate sequences."""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class AlphabetSpec:
    """Symbol counts ``V_d`` for each of the ``D`` observed dimensions."""

    cardinalities: tuple

    def __post_init__(self):
        cards = tuple(int(v) for v in self.cardinalities)
        if len(cards) < 1:
            raise InvalidInputError("alphabet needs at least one dimension")
        if any(v < 2 for v in cards):
            raise InvalidInputError(f"every dimension needs at least 2 symbols, got {cards}")
        object.__setattr__(self, "cardinalities", cards)

    @classmethod
    def uniform(cls, num_dims, cardinality):
        return cls((cardinality,) * num_dims)

    @property
    def num_dims(self):
        return len(self.cardinalities)

    def num_sequences(self, T):
        """Number of distinct sequences of length ``T``."""
        n = 1
        for v in self.cardinalities:
            n *= v ** T
        return n

    def validate(self, seq):
        """Return ``seq`` as a read-only ``(T, D)`` int64 array or raise."""
        arr = np.asarray(seq)
        if arr.ndim == 1 and self.num_dims == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[1] != self.num_dims:
            raise InvalidInputError(
                f"sequence must have shape (T, {self.num_dims}), got {arr.shape}")
        if arr.shape[0] < 1:
            raise InvalidInputError("sequence length must be at least 1")
        if arr.dtype.kind not in "iub":
            if not np.all(np.equal(np.mod(arr, 1), 0)):
                raise InvalidInputError("sequence symbols must be integers")
        arr = arr.astype(np.int64)
        if arr.min() < 0 or np.any(arr >= np.asarray(self.cardinalities)[None, :]):
            raise InvalidInputError("sequence symbol out of range for the alphabet")
        arr.setflags(write=False)
        return arr

    def validate_batch(self, seqs):
        """Validate a ``(B, T, D)`` array of equal-length sequences."""
        arr = np.asarray(seqs)
        if arr.ndim != 3 or arr.shape[2] != self.num_dims:
            raise InvalidInputError(
                f"batch must have shape (B, T, {self.num_dims}), got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidInputError("empty batch or zero-length sequences")
        arr = arr.astype(np.int64, copy=False)
        if arr.min() < 0 or np.any(arr >= np.asarray(self.cardinalities)[None, None, :]):
            raise InvalidInputError("sequence symbol out of range for the alphabet")
        return arr


class SequenceDataset:
    """Immutable collection of ``(T_i, D)`` integer sequences over one alphabet."""

    def __init__(self, alphabet, sequences):
        if not isinstance(alphabet, AlphabetSpec):
            alphabet = AlphabetSpec(tuple(alphabet))
        self.alphabet = alphabet
        self.sequences = tuple(alphabet.validate(s) for s in sequences)
        self._groups = None

    def __len__(self):
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    def __getitem__(self, i):
        return self.sequences[i]

    def __eq__(self, other):
        if not isinstance(other, SequenceDataset):
            return NotImplemented
        return (self.alphabet == other.alphabet and len(self) == len(other)
                and all(np.array_equal(a, b) for a, b in zip(self, other)))

    def __repr__(self):
        return f"SequenceDataset(alphabet={self.alphabet.cardinalities}, n={len(self)})"

    @property
    def lengths(self):
        return [s.shape[0] for s in self.sequences]

    @property
    def num_events(self):
        """Total number of scalar observations, sum of ``T * D``."""
        return sum(self.lengths) * self.alphabet.num_dims

    def subset(self, indices):
        return SequenceDataset(self.alphabet, [self.sequences[i] for i in indices])

    def require_nonempty(self):
        if len(self) == 0:
            raise InvalidInputError("dataset is empty")
        return self

    def by_length(self):
        """Group sequences into equal-length batches.

        Returns a list of ``(indices, array)`` with ``array`` of shape
        ``(B, T, D)``, ordered by increasing ``T``.
        """
        if self._groups is None:
            groups = {}
            for i, s in enumerate(self.sequences):
                groups.setdefault(s.shape[0], []).append(i)
            self._groups = [
                (np.array(idx), np.stack([self.sequences[i] for i in idx]))
                for _, idx in sorted(groups.items())
            ]
        return self._groups

    def symbol_counts(self):
        """Per-dimension symbol counts, a list of ``D`` integer arrays."""
        counts = [np.zeros(v, dtype=np.int64) for v in self.alphabet.cardinalities]
        for s in self.sequences:
            for d, v in enumerate(self.alphabet.cardinalities):
                counts[d] += np.bincount(s[:, d], minlength=v)
        return counts


def group_by_length(seqs):
    """Same as :meth:`SequenceDataset.by_length` for a plain list of arrays."""
    groups = {}
    for i, s in enumerate(seqs):
        groups.setdefault(s.shape[0], []).append(i)
    return [(np.array(idx), np.stack([seqs[i] for i in idx])) for _, idx in sorted(groups.items())]
