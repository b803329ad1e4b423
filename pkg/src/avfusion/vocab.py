"""Character-level output vocabulary with pad/sos/eos specials."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError, UsageError

PAD, SOS, EOS = 0, 1, 2
SPECIALS = ("<pad>", "<sos>", "<eos>")


@dataclass(frozen=True)
class Vocab:
    alphabet: str = "abcdefgh"

    def __post_init__(self):
        if not self.alphabet:
            raise ConfigError("alphabet must be nonempty")
        if len(set(self.alphabet)) != len(self.alphabet):
            raise ConfigError(f"alphabet has repeated symbols: {self.alphabet!r}")
        if any(c.isspace() or c == "," for c in self.alphabet):
            raise ConfigError("alphabet symbols may not be whitespace or commas")

    @property
    def size(self) -> int:
        return len(SPECIALS) + len(self.alphabet)

    @property
    def n_symbols(self) -> int:
        return len(self.alphabet)

    def token_ids(self) -> range:
        """Ids of the non-special symbols."""
        return range(len(SPECIALS), self.size)

    def encode(self, text) -> list[int]:
        try:
            return [len(SPECIALS) + self.alphabet.index(c) for c in text]
        except ValueError:
            raise UsageError(f"{text!r} contains symbols outside {self.alphabet!r}") from None

    def decode(self, ids) -> str:
        out = []
        for i in ids:
            i = int(i)
            if i < len(SPECIALS) or i >= self.size:
                raise UsageError(f"id {i} is not a symbol")
            out.append(self.alphabet[i - len(SPECIALS)])
        return "".join(out)
