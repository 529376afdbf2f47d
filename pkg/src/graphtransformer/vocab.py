"""String <-> id vocabularies."""
from __future__ import annotations

from collections import Counter
from typing import Iterable

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<bos>", "<eos>"


class Vocab:
    def __init__(self, tokens: Iterable[str], specials: Iterable[str] = (PAD, UNK), closed: bool = False):
        self.itos: list[str] = []
        self.stoi: dict[str, int] = {}
        for t in list(specials) + list(tokens):
            if t not in self.stoi:
                self.stoi[t] = len(self.itos)
                self.itos.append(t)
        self.closed = closed

    @classmethod
    def build(cls, items: Iterable[str], specials=(PAD, UNK), min_freq: int = 1, closed: bool = False) -> "Vocab":
        counts = Counter(items)
        tokens = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
        return cls(tokens, specials, closed)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def id(self, token: str) -> int:
        if token in self.stoi:
            return self.stoi[token]
        if self.closed:
            raise KeyError(f"{token!r} is not in the closed vocabulary")
        return self.stoi[UNK]

    def ids(self, tokens: Iterable[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def token(self, i: int) -> str:
        return self.itos[i]

    def to_json(self) -> dict:
        return {"itos": self.itos, "closed": self.closed}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocab":
        v = cls([], specials=())
        v.itos = list(obj["itos"])
        v.stoi = {t: i for i, t in enumerate(v.itos)}
        v.closed = obj.get("closed", False)
        return v
