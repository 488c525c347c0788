"""Object and predicate vocabularies stored as sectioned plain text.

File layout, one name per line::

    [objects]
    person
    cup
    [attention]
    looking_at
    ...
    [spatial]
    ...
    [contact]
    ...

Blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .types import RELATION_TYPES

SECTIONS = ("objects",) + RELATION_TYPES


class VocabularyError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    objects: tuple[str, ...]
    attention: tuple[str, ...]
    spatial: tuple[str, ...]
    contact: tuple[str, ...]

    @property
    def type_sizes(self) -> tuple[int, int, int]:
        return (len(self.attention), len(self.spatial), len(self.contact))

    @property
    def n_objects(self) -> int:
        return len(self.objects)

    def predicates(self) -> list[str]:
        return list(self.attention + self.spatial + self.contact)

    def to_text(self) -> str:
        lines = []
        for s in SECTIONS:
            lines.append(f"[{s}]")
            lines.extend(getattr(self, s))
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "Vocabulary":
        found: dict[str, list[str]] = {}
        current = None
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1].strip()
                if current not in SECTIONS:
                    raise VocabularyError(f"line {n}: unknown section [{current}]")
                if current in found:
                    raise VocabularyError(f"line {n}: duplicate section [{current}]")
                found[current] = []
                continue
            if current is None:
                raise VocabularyError(f"line {n}: name outside any section")
            if line in found[current]:
                raise VocabularyError(f"line {n}: duplicate name {line!r} in [{current}]")
            found[current].append(line)
        missing = [s for s in SECTIONS if not found.get(s)]
        if missing:
            raise VocabularyError(f"missing or empty sections: {', '.join(missing)}")
        return cls(*(tuple(found[s]) for s in SECTIONS))

    @classmethod
    def generic(cls, n_objects: int, sizes: tuple[int, int, int]) -> "Vocabulary":
        objects = ("person",) + tuple(f"object_{i}" for i in range(1, n_objects))
        return cls(objects, *(tuple(f"{t}_{i}" for i in range(k)) for t, k in zip(RELATION_TYPES, sizes)))


def load_vocabulary(path) -> Vocabulary:
    return Vocabulary.parse(Path(path).read_text())


def save_vocabulary(vocab: Vocabulary, path) -> None:
    Path(path).write_text(vocab.to_text())
