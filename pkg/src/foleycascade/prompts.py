"""Prompt corpus, text normalisation, quality prefixes and tokenisation."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import TokenizationError

# Table order of the seven challenge classes.
SOUND_CLASSES = (
    "dog_bark",
    "footstep",
    "gun_shot",
    "keyboard",
    "motor_vehicle",
    "rain",
    "sneeze_cough",
)
CLASS_DISPLAY = {
    "dog_bark": "Dog bark",
    "footstep": "Footstep",
    "gun_shot": "Gun shot",
    "keyboard": "Keyboard",
    "motor_vehicle": "Motor vehicle",
    "rain": "Rain",
    "sneeze_cough": "Sneeze & cough",
}


class Quality(str, Enum):
    CLEAN = "clean"
    NOISY = "noisy"


PAD, NULL, COMMA = "<pad>", "<null>", ","
QUALITY_TOKENS = {Quality.CLEAN: "<clean>", Quality.NOISY: "<noisy>"}
SPECIAL_TOKENS = (PAD, NULL, QUALITY_TOKENS[Quality.CLEAN], QUALITY_TOKENS[Quality.NOISY], COMMA)

_NON_ALNUM = re.compile(r"[^0-9a-z]+")
_DIGIT = re.compile(r"\d")


def normalize_text(raw: str, stop_words: frozenset[str] | set[str]) -> str:
    words = _NON_ALNUM.sub(" ", raw.lower()).split()
    return " ".join(w for w in words if w not in stop_words and not _DIGIT.search(w))


def prefix_text(quality: Quality | str) -> str:
    return f"{Quality(quality).value} recording, "


def attach_quality_prefix(text: str, quality: Quality | str) -> str:
    return prefix_text(quality) + text


@dataclass(frozen=True)
class PromptRecord:
    raw_text: str
    normalized_text: str
    quality: Quality
    sound_class: str
    tokens: tuple[int, ...]

    @property
    def text(self) -> str:
        return attach_quality_prefix(self.normalized_text, self.quality)


@dataclass
class PromptCorpus:
    templates: dict[str, list[str]]
    stop_words: frozenset[str]
    vocab: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        for cls, tmpl in self.templates.items():
            if len(tmpl) < 3:
                raise ValueError(f"class {cls!r} has {len(tmpl)} templates; at least 3 required")
        if not self.vocab:
            words = {w for ts in self.templates.values() for t in ts for w in normalize_text(t, self.stop_words).split()}
            self.vocab = list(SPECIAL_TOKENS) + sorted(words)
        self.index = {tok: i for i, tok in enumerate(self.vocab)}

    @classmethod
    def from_files(cls, corpus_path: str | Path, stop_words_path: str | Path) -> "PromptCorpus":
        templates: dict[str, list[str]] = {}
        for line in Path(corpus_path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            sound_class, template = line.split("\t", 1)
            templates.setdefault(sound_class.strip(), []).append(template.strip())
        stop = frozenset(
            w.strip().lower() for w in Path(stop_words_path).read_text(encoding="utf-8").splitlines() if w.strip()
        )
        return cls(templates, stop)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def token_id(self, token: str) -> int:
        try:
            return self.index[token]
        except KeyError:
            raise TokenizationError(f"token {token!r} is not in the vocabulary") from None

    def tokenize(self, text: str) -> list[int]:
        out: list[int] = []
        for q in Quality:
            if text.startswith(prefix_text(q)):
                out += [self.index[QUALITY_TOKENS[q]], self.index[COMMA]]
                text = text[len(prefix_text(q)) :]
                break
        out += [self.token_id(tok) for tok in re.findall(r",|[^\s,]+", text)]
        return out

    def detokenize(self, ids: list[int] | tuple[int, ...]) -> str:
        toks = [self.vocab[i] for i in ids if self.vocab[i] != PAD]
        head = ""
        for q, qt in QUALITY_TOKENS.items():
            if toks[:2] == [qt, COMMA]:
                head, toks = prefix_text(q), toks[2:]
                break
        body = ""
        for tok in toks:
            body += tok if tok == COMMA or not body else " " + tok
        return head + body

    def record(self, sound_class: str, template: str, quality: Quality | str) -> PromptRecord:
        quality = Quality(quality)
        norm = normalize_text(template, self.stop_words)
        return PromptRecord(template, norm, quality, sound_class, tuple(self.tokenize(attach_quality_prefix(norm, quality))))

    def free_prompt(self, text: str, quality: Quality | str, sound_class: str = "") -> PromptRecord:
        return self.record(sound_class, text, quality)

    def sample_prompt(
        self, sound_class: str, rng: np.random.Generator, quality: Quality | str = Quality.CLEAN
    ) -> PromptRecord:
        """Uniform draw over the class's templates."""
        if sound_class not in self.templates:
            raise KeyError(f"no prompt templates for class {sound_class!r}")
        options = self.templates[sound_class]
        return self.record(sound_class, options[int(rng.integers(len(options)))], quality)


def default_corpus_paths() -> tuple[Path, Path]:
    base = resources.files("foleycascade") / "data"
    return Path(str(base / "prompts.tsv")), Path(str(base / "stopwords.txt"))


@lru_cache(maxsize=1)
def default_corpus() -> PromptCorpus:
    return PromptCorpus.from_files(*default_corpus_paths())
