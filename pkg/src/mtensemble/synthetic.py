"""Seeded synthetic corpora and embeddings for tests, demos and fixtures.

The original corpora, GloVe vectors and lexicons are not redistributable, so
everything here is generated: random 300-d word vectors with GloVe-like
norms, templated sentences whose labels are fixed by keyword families.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Instance
from .features import Lexicon, LexiconSet
from .layers import EMBED_DIM, EmbeddingTable

FILLER = """the a this that my our your their today yesterday morning evening night week
weekend people friend family city street house work school phone coffee weather train bus
news movie song game book dinner lunch meeting party trip road office park river""".split()

KEYWORDS = {
    "anger": ["angry", "furious", "outraged", "irritated", "livid", "annoyed"],
    "fear": ["afraid", "scared", "terrified", "anxious", "nervous", "panicked"],
    "joy": ["happy", "glad", "delighted", "cheerful", "joyful", "thrilled"],
    "sadness": ["sad", "gloomy", "miserable", "unhappy", "depressed", "heartbroken"],
}


def random_embeddings(vocab: Sequence[str], dim: int = EMBED_DIM, seed: int = 0,
                      scale: float = 0.3) -> EmbeddingTable:
    """Gaussian vectors (norm about ``scale * sqrt(dim)``) for ``vocab`` in sorted order."""
    words = sorted(set(vocab))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
    return EmbeddingTable({w: i for i, w in enumerate(words)}, rng.normal(0.0, scale, (len(words), dim)))


def keyword_corpus(n: int = 500, classes: Sequence[str] = ("joy", "sadness"), seed: int = 0,
                   max_count: int = 5, fill=(3, 8)) -> list[Instance]:
    """Templated sentences: the class is the keyword family present, intensity = min(count, 5) / 5.

    Each sentence mixes ``fill`` neutral words with 1..``max_count``
    keywords from its class's family at random positions.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 21]))
    out = []
    for i in range(n):
        label = classes[i % len(classes)]
        count = int(rng.integers(1, max_count + 1))
        words = list(rng.choice(FILLER, size=int(rng.integers(fill[0], fill[1] + 1))))
        for _ in range(count):
            words.insert(int(rng.integers(0, len(words) + 1)), str(rng.choice(KEYWORDS[label])))
        out.append(Instance(f"s{i:04d}", " ".join(words), label, {"intensity": min(count, 5) / 5.0}))
    return out


def corpus_vocab(instances) -> list[str]:
    from .features import tokenize
    return sorted({t for inst in instances for t in tokenize(inst.text)})


# ---------------------------------------------------------------------------
# constructed complementarity
# ---------------------------------------------------------------------------

SOURCES = ("lstm", "cnn", "gru", "feat")


def family_words(source: str) -> dict[str, list[str]]:
    """Positive, negative and neutral marker words owned by one source."""
    return {
        "pos": [f"{source}pos{k}" for k in range(3)],
        "neg": [f"{source}neg{k}" for k in range(3)],
        "neu": [f"{source}neu{k}" for k in range(3)],
    }


def complementary_corpus(n: int = 600, seed: int = 0) -> list[Instance]:
    """Binary corpus whose label is revealed by exactly one of four word families.

    Every sentence carries one marker from each family of :data:`SOURCES`.
    For a randomly chosen revealing family the marker carries the label
    (positive/negative words, repeated 1-3 times; intensity = repeats / 3);
    the other families contribute a neutral marker.  A model that sees only
    one family can do no better than guessing on the other three quarters.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 31]))
    out = []
    for i in range(n):
        label = ("pos", "neg")[int(rng.integers(0, 2))]
        reveal = SOURCES[int(rng.integers(0, len(SOURCES)))]
        repeats = int(rng.integers(1, 4))
        words = list(rng.choice(FILLER, size=int(rng.integers(2, 5))))
        for source in SOURCES:
            fam = family_words(source)
            if source == reveal:
                markers = [str(rng.choice(fam[label]))] * repeats
            else:
                markers = [str(rng.choice(fam["neu"]))]
            for m in markers:
                words.insert(int(rng.integers(0, len(words) + 1)), m)
        out.append(Instance(f"c{i:04d}", " ".join(words), label, {"intensity": repeats / 3.0}))
    return out


def source_table(full: EmbeddingTable, source: str) -> EmbeddingTable:
    """Embedding view for one encoder: filler words plus that source's family only."""
    fam = family_words(source)
    return full.restricted(FILLER + fam["pos"] + fam["neg"] + fam["neu"])


def feature_lexicons() -> LexiconSet:
    """Polarity lexicon that knows only the ``feat`` family."""
    fam = family_words("feat")
    entries = {w: 1.0 for w in fam["pos"]} | {w: -1.0 for w in fam["neg"]}
    return LexiconSet([Lexicon("featpolarity", "polarity", entries)])


# ---------------------------------------------------------------------------
# file writers
# ---------------------------------------------------------------------------

def write_emoint(path: str | Path, instances) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("id\ttext\temotion\tintensity\n")
        for inst in instances:
            fh.write(f"{inst.id}\t{inst.text}\t{inst.label}\t{inst.scores['intensity']!r}\n")


def write_embeddings(path: str | Path, table: EmbeddingTable) -> None:
    """GloVe text layout: ``token v1 ... vd`` per line."""
    inverse = sorted(table.vocab.items(), key=lambda kv: kv[1])
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for token, row in inverse:
            fh.write(token + " " + " ".join(f"{v:.6f}" for v in table.matrix[row]) + "\n")
