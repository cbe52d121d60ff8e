"""Hand-crafted text features and their trainable 128-d projection.

The raw vector for a text is the concatenation
``[word tf-idf | char tf-idf | tf-idf weighted embedding mean | lexicon block | VADER block]``.
Lexicons are described by a manifest so that any resource with the right
shape can be plugged in.  Manifest lines are tab separated::

    # name      kind                  path (relative to the manifest)
    mpqa        polarity              mpqa.tsv
    afinn       score                 afinn.tsv
    nrc         emotion-association   nrc.tsv
    emoticons   emoticon              emoticons.tsv
    vader       valence               vader.tsv

Lexicon file formats (``token<TAB>value``):

* ``polarity``: value is ``positive``/``negative`` (or ``+1``/``-1``)
* ``score``, ``emoticon``, ``valence``: a real number
* ``emotion-association``: ``token<TAB>emotion[<TAB>score]`` (score defaults to 1)
* ``booster``: ``+1`` intensifies, ``-1`` dampens (optional; a built-in list is used otherwise)
* ``negation``: token only (optional; a built-in list is used otherwise)
"""

from __future__ import annotations

import hashlib
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor as tc
from .errors import DataError, DimensionError, FormatError
from .layers import Dense, EmbeddingTable
from .tensor import Tensor

log = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# tokenization
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<url>(?:https?://|www\.)\S+)
  | (?P<emoticon><3|[<>]?[:;=][\-o\*']?[\)\]\(\[dDpP/\\|@3]+)
  | (?P<tag>[\#@]\w+)
  | (?P<word>\w+(?:['’]\w+)*)
  | (?P<punct>[^\w\s])
    """,
    re.VERBOSE,
)


def tokenize(text: str, lowercase: bool = True) -> list[str]:
    """Split a tweet-like text into tokens.

    Hashtags, @mentions and emoticons stay whole, punctuation characters
    become separate tokens and URLs collapse to ``<url>``.

    >>> tokenize("Happy Birthday!")
    ['happy', 'birthday', '!']
    >>> tokenize("#joy :)")
    ['#joy', ':)']
    """
    if lowercase:
        text = text.lower()
    out = []
    for m in _TOKEN_RE.finditer(text):
        out.append("<url>" if m.lastgroup == "url" else m.group())
    return out


# ---------------------------------------------------------------------------
# tf-idf
# ---------------------------------------------------------------------------

WORD_NGRAMS = (1, 3)
CHAR_NGRAMS = (3, 5)
MAX_FEATURES = 5000


def word_ngrams(tokens: Sequence[str], lo: int = WORD_NGRAMS[0], hi: int = WORD_NGRAMS[1]) -> list[str]:
    grams = []
    for n in range(lo, hi + 1):
        grams.extend(" ".join(tokens[i:i + n]) for i in range(len(tokens) - n + 1))
    return grams


def char_ngrams(text: str, lo: int = CHAR_NGRAMS[0], hi: int = CHAR_NGRAMS[1]) -> list[str]:
    text = text.lower()
    grams = []
    for n in range(lo, hi + 1):
        grams.extend(text[i:i + n] for i in range(len(text) - n + 1))
    return grams


@dataclass
class TfIdfVectorizer:
    """Raw-count tf times smoothed idf, L2-normalised rows.

    ``idf = ln((1 + N) / (1 + df)) + 1``.  The vocabulary keeps the
    ``max_features`` n-grams with the highest document frequency (ties broken
    lexicographically); columns are in lexicographic order.
    """

    mode: str
    vocabulary: dict[str, int] = field(default_factory=dict)
    idf: np.ndarray = field(default_factory=lambda: np.zeros(0))
    fingerprint: str = ""
    max_features: int = MAX_FEATURES

    def __post_init__(self):
        if self.mode not in ("word", "char"):
            raise ValueError(f"tf-idf mode must be 'word' or 'char', got {self.mode!r}")

    @property
    def width(self) -> int:
        return len(self.vocabulary)

    def analyze(self, text: str) -> list[str]:
        if self.mode == "word":
            return word_ngrams(tokenize(text))
        return char_ngrams(text)

    def fit(self, corpus: Sequence[str]) -> "TfIdfVectorizer":
        corpus = list(corpus)
        if not corpus:
            raise DataError("cannot fit tf-idf on an empty corpus")
        df: Counter[str] = Counter()
        for doc in corpus:
            df.update(set(self.analyze(doc)))
        ranked = sorted(df.items(), key=lambda kv: (-kv[1], kv[0]))[: self.max_features]
        terms = sorted(t for t, _ in ranked)
        self.vocabulary = {t: i for i, t in enumerate(terms)}
        n = len(corpus)
        self.idf = np.array([math.log((1 + n) / (1 + df[t])) + 1.0 for t in terms])
        self.fingerprint = hashlib.sha256("\x1e".join(corpus).encode("utf-8")).hexdigest()
        return self

    def _vector(self, grams: Iterable[str]) -> np.ndarray:
        row = np.zeros(self.width)
        for g, c in Counter(grams).items():
            j = self.vocabulary.get(g)
            if j is not None:
                row[j] = c * self.idf[j]
        norm = np.sqrt(row @ row)
        return row / norm if norm > 0 else row

    def transform(self, texts: Sequence[str]) -> np.ndarray:
        return np.stack([self._vector(self.analyze(t)) for t in texts]) if texts else np.zeros((0, self.width))

    def transform_tokens(self, tokens: Sequence[str]) -> np.ndarray:
        """Document vector from pre-tokenised text (word mode only)."""
        return self._vector(word_ngrams(list(tokens)))

    def token_weights(self, tokens: Sequence[str]) -> dict[str, float]:
        """Tf-idf weight of each distinct unigram in the document vector."""
        row = self.transform_tokens(tokens)
        out = {}
        for t in dict.fromkeys(tokens):
            j = self.vocabulary.get(t)
            out[t] = float(row[j]) if j is not None else 0.0
        return out


def fit_tfidf(corpus: Sequence[str], mode: str, max_features: int = MAX_FEATURES) -> TfIdfVectorizer:
    return TfIdfVectorizer(mode, max_features=max_features).fit(corpus)


def weighted_embedding_average(tokens: Sequence[str], table: EmbeddingTable, vectorizer) -> np.ndarray:
    """Tf-idf weighted mean of the embeddings of the distinct tokens.

    Tokens without an embedding are ignored.  When every remaining weight is
    zero the plain mean is returned; with nothing embeddable, the zero vector.
    """
    weights = vectorizer.token_weights(tokens)
    known = [t for t in weights if t in table]
    if not known:
        return np.zeros(table.dim)
    vecs = np.stack([table.lookup(t) for t in known])
    w = np.array([weights[t] for t in known])
    total = w.sum()
    if total == 0:
        return vecs.mean(axis=0)
    return (w[:, None] * vecs).sum(axis=0) / total


# ---------------------------------------------------------------------------
# lexicons
# ---------------------------------------------------------------------------

LEXICON_KINDS = ("polarity", "score", "emotion-association", "emoticon", "valence", "booster", "negation")

DEFAULT_NEGATIONS = frozenset(
    """aint arent cannot cant couldnt darent didnt doesnt dont hadnt hasnt havent isnt mightnt
    mustnt neither never none nope nor not nothing nowhere oughtnt shant shouldnt wasnt werent
    without wont wouldnt rarely seldom despite""".split()
)

DEFAULT_BOOSTERS = {
    **{w: 1.0 for w in """absolutely amazingly awfully completely considerably decidedly deeply
        enormously entirely especially exceptionally extremely fabulously greatly highly hugely
        incredibly intensely majorly more most particularly purely quite really remarkably so
        substantially thoroughly totally tremendously unbelievably unusually utterly very""".split()},
    **{w: -1.0 for w in """almost barely hardly less little marginally occasionally partly scarcely
        slightly somewhat""".split()},
}


@dataclass
class Lexicon:
    name: str
    kind: str
    entries: dict

    @property
    def emotions(self) -> list[str]:
        if self.kind != "emotion-association":
            return []
        return sorted({e for assoc in self.entries.values() for e in assoc})

    def columns(self) -> list[str]:
        if self.kind == "polarity":
            return [f"{self.name}.pos_count", f"{self.name}.neg_count"]
        if self.kind in ("score", "emoticon"):
            return [f"{self.name}.pos_sum", f"{self.name}.neg_sum"]
        if self.kind == "emotion-association":
            return [f"{self.name}.{e}.{stat}" for e in self.emotions for stat in ("count", "sum")]
        return []


def _parse_lexicon(name: str, kind: str, path: Path) -> Lexicon:
    if kind not in LEXICON_KINDS:
        raise FormatError(f"lexicon {name!r}: unknown kind {kind!r}")
    if not path.is_file():
        raise DataError(f"lexicon {name!r}: file not found: {path}")
    entries: dict = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        token = parts[0].strip().lower()
        try:
            if kind == "negation":
                entries[token] = True
            elif kind == "polarity":
                label = parts[1].strip().lower()
                entries[token] = 1.0 if label in ("positive", "pos", "+1", "1") else -1.0
                if label not in ("positive", "pos", "+1", "1", "negative", "neg", "-1"):
                    raise ValueError(label)
            elif kind == "emotion-association":
                score = float(parts[2]) if len(parts) > 2 else 1.0
                entries.setdefault(token, {})[parts[1].strip().lower()] = score
            else:
                entries[token] = float(parts[1])
        except (IndexError, ValueError) as exc:
            raise FormatError(f"{path}:{lineno}: malformed {kind} entry {line!r}") from exc
    return Lexicon(name, kind, entries)


@dataclass
class LexiconSet:
    """Ordered collection of lexicons; lookups are case-folded."""

    lexicons: list[Lexicon] = field(default_factory=list)

    @classmethod
    def from_manifest(cls, manifest: str | Path) -> "LexiconSet":
        manifest = Path(manifest)
        if not manifest.is_file():
            raise DataError(f"lexicon manifest not found: {manifest}")
        lexicons = []
        for line in manifest.read_text(encoding="utf-8").splitlines():
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t") if "\t" in line else line.split()
            if len(parts) != 3:
                raise FormatError(f"{manifest}: expected 'name<TAB>kind<TAB>path', got {line!r}")
            name, kind, rel = (p.strip() for p in parts)
            lexicons.append(_parse_lexicon(name, kind, manifest.parent / rel))
        return cls(lexicons)

    def column_names(self) -> list[str]:
        return [c for lex in self.lexicons for c in lex.columns()]

    @property
    def width(self) -> int:
        return len(self.column_names())

    def _merged(self, kind: str) -> dict:
        out: dict = {}
        for lex in self.lexicons:
            if lex.kind == kind:
                out.update(lex.entries)
        return out

    @property
    def valence(self) -> dict[str, float]:
        return self._merged("valence")

    @property
    def boosters(self) -> dict[str, float]:
        return self._merged("booster") or DEFAULT_BOOSTERS

    @property
    def negations(self) -> frozenset[str]:
        return frozenset(self._merged("negation")) or DEFAULT_NEGATIONS


def lexicon_features(tokens: Sequence[str], lexicons: LexiconSet) -> np.ndarray:
    """Counts and score sums per lexicon, in ``lexicons.column_names()`` order."""
    tokens = [t.lower() for t in tokens]
    block: list[float] = []
    for lex in lexicons.lexicons:
        if lex.kind == "polarity":
            vals = [lex.entries[t] for t in tokens if t in lex.entries]
            block += [sum(v > 0 for v in vals), sum(v < 0 for v in vals)]
        elif lex.kind in ("score", "emoticon"):
            vals = [lex.entries[t] for t in tokens if t in lex.entries]
            block += [sum(v for v in vals if v > 0), sum(v for v in vals if v < 0)]
        elif lex.kind == "emotion-association":
            for emo in lex.emotions:
                scores = [lex.entries[t][emo] for t in tokens if emo in lex.entries.get(t, ())]
                block += [len(scores), sum(scores)]
    return np.array(block, dtype=np.float64)


# ---------------------------------------------------------------------------
# simplified VADER
# ---------------------------------------------------------------------------

NEGATION_SCALAR = -0.74
CAPS_SCALAR = 1.25
BOOSTER_INCR = 0.293
EXCLAMATION_INCR = 0.292
NORMALIZATION_ALPHA = 15.0


def _is_negation(token: str, negations: frozenset[str]) -> bool:
    return token in negations or token.endswith("n't")


def vader_score(tokens: Sequence[str], lexicons: LexiconSet) -> tuple[float, float, float, float]:
    """Return ``(compound, pos_ratio, neg_ratio, neu_ratio)``.

    ``tokens`` should keep their original case so that ALL-CAPS emphasis can
    be detected (see ``tokenize(text, lowercase=False)``).  Per valence
    token: caps emphasis x1.25, then a preceding booster shifts the magnitude
    by 0.293, then a negation among the three preceding tokens scales by
    -0.74.  Up to three "!" tokens push the sum 0.292 each away from zero.
    """
    valence = lexicons.valence
    boosters = lexicons.boosters
    negations = lexicons.negations
    lowered = [t.lower() for t in tokens]
    effective = []
    for i, tok in enumerate(tokens):
        v = valence.get(lowered[i], 0.0)
        if v != 0.0:
            if tok.isupper():
                v *= CAPS_SCALAR
            if i > 0 and lowered[i - 1] in boosters:
                v += math.copysign(BOOSTER_INCR, v) * boosters[lowered[i - 1]]
            if any(_is_negation(t, negations) for t in lowered[max(0, i - 3):i]):
                v *= NEGATION_SCALAR
        effective.append(v)
    s = sum(effective)
    bangs = min(lowered.count("!"), 3)
    if s > 0:
        s += EXCLAMATION_INCR * bangs
    elif s < 0:
        s -= EXCLAMATION_INCR * bangs
    compound = s / math.sqrt(s * s + NORMALIZATION_ALPHA)
    n = len(tokens)
    if n == 0:
        return 0.0, 0.0, 0.0, 1.0
    pos = sum(v > 0 for v in effective) / n
    neg = sum(v < 0 for v in effective) / n
    return compound, pos, neg, 1.0 - pos - neg


# ---------------------------------------------------------------------------
# assembled extractor and projector
# ---------------------------------------------------------------------------

COMPONENTS = ("word_tfidf", "char_tfidf", "embedding", "lexicon", "vader")
FEATURE_WIDTH = 128


class FeatureExtractor:
    """Fits the tf-idf vectorizers on training texts and builds raw feature rows.

    ``components`` selects which blocks are produced (all by default), which
    is handy for ablations.
    """

    def __init__(self, table: EmbeddingTable, lexicons: LexiconSet | None = None,
                 components: Sequence[str] = COMPONENTS, max_features: int = MAX_FEATURES):
        unknown = set(components) - set(COMPONENTS)
        if unknown:
            raise ValueError(f"unknown feature components {sorted(unknown)}")
        self.table = table
        self.lexicons = lexicons or LexiconSet()
        self.components = tuple(c for c in COMPONENTS if c in components)
        self.word = TfIdfVectorizer("word", max_features=max_features)
        self.char = TfIdfVectorizer("char", max_features=max_features)
        self.fitted = False

    def fit(self, texts: Sequence[str]) -> "FeatureExtractor":
        texts = list(texts)
        if "word_tfidf" in self.components or "embedding" in self.components:
            self.word.fit(texts)
        if "char_tfidf" in self.components:
            self.char.fit(texts)
        self.fitted = True
        return self

    def block_widths(self) -> dict[str, int]:
        widths = {
            "word_tfidf": self.word.width,
            "char_tfidf": self.char.width,
            "embedding": self.table.dim,
            "lexicon": self.lexicons.width,
            "vader": 4,
        }
        return {c: widths[c] for c in self.components}

    @property
    def width(self) -> int:
        return sum(self.block_widths().values())

    def transform_one(self, text: str) -> np.ndarray:
        if not self.fitted:
            raise DataError("feature extractor used before fit()")
        tokens = tokenize(text)
        parts = []
        for c in self.components:
            if c == "word_tfidf":
                parts.append(self.word.transform_tokens(tokens))
            elif c == "char_tfidf":
                parts.append(self.char.transform([text])[0])
            elif c == "embedding":
                parts.append(weighted_embedding_average(tokens, self.table, self.word))
            elif c == "lexicon":
                parts.append(lexicon_features(tokens, self.lexicons))
            else:
                parts.append(np.array(vader_score(tokenize(text, lowercase=False), self.lexicons)))
        return np.concatenate(parts) if parts else np.zeros(0)

    def transform(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.width))
        return np.stack([self.transform_one(t) for t in texts])


class FeatureProjector:
    """dense(256, relu) -> dense(128, relu) from the raw feature width."""

    def __init__(self, raw_width: int, rng: np.random.Generator, hidden: int = 256, out: int = FEATURE_WIDTH):
        self.raw_width = raw_width
        self.hidden = Dense(raw_width, hidden, "relu", rng)
        self.out = Dense(hidden, out, "relu", rng)

    def __call__(self, raw: Tensor) -> Tensor:
        return project_features(raw, self)

    def named_parameters(self) -> dict[str, Tensor]:
        params = {}
        for name, layer in (("hidden", self.hidden), ("out", self.out)):
            for k, p in layer.named_parameters().items():
                params[f"{name}.{k}"] = p
        return params


def project_features(raw, projector: FeatureProjector) -> Tensor:
    raw = tc.as_tensor(raw)
    if raw.shape[-1] != projector.raw_width:
        raise DimensionError(
            f"raw feature width {raw.shape[-1]} differs from fitted width {projector.raw_width}"
        )
    return projector.out(projector.hidden(raw))
