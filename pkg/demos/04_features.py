"""Hand-crafted features: tokenization, tf-idf, lexicons and a VADER-style score.

Run: python3 demos/04_features.py
"""

from pathlib import Path

from mtensemble import features as F
from mtensemble.synthetic import random_embeddings

manifest = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "lexicons" / "manifest.tsv"
lexicons = F.LexiconSet.from_manifest(manifest)

texts = ["I am SO happy today!!", "not happy at all", "this is very sad :("]
for text in texts:
    tokens = F.tokenize(text, lowercase=False)
    compound, pos, neg, neu = F.vader_score(tokens, lexicons)
    print(f"{text!r:28s} tokens={tokens} compound={compound:+.3f}")

vec = F.fit_tfidf(texts, "word")
row = vec.transform([texts[0]])[0]
print(f"word tf-idf: {row.size} columns, row L2 norm {(row ** 2).sum() ** 0.5:.3f}")

table = random_embeddings(sorted({t for s in texts for t in F.tokenize(s)}), seed=0)
extractor = F.FeatureExtractor(table, lexicons).fit(texts)
print("feature blocks:", extractor.block_widths())
print("raw feature matrix:", extractor.transform(texts).shape)
