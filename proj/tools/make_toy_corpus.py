#!/usr/bin/env python3
"""Generates the bundled toy sentiment corpus, lexicon, and 8-dim embeddings.

Sentences are built from templates around polarity words. The lexicon maps
polarity and filler words to same-meaning candidates, most of which never occur
in the clean corpus, so a classifier trained on it has never seen them.

    python3 tools/make_toy_corpus.py data/toy
"""

import json
import random
import sys
from pathlib import Path

import numpy as np

SEED = 20211

POSITIVE = ["good", "great", "excellent", "wonderful", "superb",
            "brilliant", "enjoyable", "delightful", "charming", "moving"]
NEGATIVE = ["bad", "awful", "terrible", "boring", "dull",
            "poor", "horrible", "dreadful", "tedious", "weak"]

# Candidates never used in the clean corpus.
POSITIVE_RARE = ["fine", "nice", "decent", "solid", "lovely", "terrific", "stellar",
                 "splendid", "fabulous", "marvelous", "admirable", "pleasant",
                 "outstanding", "magnificent", "exquisite", "fantastic", "remarkable",
                 "impressive", "engaging", "touching"]
NEGATIVE_RARE = ["lousy", "mediocre", "dismal", "atrocious", "abysmal", "dire", "lame",
                 "bland", "tiresome", "subpar", "inferior", "crummy", "pathetic",
                 "rotten", "shoddy", "unpleasant", "feeble", "flat", "sloppy", "clumsy"]

NOUNS = ["movie", "film", "story", "plot", "acting", "cast", "script", "ending",
         "music", "direction"]
ADVERBS = ["really", "quite", "very", "truly", "so"]
VERBS = ["was", "is", "felt", "seemed"]

NEUTRAL_SYNONYMS = {
    "movie": ["film", "picture", "flick"],
    "film": ["movie", "picture", "feature"],
    "story": ["tale", "narrative"],
    "plot": ["storyline", "premise"],
    "acting": ["performances", "portrayals"],
    "cast": ["ensemble", "actors"],
    "script": ["screenplay", "dialogue"],
    "ending": ["finale", "conclusion"],
    "music": ["soundtrack", "score"],
    "direction": ["filmmaking", "staging"],
    "really": ["truly", "genuinely"],
    "quite": ["rather", "fairly"],
    "very": ["extremely", "highly"],
    "truly": ["really", "honestly"],
    "so": ["incredibly", "remarkably"],
    "was": ["seemed", "appeared"],
    "is": ["seems", "appears"],
    "felt": ["seemed", "appeared"],
    "seemed": ["felt", "appeared"],
}

# Unrelated words listed as candidates that the similarity filter should drop.
DISTRACTORS = {"good": ["goods"], "bad": ["badge"], "plot": ["plotter"], "cast": ["castle"]}

TEMPLATES = [
    "the {n} {v} {a} {p}",
    "the {n} {v} {p} and the {n2} {v2} {a} {p2}",
    "{a} {p} {n} with {p2} {n2}",
    "overall the {n} {v} {p}",
    "i thought the {n} {v} {a} {p} overall",
    "a {p} {n} and a {a} {p2} {n2}",
    "the {n} {v} {p} but the {n2} {v2} {p2} too",
]


def sentence(rng, label):
    pol = POSITIVE if label == 1 else NEGATIVE
    n, n2 = rng.sample(NOUNS, 2)
    p, p2 = rng.sample(pol, 2)
    return rng.choice(TEMPLATES).format(
        n=n, n2=n2, p=p, p2=p2, a=rng.choice(ADVERBS),
        v=rng.choice(VERBS), v2=rng.choice(VERBS))


def lexicon(rng):
    entries = {}
    pos_pool, neg_pool = POSITIVE_RARE[:], NEGATIVE_RARE[:]
    for words, rare, pool in ((POSITIVE, POSITIVE_RARE, pos_pool), (NEGATIVE, NEGATIVE_RARE, neg_pool)):
        for i, w in enumerate(words):
            # One common same-class neighbour plus three rare ones.
            cands = [words[(i + 1) % len(words)]]
            cands += rare[(2 * i) % len(rare):(2 * i) % len(rare) + 2]
            cands.append(rng.choice(rare))
            cands += DISTRACTORS.get(w, [])
            entries[w] = cands
    for w, cands in NEUTRAL_SYNONYMS.items():
        entries[w] = cands + DISTRACTORS.get(w, [])
    return entries


def embeddings(entries, rng_np):
    groups = {}
    for w in POSITIVE + POSITIVE_RARE:
        groups[w] = "pos"
    for w in NEGATIVE + NEGATIVE_RARE:
        groups[w] = "neg"
    for w, cands in NEUTRAL_SYNONYMS.items():
        g = groups.setdefault(w, "n:" + w)
        for c in cands:
            groups.setdefault(c, g)
    for ws in DISTRACTORS.values():
        for w in ws:
            groups[w] = "x:" + w
    centers = {}
    vectors = {}
    for w in sorted(groups):
        g = groups[w]
        if g not in centers:
            c = rng_np.normal(size=8)
            centers[g] = c / np.linalg.norm(c)
        vectors[w] = centers[g] + 0.25 * rng_np.normal(size=8)
    for w in ADVERBS + VERBS + NOUNS + ["the", "and", "with", "i", "thought", "overall", "a", "but", "too"]:
        if w not in vectors:
            vectors[w] = rng_np.normal(size=8)
    return vectors


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "data/toy")
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(SEED)
    rng_np = np.random.default_rng(SEED)
    for split, n in (("train", 600), ("dev", 100), ("test", 200)):
        with open(out / f"{split}.jsonl", "w") as f:
            for i in range(n):
                label = i % 2
                f.write(json.dumps({"text": sentence(rng, label), "label": label}) + "\n")
    entries = lexicon(rng)
    with open(out / "lexicon.jsonl", "w") as f:
        for w in sorted(entries):
            f.write(json.dumps({"word": w, "candidates": entries[w]}) + "\n")
    vecs = embeddings(entries, rng_np)
    with open(out / "embeddings.txt", "w") as f:
        for w in sorted(vecs):
            f.write(w + " " + " ".join(f"{x:.6f}" for x in vecs[w]) + "\n")


if __name__ == "__main__":
    main()
