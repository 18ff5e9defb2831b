"""Keyword enrollment and cosine scoring.

A profile is the L2-normalized mean of the L2-normalized example
embeddings (or a single phoneme-to-embedding prediction).  Detection uses
``score > threshold`` with strict inequality; ties reject.
"""

from dataclasses import dataclass

import numpy as np

from .checkpoint import load_archive, save_archive


@dataclass
class KeywordProfile:
    keyword: str
    embedding: np.ndarray      # L2-normalized
    n_examples: int
    source: str                # "audio" | "phoneme"

    def __post_init__(self):
        self.embedding = np.asarray(self.embedding, dtype=np.float64)
        norm = np.linalg.norm(self.embedding)
        if not np.isclose(norm, 1.0, atol=1e-6):
            raise ValueError(f"profile embedding must be L2-normalized, norm={norm}")
        if self.source not in ("audio", "phoneme"):
            raise ValueError(f"unknown profile source {self.source!r}")
        if self.source == "audio" and self.n_examples < 1:
            raise ValueError("audio profiles need at least one example")


def _normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("zero embedding vector")
    return v / n


def enroll(keyword: str, example_embeddings) -> KeywordProfile:
    """Profile from >= 1 example embeddings (normalized before averaging)."""
    examples = [np.asarray(e, dtype=np.float64) for e in example_embeddings]
    if not examples:
        raise ValueError("empty example set")
    mean = np.mean([_normalize(e) for e in examples], axis=0)
    return KeywordProfile(keyword, _normalize(mean), len(examples), "audio")


def enroll_from_phonemes(keyword: str, phonemes, p2e_model) -> KeywordProfile:
    """Profile predicted from a phoneme-id sequence; no recordings needed."""
    emb = p2e_model.p2e_embed(phonemes)
    return KeywordProfile(keyword, _normalize(emb), 0, "phoneme")


def score(profile: KeywordProfile, test_embedding) -> float:
    """Cosine similarity between the profile and a test embedding."""
    return float(np.dot(profile.embedding, _normalize(np.asarray(test_embedding, dtype=np.float64))))


def score_matrix(profiles, test_embeddings) -> np.ndarray:
    """(n_profiles, n_tests) cosine similarities."""
    p = np.stack([pr.embedding for pr in profiles])
    t = np.asarray(test_embeddings, dtype=np.float64)
    norms = np.linalg.norm(t, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("zero embedding vector")
    return p @ (t / norms).T


# -------------------------------------------------------------- profile store


def save_profiles(path, profiles) -> None:
    """One record per keyword in a KWSM tensor archive."""
    tensors = {}
    for pr in profiles:
        name = f"{pr.keyword}\t{pr.source}\t{pr.n_examples}"
        tensors[name] = pr.embedding
    save_archive(path, tensors)


def load_profiles(path):
    out = []
    for name, emb in load_archive(path).items():
        keyword, source, n_examples = name.split("\t")
        out.append(KeywordProfile(keyword, _normalize(emb.astype(np.float64)),
                                  int(n_examples), source))
    return out
