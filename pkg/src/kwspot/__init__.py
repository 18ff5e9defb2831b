"""kwspot: query-by-example keyword spotting.

Trains a word-embedding model (classification pre-training followed by
circle-loss fine-tuning), enrolls keywords from a few spoken examples or
from phoneme sequences, detects them in streaming audio, and ships the
matching evaluation tooling (EER/DET, streaming FNR vs FA/hour).
"""

__version__ = "0.1.0"
