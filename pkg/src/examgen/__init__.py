"""examgen: exam script generation for a class of students.

Pipeline: ingest or synthesize exercise data, trace per-student knowledge
mastery with an LSTM, seed training scripts by sample-and-filter, train
conditional adversarial generators, and evaluate generated scripts on the
four quality metrics (difficulty, distinguishability, validity,
rationality).
"""

__version__ = "0.1.0"
