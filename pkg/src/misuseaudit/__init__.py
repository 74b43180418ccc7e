"""Review-driven misuse audits of mobile apps.

Pipeline: ingest review corpora, rate reviews for alarmingness with a
trained regressor, aggregate per-app exploitable scores, rank apps, and
support the human annotation and verification loops around the model.
"""

__version__ = "0.1.0"
