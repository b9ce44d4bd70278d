"""Personalized stress classification from wearable ECG/GSR signals.

Classical baseline classifiers and a latent neural process contextualized
on a few person-specific labeled windows, evaluated with
leave-one-participant-out cross-validation.
"""

__version__ = "0.1.0"
