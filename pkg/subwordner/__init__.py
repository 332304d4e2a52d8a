"""Subword-tokenized CNN/LSTM/BiLSTM taggers for named entity recognition."""

__version__ = "0.1.0"
