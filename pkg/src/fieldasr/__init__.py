"""fieldasr: a desk-scale speech recognition workbench for language
documentation, from transcription-file ingestion to a trainable hybrid
CTC-attention recognizer with a local HTTP service and CLI."""

__version__ = "0.1.0"
