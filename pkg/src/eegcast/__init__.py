"""Patient-specific EEG seizure forecasting: preprocessing, tokenization, transformer pretraining and fine-tuning, alarm evaluation."""

__version__ = "0.1.0"
