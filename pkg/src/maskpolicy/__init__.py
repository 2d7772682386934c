"""Learned masking policies for task-adaptive MLM pretraining."""

__version__ = "0.1.0"
