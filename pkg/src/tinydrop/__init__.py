"""Guided token dropping for vision transformers."""
