"""Distributed SGD over preamble-based random access."""
