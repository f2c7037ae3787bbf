"""Probes of how well one item embedding space can be mapped onto another."""
