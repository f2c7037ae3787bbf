"""
Recommenders, losses and the shared optimizer/training loop.
"""
