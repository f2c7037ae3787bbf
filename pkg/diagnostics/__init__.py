"""
Top-K ranking, ranking metrics and complementarity diagnostics.
"""
