"""
Command recipes, configuration files, artifact bookkeeping and report consolidation.
"""
