"""
Dataset ingestion, splitting, embedding files and the synthetic world generator.
"""
