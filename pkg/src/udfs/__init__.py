"""Symbolic regression by exhaustive labeling of sampled expression-DAG skeletons."""
