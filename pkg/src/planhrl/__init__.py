"""Planning-annotated hierarchical RL: PDDL tasks drive option discovery and selection."""

__version__ = "0.1.0"
