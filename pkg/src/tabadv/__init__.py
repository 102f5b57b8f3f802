"""Constraint-respecting adversarial example generation for tabular models."""

from .constraints import ConstraintSet, FeatureSchema, evaluate, load_constraints, load_schema, parse_constraints
from .data import Dataset, SplitSpec, TransformPipeline, fit, load_csv, split
from .repair import RepairOrdering, compile_plan, random_ordering, repair, repair_node, violation_rate

__version__ = "0.1.0"

__all__ = [
    "ConstraintSet",
    "Dataset",
    "FeatureSchema",
    "RepairOrdering",
    "SplitSpec",
    "TransformPipeline",
    "compile_plan",
    "evaluate",
    "fit",
    "load_constraints",
    "load_csv",
    "load_schema",
    "parse_constraints",
    "random_ordering",
    "repair",
    "repair_node",
    "split",
    "violation_rate",
]
