"""Hyperparameter importance from empirical performance data.

Random-forest surrogates, exact tree-based functional ANOVA, density-based
default recommendations, tunability and algorithm rankings.
"""

from .config_space import (
    ConfigurationSpace,
    HyperparameterDomain,
    builtin_space,
    define_space,
    sample_uniform,
)
from .fanova import FunctionalANOVA, ImportanceReport, importance_table, variance_decomposition
from .forest import ForestParams, RandomForestSurrogate, fit_forest
from .perfdata import (
    KnowledgeBase,
    PerformanceTable,
    load_knowledge_base,
    sample_knowledge_base_path,
)
from .priors import KDEPrior

__version__ = "0.1.0"

__all__ = [
    "ConfigurationSpace",
    "ForestParams",
    "FunctionalANOVA",
    "HyperparameterDomain",
    "ImportanceReport",
    "KDEPrior",
    "KnowledgeBase",
    "PerformanceTable",
    "RandomForestSurrogate",
    "builtin_space",
    "define_space",
    "fit_forest",
    "importance_table",
    "load_knowledge_base",
    "sample_knowledge_base_path",
    "sample_uniform",
    "variance_decomposition",
]
