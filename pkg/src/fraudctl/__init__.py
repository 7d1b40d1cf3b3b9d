"""Dynamic accept/review/reject control for transaction fraud under delayed labels."""
from .domain import CostParams, Decision, GTable, Transaction, TransactionBatch
from .env import EnvConfig, World
from .harness import ExperimentPlan, PolicySpec, run_experiment, tune_lambda
from .policies import BaselinePolicy, MyopicPolicy, NaivePolicy, ProspectivePolicy

__version__ = "0.1.0"

__all__ = [
    "BaselinePolicy", "CostParams", "Decision", "EnvConfig", "ExperimentPlan", "GTable",
    "MyopicPolicy", "NaivePolicy", "PolicySpec", "ProspectivePolicy", "Transaction",
    "TransactionBatch", "World", "__version__", "run_experiment", "tune_lambda",
]
