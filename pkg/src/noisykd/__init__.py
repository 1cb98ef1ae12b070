"""Knowledge distillation under label noise: Co-Distill, label refinement and baselines."""

from .data import LabeledDataset, SplitSpec, generate_synthetic, inject_noise, load_dataset, split_train_val
from .errors import (
    DegenerateLabelsError,
    InvalidConfigError,
    InvalidInputError,
    NoisyKDError,
    TrainingDivergenceError,
)
from .model import MlpModel, OptimizerState, backward_and_step, forward, init_model
from .runner import ExperimentGrid, emit_report, run_experiment, run_grid
from .trainers import ExperimentResult, Method, TrainConfig, train

__version__ = "0.1.0"
