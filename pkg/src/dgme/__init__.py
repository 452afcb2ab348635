"""Deep Gaussian mixture ensembles: EM-trained weighted ensembles of
mean/variance networks, with deep ensemble, mixture density network and
MC dropout baselines."""

from .baselines import DeModel, McdModel, MdnModel, fit_de, fit_mcd, fit_mdn, predict_baseline
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, Scaler, ToySpec, generate_toy, load_csv, split_folds, standardize
from .mixture import MixtureModel, Responsibilities, TrainConfig, e_step, fit_em, joint_log_likelihood
from .predictive import (
    MixturePrediction,
    excess_kurtosis,
    nll_gaussian_summary,
    nll_mixture,
    predict_components,
    predict_moments,
    rmse,
    sample_predictive,
)

__version__ = "0.1.0"
