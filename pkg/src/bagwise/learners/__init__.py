"""Supervised building blocks shared by all bag-learning strategies."""

from .linear import (
    BetaModel,
    LinearModel,
    beta_nll_grad,
    fit_beta_regression,
    fit_logistic,
    logistic_loss_grad,
    predict_proba_linear,
    sigmoid,
    squeeze_proportions,
)
from .pca import PcaTransform, pca_fit, pca_inverse, pca_transform
from .cluster import KMeansModel, kmeans
from .cmaes import CmaEsConfig, cmaes_minimize
from .svm import PlattCalibration, SvmModel, fit_svm, kernel_matrix, platt_calibrate

__all__ = [
    "BetaModel", "LinearModel", "beta_nll_grad", "fit_beta_regression",
    "fit_logistic", "logistic_loss_grad", "predict_proba_linear", "sigmoid",
    "squeeze_proportions", "PcaTransform", "pca_fit", "pca_inverse",
    "pca_transform", "KMeansModel", "kmeans", "CmaEsConfig", "cmaes_minimize",
    "PlattCalibration", "SvmModel", "fit_svm", "kernel_matrix", "platt_calibrate",
]
