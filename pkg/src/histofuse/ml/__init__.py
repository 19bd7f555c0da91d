"""From-scratch trainable models: L1 logistic regression, boosted trees, linear SVM."""
from .gbm import GbmModel, RegressionTree, predict_gbm, train_gbm
from .logistic import LinearModel, predict_logistic, train_logistic_l1
from .persist import dumps_model, load_model, loads_model, register, save_model
from .svm import SvmModel, train_svm

register("logistic")(LinearModel)
register("gbm")(GbmModel)
register("svm")(SvmModel)

__all__ = [
    "GbmModel",
    "LinearModel",
    "RegressionTree",
    "SvmModel",
    "dumps_model",
    "load_model",
    "loads_model",
    "predict_gbm",
    "predict_logistic",
    "register",
    "save_model",
    "train_gbm",
    "train_logistic_l1",
    "train_svm",
]
