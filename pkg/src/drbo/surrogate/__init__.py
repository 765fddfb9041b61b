"""GP surrogates over the joint (design, variation) space."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classification import ClassifierFitError, ClassifierSearch, GPClassifier, fit_classifier
from .kernels import KernelConfig
from .regression import GPRegressor, IllConditionedError, KernelSearch, dense_posterior, fit_regressor


def predict(model: GPRegressor, query):
    return model.predict(query)


def predict_infeasibility(model: GPClassifier, query) -> np.ndarray:
    return model.predict_infeasibility(query)


def combined_prediction(reg: GPRegressor, cls: GPClassifier | None, query, lam: float):
    """Mean and std of the penalized cost.

    Without a classifier the regressor is assumed to model the penalized cost
    directly. With one, mean = regressor mean + lam * P(infeasible) and the
    std is the regressor's.
    """
    mean, std = reg.predict(query)
    if cls is None:
        return mean, std
    return mean + lam * cls.predict_infeasibility(query), std


@dataclass(frozen=True)
class SurrogatePair:
    regressor: GPRegressor
    classifier: GPClassifier | None
    lam: float

    @property
    def mode(self) -> str:
        return "single" if self.classifier is None else "dual"

    def predict(self, query):
        return combined_prediction(self.regressor, self.classifier, query, self.lam)

    def predict_mean(self, query) -> np.ndarray:
        mean = self.regressor.predict_mean(query)
        if self.classifier is None:
            return mean
        return mean + self.lam * self.classifier.predict_infeasibility(query)

    def hyperparameters(self) -> dict:
        out = {"mode": self.mode, "regressor": self.regressor.hyperparameters()}
        if self.classifier is not None:
            out["classifier"] = self.classifier.hyperparameters()
        return out


__all__ = [
    "ClassifierFitError",
    "ClassifierSearch",
    "GPClassifier",
    "GPRegressor",
    "IllConditionedError",
    "KernelConfig",
    "KernelSearch",
    "SurrogatePair",
    "combined_prediction",
    "dense_posterior",
    "fit_classifier",
    "fit_regressor",
    "predict",
    "predict_infeasibility",
]
