"""Cox proportional hazards estimation.

Everything here is a pure function of its inputs. Ties in event times use
the Breslow convention: the risk set of a subject with time ``t`` is every
subject with time ``>= t``, and tied events share one denominator.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Mapping, Sequence

import numpy as np

from fedcox import _backend

log = logging.getLogger(__name__)

__all__ = [
    "InputError",
    "DegenerateFitError",
    "SurvivalDataset",
    "CoxModel",
    "FitOptions",
    "neg_log_partial_likelihood",
    "gradient",
    "hessian",
    "loss_terms",
    "newton_minimize",
    "fit_cox",
    "breslow_baseline",
    "concordance_index",
    "concordance_from_risk",
]


class InputError(ValueError):
    """Malformed or inconsistent input data."""


class DegenerateFitError(InputError):
    """The dataset carries no information about the coefficients (no events)."""


@dataclass(eq=False)
class SurvivalDataset:
    """One center's cohort: covariates, observed times and event flags."""

    feature_names: list[str]
    covariates: np.ndarray
    time: np.ndarray
    event: np.ndarray

    def __post_init__(self):
        self.feature_names = [str(f) for f in self.feature_names]
        X = np.asarray(self.covariates, dtype=np.float64)
        if X.ndim == 1 and len(self.feature_names) <= 1:
            X = X.reshape(-1, len(self.feature_names))
        if X.ndim != 2:
            raise InputError(f"covariates must be 2-d, got shape {X.shape}")
        self.covariates = X
        self.time = np.asarray(self.time, dtype=np.float64).ravel()
        self.event = np.asarray(self.event).astype(bool).ravel()
        n, p = X.shape
        if len(self.time) != n or len(self.event) != n:
            raise InputError(
                f"row mismatch: covariates {n}, time {len(self.time)}, event {len(self.event)}"
            )
        if p != len(self.feature_names):
            raise InputError(f"{p} covariate columns but {len(self.feature_names)} feature names")
        if len(set(self.feature_names)) != p:
            raise InputError("feature names must be unique")
        if not np.all(np.isfinite(self.time)) or np.any(self.time < 0):
            raise InputError("times must be finite and nonnegative")
        if not np.all(np.isfinite(X)):
            raise InputError("covariates must be finite")

    @property
    def n_subjects(self) -> int:
        return self.covariates.shape[0]

    @property
    def n_features(self) -> int:
        return self.covariates.shape[1]

    @property
    def n_events(self) -> int:
        return int(self.event.sum())

    def take(self, rows) -> "SurvivalDataset":
        rows = np.asarray(rows)
        return SurvivalDataset(
            list(self.feature_names), self.covariates[rows], self.time[rows], self.event[rows]
        )

    def append(self, other: "SurvivalDataset") -> "SurvivalDataset":
        if other.feature_names != self.feature_names:
            raise InputError("cannot append datasets with different feature columns")
        return SurvivalDataset(
            list(self.feature_names),
            np.vstack([self.covariates, other.covariates]),
            np.concatenate([self.time, other.time]),
            np.concatenate([self.event, other.event]),
        )

    @cached_property
    def _sorted(self):
        # Centering leaves the partial likelihood unchanged and keeps the
        # Hessian accumulation well conditioned.
        order = np.argsort(self.time, kind="stable")
        t = self.time[order]
        X = self.covariates[order]
        if X.shape[0]:
            X = X - X.mean(axis=0)
        X = np.ascontiguousarray(X)
        group_start = np.searchsorted(t, t, side="left").astype(np.int64)
        event = np.ascontiguousarray(self.event[order].astype(np.uint8))
        return X, event, group_start


@dataclass
class FitOptions:
    max_iterations: int = 100
    gradient_tolerance: float = 1e-7
    ridge_lambda: float = 0.0
    step_halving_max: int = 30

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InputError("max_iterations must be >= 1")
        if not self.gradient_tolerance > 0:
            raise InputError("gradient_tolerance must be > 0")
        if self.ridge_lambda < 0:
            raise InputError("ridge_lambda must be >= 0")


@dataclass
class CoxModel:
    """Fitted coefficients plus the Breslow baseline hazard increments."""

    coefficients: dict[str, float]
    baseline: list[tuple[float, float]] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    final_loss: float = float("nan")
    loss_history: list[float] = field(default_factory=list)
    degenerate: bool = False

    def beta_for(self, feature_names: Sequence[str]) -> np.ndarray:
        """Coefficient vector in the given column order; unknown names map to 0."""
        return np.array([self.coefficients.get(f, 0.0) for f in feature_names], dtype=np.float64)

    def with_coefficients(self, updates: Mapping[str, float]) -> "CoxModel":
        coefs = dict(self.coefficients)
        for name, value in updates.items():
            if name in coefs:
                coefs[name] = float(value)
        return replace(self, coefficients=coefs)


def _as_beta(data: SurvivalDataset, beta) -> np.ndarray:
    b = np.asarray(beta, dtype=np.float64).ravel()
    if b.shape[0] != data.n_features:
        raise InputError(f"beta has {b.shape[0]} entries, dataset has {data.n_features} features")
    return b


def loss_terms(data: SurvivalDataset, beta, ridge_lambda: float = 0.0, order: int = 2):
    """Return ``(loss, gradient, hessian)``; entries beyond ``order`` are None."""
    b = _as_beta(data, beta)
    if ridge_lambda < 0:
        raise InputError("ridge_lambda must be >= 0")
    X, event, group_start = data._sorted
    if not event.any():
        log.debug("dataset has no events; partial likelihood term is empty")
    eta = X @ b
    loss, grad, hess = _backend.cox_terms(X, eta, event, group_start, order)
    loss = float(loss) + 0.5 * ridge_lambda * float(b @ b)
    if grad is not None:
        grad = grad + ridge_lambda * b
    if hess is not None:
        hess = hess + ridge_lambda * np.eye(b.shape[0])
    return loss, grad, hess


def neg_log_partial_likelihood(data: SurvivalDataset, beta, ridge_lambda: float = 0.0) -> float:
    return loss_terms(data, beta, ridge_lambda, order=0)[0]


def gradient(data: SurvivalDataset, beta, ridge_lambda: float = 0.0) -> np.ndarray:
    return loss_terms(data, beta, ridge_lambda, order=1)[1]


def hessian(data: SurvivalDataset, beta, ridge_lambda: float = 0.0) -> np.ndarray:
    return loss_terms(data, beta, ridge_lambda, order=2)[2]


@dataclass
class NewtonResult:
    beta: np.ndarray
    loss: float
    gradient: np.ndarray
    converged: bool
    iterations: int
    history: list[float]


def _newton_step(hess: np.ndarray, grad: np.ndarray) -> np.ndarray:
    try:
        step = np.linalg.solve(hess, grad)
        if np.all(np.isfinite(step)):
            return step
    except np.linalg.LinAlgError:
        pass
    # singular curvature (e.g. a constant column): minimum-norm step
    return np.linalg.lstsq(hess, grad, rcond=None)[0]


def newton_minimize(
    fun: Callable[[np.ndarray, int], tuple], beta0: np.ndarray, options: FitOptions
) -> NewtonResult:
    """Damped Newton-Raphson with step halving on loss increase.

    ``fun(beta, order)`` returns ``(loss, grad, hess)`` like :func:`loss_terms`.
    """
    beta = np.array(beta0, dtype=np.float64)
    loss, grad, hess = fun(beta, 2)
    history = [loss]
    iterations = 0
    while np.max(np.abs(grad), initial=0.0) > options.gradient_tolerance:
        if iterations >= options.max_iterations:
            break
        step = _newton_step(hess, grad)
        if not np.all(np.isfinite(step)):
            break
        slack = 4 * np.finfo(float).eps * max(1.0, abs(loss))
        scale = 1.0
        accepted = None
        for _ in range(options.step_halving_max + 1):
            cand = beta - scale * step
            cand_loss = fun(cand, 0)[0]
            if np.isfinite(cand_loss) and cand_loss <= loss + slack:
                accepted = cand
                break
            scale *= 0.5
        if accepted is None:
            break
        beta = accepted
        loss, grad, hess = fun(beta, 2)
        history.append(loss)
        iterations += 1
    converged = bool(np.max(np.abs(grad), initial=0.0) <= options.gradient_tolerance)
    return NewtonResult(beta, loss, grad, converged, iterations, history)


def fit_cox(data: SurvivalDataset, options: FitOptions | None = None, init=None) -> CoxModel:
    """Fit Cox coefficients by Newton-Raphson, starting from zero unless ``init`` is given.

    Raises
    ------
    DegenerateFitError
        If the dataset has no observed events.
    """
    options = options or FitOptions()
    if data.n_features < 1:
        raise InputError("need at least one feature")
    if data.n_events == 0:
        raise DegenerateFitError("dataset has no events")
    beta0 = np.zeros(data.n_features) if init is None else _as_beta(data, init)
    res = newton_minimize(
        lambda b, order: loss_terms(data, b, options.ridge_lambda, order), beta0, options
    )
    if not res.converged:
        log.info("Cox fit stopped after %d iterations without converging", res.iterations)
    return CoxModel(
        coefficients=dict(zip(data.feature_names, map(float, res.beta))),
        baseline=breslow_baseline(data, res.beta),
        converged=res.converged,
        iterations=res.iterations,
        final_loss=res.loss,
        loss_history=res.history,
    )


def breslow_baseline(data: SurvivalDataset, beta) -> list[tuple[float, float]]:
    b = _as_beta(data, beta)
    if data.n_events == 0:
        return []
    risk = data.covariates @ b
    shift = risk.max()
    w = np.exp(risk - shift)
    order = np.argsort(data.time, kind="stable")
    t = data.time[order]
    s0 = np.cumsum(w[order][::-1])[::-1]
    ev_times, d = np.unique(data.time[data.event], return_counts=True)
    first = np.searchsorted(t, ev_times, side="left")
    inc = d * np.exp(-shift) / s0[first]
    return [(float(a), float(h)) for a, h in zip(ev_times, inc)]


def concordance_from_risk(time, event, risk) -> float:
    """Harrell's C; tied risk scores earn half credit, no comparable pairs gives 0.5."""
    conc, tied, comp = _backend.concordance_counts(
        np.asarray(time, dtype=np.float64),
        np.asarray(event, dtype=bool),
        np.asarray(risk, dtype=np.float64),
    )
    if comp == 0:
        return 0.5
    return (conc + 0.5 * tied) / comp


def concordance_index(data: SurvivalDataset, beta) -> float:
    b = _as_beta(data, beta)
    return concordance_from_risk(data.time, data.event, data.covariates @ b)
