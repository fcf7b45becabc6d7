"""Conditional logit over two competing packages.

Utilities are linear in two kinds of variables:

* generic variables vary by alternative (``CumNum.datatable`` and
  ``CumNum.tidy``) and share one coefficient;
* case-specific variables describe the decision maker (``Cmts``) and get a
  coefficient on every non-base alternative, the base being fixed at zero.

With two alternatives this is a logistic regression on utility differences,
but everything here is written for the general ``(n, J, K)`` design so that
the likelihood reads like the textbook one.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats
from scipy.special import logsumexp

ALTERNATIVES = ("datatable", "tidy")
GENERIC_VARIABLES = ("CumNum", "Unrslvd", "RplGp", "StckExch")
SPECIFIC_VARIABLES = ("Cmts", "Aths", "C", "Prx2TD", "AthPrx2TD", "AthPrx2DT")
INTERCEPT = "(intercept)"
SCHEMA_VERSION = "1"

# Published estimates and predictor medians used for the what-if illustrations.
REFERENCE_COEFFICIENTS = {
    "tidy:(intercept)": -6.72,
    "CumNum": 1.43e-04,
    "Unrslvd": 8.30e-02,
    "RplGp": -0.33,
    "StckExch": 0.25,
    "tidy:Cmts": -4.63e-04,
    "tidy:Aths": 8.53e-05,
    "tidy:C": -0.64,
    "tidy:Prx2TD": 0.18,
    "tidy:AthPrx2TD": 1.27,
    "tidy:AthPrx2DT": -9.03e-02,
}
REFERENCE_STD_ERRORS = {
    "tidy:(intercept)": 0.26,
    "CumNum": 1.43e-05,
    "Unrslvd": 0.72,
    "RplGp": 7.94e-02,
    "StckExch": 0.01,
    "tidy:Cmts": 2.26e-04,
    "tidy:Aths": 7.17e-03,
    "tidy:C": 0.28,
    "tidy:Prx2TD": 2.89e-02,
    "tidy:AthPrx2TD": 0.14,
    "tidy:AthPrx2DT": 0.19,
}
REFERENCE_MEDIANS = {
    "Cmts": 3, "Aths": 1, "C": 0,
    "Prx2DT": 0, "Prx2TD": 0, "AthPrx2DT": 0, "AthPrx2TD": 0,
    "CumNum.datatable": 2.72e03, "CumNum.tidy": 305,
    "RplGp.datatable": 1.41, "RplGp.tidy": 1.95,
    "Unrslvd.datatable": 0.27, "Unrslvd.tidy": 0.15,
    "StckExch.datatable": 130, "StckExch.tidy": 158,
}
# (median, mean, std. dev.)
REFERENCE_SUMMARY = {
    "Cmts": (3, 46.83, 645.68),
    "Aths": (1, 2.13, 8.23),
    "C": (0, 9.79e-03, 9.85e-02),
    "Prx2DT": (0, 0.15, 0.95),
    "Prx2TD": (0, 0.62, 2.79),
    "AthPrx2DT": (0, 6.99e-02, 0.17),
    "AthPrx2TD": (0, 0.11, 0.24),
    "CumNum.datatable": (2.72e03, 2.66e03, 1.87e03),
    "CumNum.tidy": (305, 8.44e02, 9.12e02),
    "RplGp.datatable": (1.41, 1.42, 0.21),
    "RplGp.tidy": (1.95, 1.98, 0.31),
    "Unrslvd.datatable": (0.27, 0.28, 4.00e-02),
    "Unrslvd.tidy": (0.15, 0.19, 7.46e-02),
    "StckExch.datatable": (130, 125.76, 6.53),
    "StckExch.tidy": (158, 152.57, 10.14),
}


class EstimationError(RuntimeError):
    """Fitting failed: singular information, no convergence or separation."""


class SingularInformationError(EstimationError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"information matrix is singular; collinear columns: {', '.join(self.columns)}")


class SeparationError(EstimationError):
    pass


class ConvergenceError(EstimationError):
    def __init__(self, msg, trace):
        self.trace = trace
        super().__init__(msg)


@dataclass(frozen=True)
class ModelSpec:
    alternatives: tuple[str, ...] = ALTERNATIVES
    base: str = "datatable"
    generic: tuple[str, ...] = GENERIC_VARIABLES
    specific: tuple[str, ...] = SPECIFIC_VARIABLES
    intercept: bool = True

    def __post_init__(self):
        if self.base not in self.alternatives:
            raise ValueError("base alternative must be one of the alternatives")
        overlap = set(self.generic) & set(self.specific)
        if overlap:
            raise ValueError(f"variables with two roles: {sorted(overlap)}")

    @property
    def others(self) -> tuple[str, ...]:
        return tuple(a for a in self.alternatives if a != self.base)

    @property
    def param_names(self) -> list[str]:
        names = [f"{a}:{INTERCEPT}" for a in self.others] if self.intercept else []
        names += list(self.generic)
        names += [f"{a}:{z}" for z in self.specific for a in self.others]
        return names

    def columns(self) -> list[str]:
        """Dataset columns this spec consumes."""
        return [f"{v}.{a}" for v in self.generic for a in self.alternatives] + list(self.specific)

    def without(self, dropped) -> "ModelSpec":
        dropped = set(dropped)
        return ModelSpec(self.alternatives, self.base,
                         tuple(v for v in self.generic if v not in dropped),
                         tuple(v for v in self.specific if v not in dropped), self.intercept)

    def design(self, columns: Mapping[str, np.ndarray]) -> np.ndarray:
        """Stack dataset columns into an ``(n, J, K)`` design array."""
        missing = [c for c in self.columns() if c not in columns]
        if missing:
            raise KeyError(f"dataset lacks columns: {missing}")
        n = len(next(iter(columns.values()))) if columns else 0
        J, names = len(self.alternatives), self.param_names
        X = np.zeros((n, J, len(names)))
        k = 0
        if self.intercept:
            for a in self.others:
                X[:, self.alternatives.index(a), k] = 1.0
                k += 1
        for v in self.generic:
            for j, a in enumerate(self.alternatives):
                X[:, j, k] = np.asarray(columns[f"{v}.{a}"], dtype=float)
            k += 1
        for z in self.specific:
            for a in self.others:
                X[:, self.alternatives.index(a), k] = np.asarray(columns[z], dtype=float)
                k += 1
        return X


@dataclass
class ChoiceData:
    """Column arrays plus the index of the chosen alternative for each row."""

    columns: dict[str, np.ndarray]
    chosen: np.ndarray
    ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.chosen = np.asarray(self.chosen, dtype=int)
        self.columns = {k: np.asarray(v, dtype=float) for k, v in self.columns.items()}
        if not self.ids:
            self.ids = [str(i) for i in range(len(self.chosen))]

    def __len__(self):
        return len(self.chosen)

    def subset(self, idx) -> "ChoiceData":
        idx = np.asarray(idx)
        return ChoiceData({k: v[idx] for k, v in self.columns.items()}, self.chosen[idx],
                          [self.ids[i] for i in idx])

    @classmethod
    def from_labels(cls, columns, labels: Sequence[str], alternatives=ALTERNATIVES, ids=None):
        index = {a: i for i, a in enumerate(alternatives)}
        return cls(dict(columns), np.array([index[l] for l in labels]), list(ids or []))


def _check_finite(X, ids):
    bad = ~np.isfinite(X).all(axis=(1, 2))
    if bad.any():
        raise ValueError(f"non-finite predictor values in observations: {[ids[i] for i in np.nonzero(bad)[0][:10]]}")


def utility(observation: Mapping[str, float], alternative: str, beta: Mapping[str, float],
            spec: ModelSpec = ModelSpec()) -> float:
    """Systematic utility of one alternative for one observation."""
    v = 0.0
    for g in spec.generic:
        v += beta.get(g, 0.0) * observation[f"{g}.{alternative}"]
    if alternative != spec.base:
        if spec.intercept:
            v += beta.get(f"{alternative}:{INTERCEPT}", 0.0)
        for z in spec.specific:
            v += beta.get(f"{alternative}:{z}", 0.0) * observation[z]
    return v


def probabilities(observation, beta, spec: ModelSpec = ModelSpec()) -> dict[str, float]:
    v = np.array([utility(observation, a, beta, spec) for a in spec.alternatives])
    p = np.exp(v - logsumexp(v))
    return dict(zip(spec.alternatives, p.tolist()))


def _loglike_parts(X, y, beta, want_hess=True):
    V = X @ beta
    lse = logsumexp(V, axis=1)
    n = len(y)
    ll_i = V[np.arange(n), y] - lse
    P = np.exp(V - lse[:, None])
    xbar = np.einsum("nj,njk->nk", P, X)
    g = (X[np.arange(n), y] - xbar).sum(axis=0)
    if not want_hess:
        return ll_i.sum(), g, None
    Xc = X - xbar[:, None, :]
    H = -np.einsum("nj,njk,njl->kl", P, Xc, Xc)
    return ll_i.sum(), g, H


def log_likelihood(data: ChoiceData, beta, spec: ModelSpec = ModelSpec()) -> float:
    X = spec.design(data.columns)
    _check_finite(X, data.ids)
    return float(_loglike_parts(X, data.chosen, _as_vector(beta, spec), want_hess=False)[0])


def gradient(data: ChoiceData, beta, spec: ModelSpec = ModelSpec()) -> np.ndarray:
    X = spec.design(data.columns)
    _check_finite(X, data.ids)
    return _loglike_parts(X, data.chosen, _as_vector(beta, spec), want_hess=False)[1]


def hessian(data: ChoiceData, beta, spec: ModelSpec = ModelSpec()) -> np.ndarray:
    X = spec.design(data.columns)
    return _loglike_parts(X, data.chosen, _as_vector(beta, spec))[2]


def _as_vector(beta, spec):
    if isinstance(beta, Mapping):
        return np.array([beta.get(n, 0.0) for n in spec.param_names], dtype=float)
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (len(spec.param_names),):
        raise ValueError(f"expected {len(spec.param_names)} coefficients, got {beta.shape}")
    return beta


@dataclass
class FitResult:
    names: list[str]
    coef: np.ndarray
    std_err: np.ndarray
    ll: float
    ll0: float
    n: int
    iterations: int
    converged: bool
    grad_norm: float
    spec: ModelSpec = field(default_factory=ModelSpec)
    separated: bool = False
    null: str = "market_shares"

    @property
    def z(self) -> np.ndarray:
        return self.coef / self.std_err

    @property
    def p_values(self) -> np.ndarray:
        return 2.0 * stats.norm.sf(np.abs(self.z))

    @property
    def mcfadden_r2(self) -> float:
        return 1.0 - self.ll / self.ll0 if self.ll0 != 0 else 0.0

    def params(self) -> dict[str, float]:
        return dict(zip(self.names, self.coef.tolist()))

    def predict_proba(self, data: ChoiceData) -> np.ndarray:
        V = self.spec.design(data.columns) @ self.coef
        return np.exp(V - logsumexp(V, axis=1, keepdims=True))

    def table(self) -> list[dict]:
        return [{"name": n, "estimate": float(b), "std_error": float(s), "p_value": float(p)}
                for n, b, s, p in zip(self.names, self.coef, self.std_err, self.p_values)]

    def to_dict(self) -> dict:
        return {
            "coefficients": self.table(),
            "log_likelihood": self.ll,
            "null_log_likelihood": self.ll0,
            "null_model": self.null,
            "mcfadden_r2": self.mcfadden_r2,
            "n": self.n,
            "converged": self.converged,
            "iterations": self.iterations,
            "gradient_inf_norm": self.grad_norm,
        }


def _collinear_columns(Z, names, tol=1e-9):
    # null space of the utility-difference design
    _, s, vt = np.linalg.svd(Z, full_matrices=False)
    if len(s) == 0:
        return list(names)
    null = vt[s <= tol * s[0]]
    cols = sorted({names[k] for v in null for k in np.nonzero(np.abs(v) > 1e-3)[0]})
    return cols


def null_log_likelihood(chosen, n_alternatives: int, null: str = "market_shares") -> float:
    n = len(chosen)
    if null == "equal_shares":
        return n * math.log(1.0 / n_alternatives)
    counts = np.bincount(chosen, minlength=n_alternatives)
    counts = counts[counts > 0]
    return float(np.sum(counts * np.log(counts / n)))


def fit(data: ChoiceData, spec: ModelSpec = ModelSpec(), *, gtol: float = 1e-8, max_iter: int = 100,
        strict: bool = True, null: str = "market_shares") -> FitResult:
    """Maximum likelihood by Newton-Raphson with step halving, starting at zero.

    Columns are rescaled internally for conditioning; convergence is judged
    on the gradient in the original units.  Standard errors come from the
    inverse observed information.  With ``strict=False`` a separated sample
    returns its last iterate (``separated=True``) instead of raising.
    """
    names = spec.param_names
    X = spec.design(data.columns)
    _check_finite(X, data.ids)
    y = data.chosen
    n, J, K = X.shape
    if n == 0:
        raise ValueError("empty dataset")
    if len(np.unique(y)) < 2:
        if strict:
            raise SeparationError("all observations chose the same alternative")
    D = (X - X[:, :1, :]).reshape(n * J, K)
    scale = np.sqrt((D ** 2).mean(axis=0))
    if np.any(scale == 0):
        raise SingularInformationError([names[k] for k in np.nonzero(scale == 0)[0]])
    bad = _collinear_columns(D / scale, names)
    if bad:
        raise SingularInformationError(bad)
    Z = X / scale

    gamma = np.zeros(K)
    ll, g, H = _loglike_parts(Z, y, gamma)
    trace = []
    converged = separated = False
    it = 0
    for it in range(1, max_iter + 1):
        g_orig = g / scale
        trace.append((it - 1, ll, float(np.max(np.abs(g_orig)))))
        if np.max(np.abs(g_orig)) < gtol:
            converged = True
            it -= 1
            break
        try:
            step = np.linalg.solve(-H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(-H, g, rcond=None)[0]
        decrement = float(g @ step)
        t = 1.0
        for _ in range(60):
            new = gamma + t * step
            ll_new, g_new, H_new = _loglike_parts(Z, y, new)
            if ll_new >= ll - 1e-12 * max(1.0, abs(ll)):
                break
            t *= 0.5
        else:
            break
        gamma, ll, g, H = new, ll_new, g_new, H_new
        if ll > -1e-6 * n or np.max(np.abs(gamma)) > 1e3:
            separated = True
            break
        if decrement < 1e-24 * max(1.0, abs(ll)):
            # no representable improvement left; gradient is at rounding level
            converged = np.max(np.abs(g / scale)) < 1e-6
            break
    grad_norm = float(np.max(np.abs(g / scale)))
    # every observation fitted with near certainty: the gradient can vanish first
    separated = separated or ll > -1e-6 * n
    if separated or len(np.unique(y)) < 2:
        if strict:
            raise SeparationError("fitted probabilities approach 0/1: the sample is separated")
        return FitResult(names, gamma / scale, np.full(K, np.inf), ll,
                         null_log_likelihood(y, J, null), n, it, False, grad_norm, spec, True, null)
    if not converged:
        raise ConvergenceError(f"Newton did not converge in {max_iter} iterations "
                               f"(|grad|inf={grad_norm:.3g})", trace)
    info = -H
    eig, vecs = np.linalg.eigh(info)
    if eig[0] <= 1e-12 * eig[-1]:
        # flat likelihood direction at the optimum: quasi-separation on these columns
        weak = [names[k] for k in np.nonzero(np.abs(vecs[:, 0]) > 0.3)[0]]
        if strict:
            raise SingularInformationError(weak)
        return FitResult(names, gamma / scale, np.full(K, np.inf), float(ll),
                         null_log_likelihood(y, J, null), n, it, True, grad_norm, spec, True, null)
    cov = np.linalg.inv(info)
    se = np.sqrt(np.diag(cov)) / scale
    return FitResult(names, gamma / scale, se, float(ll), null_log_likelihood(y, J, null),
                     n, it, True, grad_norm, spec, False, null)


def roc_auc(labels, scores) -> float:
    """Area under the ROC curve from the Mann-Whitney rank statistic."""
    labels = np.asarray(labels, dtype=bool)
    n1 = labels.sum()
    n0 = len(labels) - n1
    if n1 == 0 or n0 == 0:
        return float("nan")
    ranks = stats.rankdata(scores)
    return float((ranks[labels].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


@dataclass
class CrossValidation:
    auc: float                 # mean over folds with both classes
    auc_pooled: float          # over all out-of-fold predictions
    accuracy: float            # mean over folds
    confusion: dict[str, int]  # pooled; positive class = non-base alternative
    fold_auc: list[float | None]
    fold_accuracy: list[float]
    skipped_folds: list[int]
    cutoff: float
    folds: int
    seed: int

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("auc", "auc_pooled", "accuracy", "confusion", "fold_auc", "fold_accuracy",
                 "skipped_folds", "cutoff", "folds", "seed")}


def fold_assignment(n: int, folds: int, seed: int) -> np.ndarray:
    perm = np.random.default_rng(seed).permutation(n)
    out = np.empty(n, dtype=int)
    out[perm] = np.arange(n) % folds
    return out


def crossvalidate(data: ChoiceData, spec: ModelSpec = ModelSpec(), folds: int = 10, cutoff: float = 0.49,
                  seed: int = 0, workers: int = 1) -> CrossValidation:
    """k-fold out-of-sample AUC and accuracy for P(non-base alternative).

    A row is predicted as the non-base alternative when its probability is at
    least ``cutoff``.  Folds whose held-out part has one class only get no AUC.
    """
    n = len(data)
    if n < folds:
        raise ValueError(f"need at least {folds} observations, have {n}")
    assign = fold_assignment(n, folds, seed)
    positive = spec.alternatives.index(spec.others[0])

    def run(f):
        train, test = np.nonzero(assign != f)[0], np.nonzero(assign == f)[0]
        res = fit(data.subset(train), spec, strict=False)
        return test, res.predict_proba(data.subset(test))[:, positive]

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            outs = list(ex.map(run, range(folds)))
    else:
        outs = [run(f) for f in range(folds)]

    scores = np.empty(n)
    fold_auc, fold_acc, skipped = [], [], []
    for f, (test, p) in enumerate(outs):
        scores[test] = p
        lab = data.chosen[test] == positive
        a = roc_auc(lab, p)
        if math.isnan(a):
            skipped.append(f)
            fold_auc.append(None)
        else:
            fold_auc.append(a)
        fold_acc.append(float(np.mean((p >= cutoff) == lab)))
    lab = data.chosen == positive
    pred = scores >= cutoff
    confusion = {"tp": int(np.sum(pred & lab)), "fp": int(np.sum(pred & ~lab)),
                 "tn": int(np.sum(~pred & ~lab)), "fn": int(np.sum(~pred & lab))}
    valid = [a for a in fold_auc if a is not None]
    return CrossValidation(float(np.mean(valid)) if valid else float("nan"), roc_auc(lab, scores),
                           float(np.mean(fold_acc)), confusion, fold_auc, fold_acc, skipped,
                           cutoff, folds, seed)


@dataclass(frozen=True)
class WhatIf:
    variable: str
    delta: float
    before: dict[str, float]
    after: dict[str, float]


def what_if(model, baseline: Mapping[str, float], variable: str, delta: float,
            spec: ModelSpec | None = None) -> WhatIf:
    """Choice probabilities before and after shifting one variable.

    ``model`` is a :class:`FitResult` or a mapping of coefficient names to
    values; ``variable`` is a dataset column such as ``StckExch.datatable``.
    """
    if isinstance(model, FitResult):
        beta, spec = model.params(), spec or model.spec
    else:
        beta, spec = dict(model), spec or ModelSpec()
    if variable not in spec.columns():
        raise KeyError(f"unknown variable {variable!r}; expected one of {spec.columns()}")
    obs = dict(baseline)
    before = probabilities(obs, beta, spec)
    obs[variable] = obs[variable] + delta
    return WhatIf(variable, delta, before, probabilities(obs, beta, spec))


@dataclass(frozen=True)
class Claim:
    variable: str
    delta: float
    alternative: str
    before: float
    after: float


# Probability shifts quoted for one-standard-deviation changes at the medians.
PUBLISHED_CLAIMS = (
    Claim("StckExch.datatable", 6, "datatable", 0.58, 0.87),
    Claim("CumNum.datatable", 1870, "datatable", 0.58, 0.65),
    Claim("C", 1, "datatable", 0.58, 0.73),
    Claim("RplGp.datatable", 0.21, "datatable", 0.58, 0.56),
    Claim("Prx2TD", 2.8, "tidy", 0.42, 0.54),
    Claim("AthPrx2TD", 0.24, "tidy", 0.42, 0.49),
)


def verify_claims(coefficients=None, medians=None, tolerance: float = 0.05) -> list[dict]:
    """Re-evaluate each quoted probability shift; one result dict per claim."""
    coefficients = coefficients or REFERENCE_COEFFICIENTS
    medians = medians or REFERENCE_MEDIANS
    out = []
    for c in PUBLISHED_CLAIMS:
        w = what_if(coefficients, medians, c.variable, c.delta)
        got_b, got_a = w.before[c.alternative], w.after[c.alternative]
        ok = abs(got_b - c.before) <= tolerance and abs(got_a - c.after) <= tolerance
        out.append({"variable": c.variable, "delta": c.delta, "alternative": c.alternative,
                    "expected_before": c.before, "expected_after": c.after,
                    "before": got_b, "after": got_a, "tolerance": tolerance, "passed": ok})
    return out


def dumps_report(doc: dict) -> str:
    return json.dumps({"schema_version": SCHEMA_VERSION, **doc}, indent=2, sort_keys=True) + "\n"
