"""Binary choice estimation: logit with dataset-specific scale parameters,
pooled estimation across survey instruments, and a synthetic-choice generator
for recovery tests.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

COVARIATES = ("ASC_AV", "Age", "Female", "Bike_male", "Toronto", "HMD")
DATASETS = ("text", "visual", "vire")

GRAD_TOL = 1e-6
MAX_ITER = 200
SEPARATION_BETA = 50.0


class EstimationError(RuntimeError):
    pass


class SeparationError(EstimationError):
    """A covariate (near-)perfectly predicts the choice."""


@dataclass(frozen=True)
class ChoiceObservation:
    respondent: int
    dataset: str
    x: tuple[tuple[str, float], ...]  # named covariates
    chosen: int  # 0 = current, 1 = av

    def value(self, name: str) -> float:
        for key, v in self.x:
            if key == name:
                return v
        return 0.0

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(k for k, _ in self.x)


@dataclass(frozen=True)
class UtilitySpec:
    covariates: tuple[str, ...] = COVARIATES
    restricted: tuple[tuple[str, tuple[str, ...]], ...] = (("HMD", ("vire",)),)
    scale_groups: tuple[tuple[str, str], ...] = (
        ("text", "text"),
        ("visual", "visual"),
        ("vire", "vire"),
    )
    reference: str = "vire"  # scale group fixed to 1

    def group_of(self, dataset: str) -> str:
        for ds, grp in self.scale_groups:
            if ds == dataset:
                return grp
        raise KeyError(f"dataset {dataset!r} has no scale group")

    def allowed(self, covariate: str, dataset: str) -> bool:
        for name, only in self.restricted:
            if name == covariate:
                return dataset in only
        return True

    def __post_init__(self):
        groups = [grp for _, grp in self.scale_groups]
        if self.reference not in groups:
            raise ValueError("reference scale group must appear in scale_groups")


@dataclass(frozen=True)
class EstimationResult:
    beta_names: tuple[str, ...]
    beta: np.ndarray
    beta_se: np.ndarray
    scale_names: tuple[str, ...]     # reference group first
    scales: np.ndarray               # reference fixed at 1
    scale_se: np.ndarray             # nan for the reference
    loglik: float
    null_loglik: float
    rho_sq: float
    iterations: int
    converged: bool
    grad_norm: float
    n_obs: int


def rho_squared(loglik: float, null_loglik: float) -> float:
    """McFadden goodness of fit, 1 - L/L0 against the zero-parameter null."""
    if null_loglik >= 0.0:
        raise ValueError("null log-likelihood must be negative")
    if loglik > 0.0:
        raise ValueError("log-likelihood cannot be positive")
    if loglik < null_loglik:
        raise ValueError("log-likelihood below the null value")
    return 1.0 - loglik / null_loglik


def _matrices(
    data: Sequence[ChoiceObservation], spec: UtilitySpec, covariates: Sequence[str]
) -> tuple[np.ndarray, np.ndarray, np.ndarray, tuple[str, ...]]:
    """Design matrix, outcomes and scale-group index per row."""
    groups_order: list[str] = []
    for _, grp in spec.scale_groups:
        if grp not in groups_order:
            groups_order.append(grp)
    # reference group first so the scale vector starts with the fixed 1
    original = {grp: i for i, grp in enumerate(groups_order)}
    groups_order.sort(key=lambda grp: (grp != spec.reference, original[grp]))
    X = np.zeros((len(data), len(covariates)))
    y = np.zeros(len(data))
    g = np.zeros(len(data), dtype=np.int64)
    for i, row in enumerate(data):
        if row.chosen not in (0, 1):
            raise EstimationError(f"row {i}: chosen must be 0 or 1")
        y[i] = row.chosen
        g[i] = groups_order.index(spec.group_of(row.dataset))
        for j, name in enumerate(covariates):
            if spec.allowed(name, row.dataset):
                X[i, j] = row.value(name)
    if not np.isfinite(X).all():
        raise EstimationError("non-finite covariate values")
    return X, y, g, tuple(groups_order)


def _loglik_core(
    X: np.ndarray, y: np.ndarray, g: np.ndarray, beta: np.ndarray, mu: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Log-likelihood plus the pieces shared by gradient and Hessian."""
    V = X @ beta
    eta = mu[g] * V
    # log(sigmoid) without overflow on either tail
    ll = np.where(eta >= 0.0, -np.log1p(np.exp(-eta)), eta - np.log1p(np.exp(eta)))
    L = float(np.sum(y * ll + (1.0 - y) * (ll - eta)))
    P = np.where(eta >= 0.0, 1.0 / (1.0 + np.exp(-eta)), np.exp(eta) / (1.0 + np.exp(eta)))
    r = y - P
    w = P * (1.0 - P)
    return L, V, P, r, w


def loglik_grad(
    data: Sequence[ChoiceObservation],
    spec: UtilitySpec,
    beta: Sequence[float],
    scales: dict,
) -> tuple[float, np.ndarray]:
    """Log-likelihood and its exact gradient over beta and the free scales.

    `scales` maps scale-group name to value; the reference group defaults to 1
    and is always omitted from the gradient. Summation is in fixed row order.
    """
    covariates = spec.covariates
    X, y, g, group_names = _matrices(data, spec, covariates)
    mu = np.array([float(scales.get(grp, 1.0)) for grp in group_names])
    beta = np.asarray(beta, dtype=np.float64)
    L, V, P, r, w = _loglik_core(X, y, g, beta, mu)
    g_beta = X.T @ (r * mu[g])
    g_mu = [float(np.sum(r[g == k] * V[g == k])) for k in range(1, len(group_names))]
    return L, np.concatenate([g_beta, np.asarray(g_mu)])


def _newton(
    X: np.ndarray,
    y: np.ndarray,
    g: np.ndarray,
    n_groups: int,
) -> tuple[np.ndarray, np.ndarray, float, int, bool, float, np.ndarray]:
    """Damped Newton ascent of the scaled-logit likelihood.

    Coefficients are estimated first with all scales pinned at 1 (a concave
    plain-logit problem), then scales and coefficients move jointly; at beta=0
    the scale directions carry no curvature, so starting them together is not
    stable. Returns beta, mu (group 0 fixed at 1), loglik, iterations,
    converged, gradient norm and the observed information at the optimum.
    """
    n, k = X.shape
    n_free = n_groups - 1

    def unpack(theta):
        return theta[:k], np.concatenate([[1.0], theta[k:]])

    def value(theta):
        b, m = unpack(theta)
        L, *_ = _loglik_core(X, y, g, b, m)
        return L

    def grad_hess(theta):
        b, m = unpack(theta)
        L, V, P, r, w = _loglik_core(X, y, g, b, m)
        mu_row = m[g]
        g_beta = X.T @ (r * mu_row)
        H_bb = -(X * (w * mu_row**2)[:, None]).T @ X
        grads = [g_beta]
        H = np.zeros((k + n_free, k + n_free))
        H[:k, :k] = H_bb
        for f in range(n_free):
            rows = g == (f + 1)
            grads.append(np.array([np.sum(r[rows] * V[rows])]))
            H_bm = X[rows].T @ (-w[rows] * mu_row[rows] * V[rows] + r[rows])
            H[:k, k + f] = H_bm
            H[k + f, :k] = H_bm
            H[k + f, k + f] = -np.sum(w[rows] * V[rows] ** 2)
        return L, np.concatenate(grads), H

    def ascend(theta, active, budget):
        """Newton with backtracking over the `active` coordinate mask."""
        L, grad, H = grad_hess(theta)
        steps = 0
        for steps in range(1, budget + 1):
            ga = grad[active]
            if float(np.max(np.abs(ga))) < GRAD_TOL:
                break
            if np.max(np.abs(theta[:k])) > SEPARATION_BETA:
                raise SeparationError(
                    "coefficients diverging with a non-vanishing gradient; "
                    "a covariate may perfectly predict the choice"
                )
            Ha = H[np.ix_(active, active)]
            step_a = None
            lam = 0.0
            for _ in range(8):
                try:
                    cand = np.linalg.solve(-Ha + lam * np.eye(len(Ha)), ga)
                except np.linalg.LinAlgError:
                    cand = None
                if cand is not None and np.isfinite(cand).all() and float(ga @ cand) > 0.0:
                    step_a = cand
                    break
                lam = max(lam * 10.0, 1e-8)
            if step_a is None:
                step_a = ga  # gradient ascent fallback
            cap = float(np.max(np.abs(step_a)))
            if cap > 2.0:
                step_a = step_a * (2.0 / cap)
            step = np.zeros_like(theta)
            step[active] = step_a
            if float(np.max(np.abs(ga))) < 1e-3:
                # quadratic-convergence region: the likelihood plateau is below
                # float resolution, take the raw Newton step
                cand = theta + step
                if not n_free or np.all(cand[k:] > 1e-3):
                    theta = cand
                    L, grad, H = grad_hess(theta)
                    continue
            slope = float(grad @ step)
            alpha = 1.0
            improved = False
            for _ in range(50):
                cand = theta + alpha * step
                if n_free and np.any(cand[k:] <= 1e-3):
                    alpha *= 0.5
                    continue
                Lc = value(cand)
                if Lc > L + 1e-4 * alpha * slope or Lc > L:
                    theta = cand
                    improved = True
                    break
                alpha *= 0.5
            if not improved:
                break
            L, grad, H = grad_hess(theta)
        return theta, L, grad, H, steps

    theta = np.concatenate([np.zeros(k), np.ones(n_free)])
    active = np.zeros(k + n_free, dtype=bool)
    active[:k] = True
    theta, L, grad, H, used = ascend(theta, active, MAX_ITER // 2 if n_free else MAX_ITER)
    iters = used
    if n_free:
        active[:] = True
        theta, L, grad, H, used = ascend(theta, active, MAX_ITER - iters)
        iters += used
    gnorm = float(np.max(np.abs(grad)))
    converged = gnorm < GRAD_TOL
    beta, mu = unpack(theta)
    return beta, mu, L, iters, converged, gnorm, -H


def _finish(
    beta, mu, L, iters, converged, gnorm, info, n, beta_names, group_names
) -> EstimationResult:
    n_free = len(group_names) - 1
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError as exc:
        raise EstimationError("singular information matrix at the optimum") from exc
    diag = np.diag(cov)
    if np.any(diag <= 0.0):
        raise EstimationError("information matrix is not positive definite at the optimum")
    se = np.sqrt(diag)
    if np.any(se[: len(beta_names)] > 100.0):
        # flat likelihood along some coefficient: a covariate (near-)perfectly
        # predicts the choice
        raise SeparationError(
            "degenerate standard errors at the optimum; quasi-separation suspected"
        )
    k = len(beta_names)
    scale_se = np.concatenate([[np.nan], se[k : k + n_free]])
    L0 = n * math.log(0.5)
    return EstimationResult(
        beta_names=tuple(beta_names),
        beta=beta,
        beta_se=se[:k],
        scale_names=tuple(group_names),
        scales=mu,
        scale_se=scale_se,
        loglik=L,
        null_loglik=L0,
        rho_sq=rho_squared(L, L0),
        iterations=iters,
        converged=converged,
        grad_norm=gnorm,
        n_obs=n,
    )


def estimate(data: Sequence[ChoiceObservation], spec: UtilitySpec = UtilitySpec()) -> EstimationResult:
    """Maximum likelihood for a single dataset (no free scales)."""
    datasets = {row.dataset for row in data}
    if len(datasets) != 1:
        raise EstimationError("estimate() expects a single dataset; use estimate_joint")
    ds = datasets.pop()
    if not any(int(r.chosen) == 0 for r in data) or not any(int(r.chosen) == 1 for r in data):
        raise SeparationError("every observation chose the same alternative")
    covariates = tuple(c for c in spec.covariates if spec.allowed(c, ds))
    one = UtilitySpec(
        covariates=covariates,
        restricted=spec.restricted,
        scale_groups=((ds, ds),),
        reference=ds,
    )
    X, y, g, group_names = _matrices(data, one, covariates)
    beta, mu, L, iters, converged, gnorm, info = _newton(X, y, g, 1)
    return _finish(beta, mu, L, iters, converged, gnorm, info, len(data), covariates, group_names)


def estimate_joint(
    datasets: Sequence[Sequence[ChoiceObservation]], spec: UtilitySpec = UtilitySpec()
) -> EstimationResult:
    """Pooled estimation: one beta vector, one scale per group, reference fixed at 1."""
    data = [row for ds in datasets for row in ds]
    if not data:
        raise EstimationError("no observations")
    if not any(int(r.chosen) == 0 for r in data) or not any(int(r.chosen) == 1 for r in data):
        raise SeparationError("every observation chose the same alternative")
    X, y, g, group_names = _matrices(data, spec, spec.covariates)
    beta, mu, L, iters, converged, gnorm, info = _newton(X, y, g, len(group_names))
    return _finish(
        beta, mu, L, iters, converged, gnorm, info, len(data), spec.covariates, group_names
    )


def choice_probability(
    row: ChoiceObservation, spec: UtilitySpec, beta: dict, scales: dict
) -> float:
    v = sum(beta.get(name, 0.0) * row.value(name) for name in spec.covariates if spec.allowed(name, row.dataset))
    grp = spec.group_of(row.dataset)
    m = 1.0 if grp == spec.reference else float(scales[grp])
    eta = m * v
    return 1.0 / (1.0 + math.exp(-eta)) if eta >= 0 else math.exp(eta) / (1.0 + math.exp(eta))


def simulate_choices(
    rows: Sequence[ChoiceObservation],
    spec: UtilitySpec,
    beta: dict,
    scales: dict,
    seed: int,
) -> list[ChoiceObservation]:
    """Redraw the chosen alternative for each row from the scaled-logit model."""
    rng = np.random.default_rng(seed)
    out = []
    for row in rows:
        p = choice_probability(row, spec, beta, scales)
        chosen = int(rng.random() < p)
        out.append(ChoiceObservation(row.respondent, row.dataset, row.x, chosen))
    return out


def build_dataset(sessions: Sequence) -> list[ChoiceObservation]:
    """One choice row per (respondent, stage) from completed sessions.

    Age enters standardized over the respondents appearing in the input;
    the HMD-experience covariate only exists for the immersive stage.
    """
    ages = {}
    for s in sessions:
        if s.preference is None:
            raise ValueError(
                f"session {s.respondent.id}-{s.stage} has no recorded preference"
            )
        ages[s.respondent.id] = s.respondent.age
    values = np.array(list(ages.values()), dtype=np.float64)
    mean = float(values.mean()) if len(values) else 0.0
    sd = float(values.std()) if len(values) else 1.0
    rows = []
    for s in sessions:
        z_age = (s.respondent.age - mean) / sd if sd > 0 else 0.0
        male = 1 - int(s.respondent.female)
        x = [
            ("ASC_AV", 1.0),
            ("Age", z_age),
            ("Female", float(s.respondent.female)),
            ("Bike_male", float(int(s.respondent.primary_mode == "bike") * male)),
            ("Toronto", float(s.respondent.city == "Toronto")),
        ]
        if s.stage == "vire":
            x.append(("HMD", float(s.respondent.hmd_experience)))
        rows.append(
            ChoiceObservation(
                respondent=s.respondent.id,
                dataset=s.stage,
                x=tuple(x),
                chosen=int(s.preference == "av"),
            )
        )
    return rows


def dataset_shares(rows: Sequence[ChoiceObservation]) -> dict[str, float]:
    """Share choosing the hypothetical alternative, per dataset."""
    totals: dict[str, list[int]] = {}
    for row in rows:
        num, den = totals.setdefault(row.dataset, [0, 0])
        totals[row.dataset] = [num + row.chosen, den + 1]
    return {ds: num / den for ds, (num, den) in sorted(totals.items())}


def save_dataset(rows: Sequence[ChoiceObservation], path) -> None:
    """Delimited text: one header row of covariate names plus dataset and chosen."""
    names: list[str] = []
    for row in rows:
        for name in row.names:
            if name not in names:
                names.append(name)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names + ["dataset", "chosen"])
        for row in rows:
            writer.writerow([row.value(n) for n in names] + [row.dataset, row.chosen])


def load_dataset(path) -> list[ChoiceObservation]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[-2:] != ["dataset", "chosen"]:
            raise ValueError("dataset file must end with 'dataset' and 'chosen' columns")
        names = header[:-2]
        rows = []
        for i, rec in enumerate(reader):
            x = tuple((n, float(v)) for n, v in zip(names, rec[:-2]))
            ds = rec[-2]
            if ds == "vire":
                pass
            else:  # the HMD column only belongs to the immersive instrument
                x = tuple((n, v) for n, v in x if n != "HMD")
            rows.append(ChoiceObservation(respondent=i, dataset=ds, x=x, chosen=int(rec[-1])))
        return rows


def format_result(result: EstimationResult) -> str:
    """Plain-text report in the familiar one-column estimates layout."""
    out = io.StringIO()
    out.write(f"{'Parameter':<12}{'value':>10}{'std-err':>10}\n")
    for name, b, se in zip(result.beta_names, result.beta, result.beta_se):
        out.write(f"{name:<12}{b:>10.3f}{se:>10.3f}\n")
    if len(result.scale_names) > 1:
        for name, m, se in zip(result.scale_names, result.scales, result.scale_se):
            label = f"scale_{name}"
            if math.isnan(se):
                out.write(f"{label:<12}{m:>10.3f}{'(fixed)':>10}\n")
            else:
                out.write(f"{label:<12}{m:>10.3f}{se:>10.3f}\n")
    out.write(f"{'LL':<12}{result.loglik:>10.3f}\n")
    out.write(f"{'rho^2':<12}{result.rho_sq:>10.3f}\n")
    out.write(f"{'Obs.':<12}{result.n_obs:>10d}\n")
    out.write(f"converged: {result.converged} after {result.iterations} iterations "
              f"(grad norm {result.grad_norm:.2e})\n")
    return out.getvalue()
