"""Bayesian optimization of forest hyper-parameters.

A Gaussian process with a fixed squared-exponential kernel models the
score surface on the unit hypercube of the free search dimensions;
candidates are ranked by expected improvement.
"""

from dataclasses import dataclass, field
import inspect
import json
import logging
import os

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import norm, qmc

from .errors import ConfigurationError, NumericError
from .neural_trees import HyperParams

log = logging.getLogger(__name__)

N_INITIAL = 5
N_CANDIDATES = 512
JITTER = 1e-8
MAX_JITTER_TRIES = 3


@dataclass(frozen=True)
class SearchSpace:
    """Box over ``HyperParams``. A dimension whose bounds coincide is fixed.

    ``batch_size`` is categorical (ordered choices); the others are numeric
    ranges. Integer dimensions are relaxed to reals and rounded to the
    nearest valid value before evaluation.
    """

    num_trees: tuple = (5, 50)
    depth: tuple = (3, 16)
    features_rate: tuple = (0.5, 1.0)
    batch_size: tuple = (8, 16, 32, 64, 128, 256)
    num_epochs: tuple = (5, 50)
    learning_rate: float = 0.01

    NUMERIC = ("num_trees", "depth", "features_rate", "num_epochs")
    INTEGER = ("num_trees", "depth", "num_epochs")

    def __post_init__(self):
        for name in self.NUMERIC:
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigurationError(f"{name}: lower bound above upper bound")
        if len(self.batch_size) == 0:
            raise ConfigurationError("batch_size needs at least one choice")
        if not self.features_rate[0] > 0 or self.features_rate[1] > 1:
            raise ConfigurationError("features_rate bounds must lie in (0, 1]")

    @property
    def free_dims(self):
        dims = [n for n in ("num_trees", "depth", "features_rate") if
                getattr(self, n)[0] != getattr(self, n)[1]]
        if len(self.batch_size) > 1:
            dims.append("batch_size")
        if self.num_epochs[0] != self.num_epochs[1]:
            dims.append("num_epochs")
        return tuple(dims)

    def from_unit(self, u):
        """Map a point of the free-dimension unit cube to valid ``HyperParams``."""
        u = np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0)
        free = self.free_dims
        if u.shape != (len(free),):
            raise ConfigurationError(f"expected {len(free)} coordinates, got {u.shape}")
        coords = dict(zip(free, u))
        values = {}
        for name in self.NUMERIC:
            lo, hi = getattr(self, name)
            v = lo + coords.get(name, 0.0) * (hi - lo)
            values[name] = int(np.clip(np.rint(v), lo, hi)) if name in self.INTEGER else float(v)
        n_choices = len(self.batch_size)
        idx = int(np.rint(coords.get("batch_size", 0.0) * (n_choices - 1)))
        values["batch_size"] = int(self.batch_size[idx])
        return HyperParams(learning_rate=self.learning_rate, **values)

    def to_unit(self, hp):
        out = []
        for name in self.free_dims:
            if name == "batch_size":
                out.append(self.batch_size.index(int(hp.batch_size)) / (len(self.batch_size) - 1))
            else:
                lo, hi = getattr(self, name)
                out.append((float(getattr(hp, name)) - lo) / (hi - lo))
        return np.asarray(out, dtype=np.float64)

    def contains(self, hp):
        for name in self.NUMERIC:
            lo, hi = getattr(self, name)
            if not lo <= getattr(hp, name) <= hi:
                return False
        return hp.batch_size in self.batch_size and hp.learning_rate == self.learning_rate

    def as_dict(self):
        d = {name: list(getattr(self, name)) for name in self.NUMERIC}
        d["batch_size"] = list(self.batch_size)
        d["learning_rate"] = self.learning_rate
        return d


@dataclass(frozen=True)
class TrialRecord:
    params: HyperParams
    score: float
    seed: int
    failed: bool = False
    error: str = ""

    def to_json(self):
        return json.dumps({"params": self.params.as_dict(), "score": self.score,
                           "seed": self.seed, "failed": self.failed, "error": self.error},
                          sort_keys=True)

    @classmethod
    def from_json(cls, line):
        d = json.loads(line)
        return cls(HyperParams(**d["params"]), float(d["score"]), int(d["seed"]),
                   bool(d.get("failed", False)), d.get("error", ""))


def se_kernel(A, B, sigma_f=1.0, length=0.2):
    d2 = np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * A @ B.T
    return sigma_f ** 2 * np.exp(-np.maximum(d2, 0.0) / (2.0 * length ** 2))


class GaussianProcess:
    """GP regression with fixed kernel hyper-parameters and a constant prior mean.

    The prior mean defaults to the average observed score.
    """

    def __init__(self, sigma_f=1.0, length=0.2, noise=1e-4, prior_mean=None):
        self.sigma_f = sigma_f
        self.length = length
        self.noise = noise
        self.prior_mean = prior_mean

    def fit(self, X, y):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64)
        if X.shape[0] == 0 or y.shape != (X.shape[0],):
            raise ConfigurationError("GP needs at least one aligned observation")
        self.X_ = X
        self.mean_ = float(np.mean(y)) if self.prior_mean is None else float(self.prior_mean)
        K = se_kernel(X, X, self.sigma_f, self.length)
        K[np.diag_indices_from(K)] += self.noise ** 2
        for attempt in range(MAX_JITTER_TRIES + 1):
            try:
                self.chol_ = cho_factor(K, lower=True)
                break
            except np.linalg.LinAlgError:
                if attempt == MAX_JITTER_TRIES:
                    raise NumericError("kernel matrix is not positive definite") from None
                K[np.diag_indices_from(K)] += JITTER
        self.alpha_ = cho_solve(self.chol_, y - self.mean_)
        return self

    def predict(self, Xc):
        """Posterior mean and variance of the latent function at ``Xc``."""
        Xc = np.atleast_2d(np.asarray(Xc, dtype=np.float64))
        Ks = se_kernel(Xc, self.X_, self.sigma_f, self.length)
        mean = self.mean_ + Ks @ self.alpha_
        v = cho_solve(self.chol_, Ks.T)
        var = self.sigma_f ** 2 - np.sum(Ks * v.T, axis=1)
        return mean, np.maximum(var, 0.0)


def gp_posterior(X_obs, y_obs, candidates, sigma_f=1.0, length=0.2, noise=1e-4):
    """``(mean, variance)`` at ``candidates`` given unit-cube observations."""
    return GaussianProcess(sigma_f, length, noise).fit(X_obs, y_obs).predict(candidates)


def expected_improvement(mean, variance, best):
    """EI for maximization. With zero variance it reduces to ``max(mean - best, 0)``."""
    mean = np.asarray(mean, dtype=np.float64)
    s = np.sqrt(np.maximum(np.asarray(variance, dtype=np.float64), 0.0))
    gap = mean - best
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(s > 0, gap / np.where(s > 0, s, 1.0), 0.0)
        ei = np.where(s > 0, gap * norm.cdf(z) + s * norm.pdf(z), np.maximum(gap, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


def _call_objective(objective, hp, seed):
    try:
        n_args = len(inspect.signature(objective).parameters)
    except (TypeError, ValueError):
        n_args = 2
    return float(objective(hp, seed) if n_args >= 2 else objective(hp))


def load_trials(path):
    if path is None or not os.path.exists(path):
        return []
    with open(path, encoding="utf-8") as fh:
        return [TrialRecord.from_json(line) for line in fh if line.strip()]


@dataclass
class OptimizationResult:
    best: HyperParams
    best_score: float
    trials: list = field(default_factory=list)


def optimize(space, objective, budget=30, seed=0, trials_log=None, resume=False,
             n_initial=N_INITIAL, n_candidates=N_CANDIDATES):
    """Maximize ``objective(hp, seed) -> score`` over ``space`` with ``budget`` trials.

    The first ``n_initial`` points come from a Latin hypercube; each later
    point maximizes expected improvement over ``n_candidates`` uniform random
    candidates. A failing objective is recorded with score 0 and flagged.

    When ``trials_log`` is given every trial is appended as one JSON line.
    With ``resume=True`` trials already in the log are replayed instead of
    re-evaluated; the proposal sequence is deterministic in ``seed`` so a
    resumed run matches an uninterrupted one.
    """
    if budget < n_initial:
        raise ConfigurationError(f"budget must be >= {n_initial}, got {budget}")
    rng = np.random.default_rng(seed)
    free = space.free_dims
    n_dims = len(free)
    prior = load_trials(trials_log) if resume else []
    if trials_log is not None and not resume and os.path.exists(trials_log):
        os.remove(trials_log)

    trial_seeds = [int(s) for s in
                   np.random.SeedSequence(int(seed)).generate_state(budget, dtype=np.uint32)]
    if n_dims:
        initial = qmc.LatinHypercube(d=n_dims, seed=rng).random(n_initial)
    else:
        initial = np.zeros((n_initial, 0))

    trials, units = [], []

    def run(i, u):
        hp = space.from_unit(u)
        if i < len(prior):
            rec = prior[i]
            if rec.params != hp:
                raise ConfigurationError(
                    f"trials log diverges at trial {i}: {rec.params} != {hp}"
                )
        else:
            try:
                score = _call_objective(objective, hp, trial_seeds[i])
                if not np.isfinite(score):
                    raise NumericError(f"objective returned {score}")
                rec = TrialRecord(hp, score, trial_seeds[i])
            except Exception as exc:  # recorded, optimization continues
                log.warning("trial %d failed: %s", i, exc)
                rec = TrialRecord(hp, 0.0, trial_seeds[i], True, f"{type(exc).__name__}: {exc}")
            if trials_log is not None:
                with open(trials_log, "a", encoding="utf-8") as fh:
                    fh.write(rec.to_json() + "\n")
        trials.append(rec)
        units.append(space.to_unit(hp))

    for i in range(n_initial):
        run(i, initial[i])
    for i in range(n_initial, budget):
        scores = np.array([t.score for t in trials])
        candidates = rng.random((n_candidates, n_dims))
        if n_dims:
            gp = GaussianProcess().fit(np.array(units), scores)
            mean, var = gp.predict(candidates)
            ei = expected_improvement(mean, var, scores.max())
            u = candidates[int(np.argmax(ei))]
        else:
            u = np.zeros(0)
        run(i, u)

    scores = np.array([t.score for t in trials])
    best = int(np.argmax(scores))
    return OptimizationResult(trials[best].params, float(scores[best]), trials)


def random_search(space, objective, budget=30, seed=0):
    """Uniform random sampling baseline with the same interface as ``optimize``."""
    rng = np.random.default_rng(seed)
    trial_seeds = [int(s) for s in
                   np.random.SeedSequence(int(seed)).generate_state(budget, dtype=np.uint32)]
    trials = []
    for i in range(budget):
        hp = space.from_unit(rng.random(len(space.free_dims)))
        trials.append(TrialRecord(hp, _call_objective(objective, hp, trial_seeds[i]),
                                  trial_seeds[i]))
    scores = np.array([t.score for t in trials])
    best = int(np.argmax(scores))
    return OptimizationResult(trials[best].params, float(scores[best]), trials)
