"""Cross-validated learning of a composed surrogate ``u ~ f(g(x))``."""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ._rng import PRNG_NAME, make_rng
from .errors import CompatibilityError, GradRidgeError, InputError
from .featuremap import FeatureMap, SolverOptions, greedy_feature_map, j_hat
from .profile import (Profile, composed_prediction, gradient_enhanced_error, greedy_profile,
                      value_only_error)
from .sample import Marginal, Sample

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
TRACE_HEADER = ("phase", "fold", "iteration", "card", "train_loss", "test_loss")


@dataclass
class CvConfig:
    """Settings of the cross-validated training run.

    ``monitor`` selects the profile test loss: ``"value"`` (mean squared value
    error) or ``"gradient"`` (gradient-enhanced error).
    """

    m: int
    k_max: int = 60
    l_max: int = 200
    theta: float = 0.3
    folds: int = 5
    seed: int = 0
    use_gradients: bool = True
    monitor: str = "value"
    threads: int = 1
    solver: SolverOptions = field(default_factory=SolverOptions)

    def validate(self, n=None):
        if self.m < 1:
            raise InputError("m must be positive")
        if self.k_max < 0 or self.l_max < 0:
            raise InputError("k_max and l_max must be nonnegative")
        if not 0.0 < self.theta <= 1.0:
            raise InputError("theta must lie in (0, 1]")
        if self.folds < 2:
            raise InputError("need at least two folds")
        if self.monitor not in ("value", "gradient"):
            raise InputError("monitor must be 'value' or 'gradient'")
        if n is not None and n < self.folds:
            raise InputError(f"sample of size {n} cannot be split into {self.folds} folds")


@dataclass
class TraceRow:
    phase: str
    fold: int
    iteration: int
    card: int
    train_loss: float
    test_loss: Optional[float] = None


def partition_folds(n: int, folds: int, seed) -> list:
    """Seeded shuffle of ``range(n)`` cut into ``folds`` contiguous parts (sizes differ by <= 1)."""
    if folds < 1 or n < folds:
        raise InputError(f"cannot split {n} points into {folds} folds")
    perm = make_rng(seed, 7919).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def _train_test(n, parts, i):
    test = parts[i]
    train = np.sort(np.concatenate([p for j, p in enumerate(parts) if j != i]))
    return train, test


def _map(fn, items, threads):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _argmin_first(curve):
    curve = np.asarray(curve)
    return int(np.flatnonzero(curve == curve.min())[0])


@dataclass
class FeatureCv:
    feature_map: FeatureMap
    k_star: int
    mean_test: list
    trace: list


@dataclass
class ProfileCv:
    profile: Profile
    l_star: int
    mean_test: list
    trace: list


def cv_feature_map(sample: Sample, config: CvConfig) -> FeatureCv:
    """First half of the CV procedure: choose the number of feature enrichments."""
    config.validate(sample.n)
    parts = partition_folds(sample.n, config.folds, config.seed)

    def run_fold(i):
        train, test = _train_test(sample.n, parts, i)
        train_s, test_s = sample.subset(train), sample.subset(test)
        res = greedy_feature_map(train_s, config.m, config.k_max, config.theta,
                                 seed=make_rng(config.seed, i + 1), options=config.solver)
        tests = [j_hat(g, test_s) for g in res.maps]
        rows = [TraceRow("feature", i, j, g.basis.size, res.j_hat[j], tests[j])
                for j, g in enumerate(res.maps)]
        return tests, rows

    try:
        out = _map(run_fold, range(config.folds), config.threads)
    except GradRidgeError as exc:
        raise type(exc)(f"feature-map cross-validation failed: {exc}") from exc
    curves = np.array([t for t, _ in out])
    mean_test = curves.mean(axis=0)
    k_star = _argmin_first(mean_test)
    final = greedy_feature_map(sample, config.m, k_star, config.theta,
                               seed=make_rng(config.seed, 0), options=config.solver)
    trace = [row for _, rows in out for row in rows]
    trace += [TraceRow("feature_final", -1, j, g.basis.size, final.j_hat[j])
              for j, g in enumerate(final.maps)]
    logger.info("K* = %d (card %d), mean test J = %.3e", k_star, final.maps[-1].basis.size, mean_test[k_star])
    return FeatureCv(final.maps[-1], k_star, mean_test.tolist(), trace)


def cv_profile(sample: Sample, fmap: FeatureMap, config: CvConfig) -> ProfileCv:
    """Second half: choose the number of profile enrichments for a fixed feature map."""
    config.validate(sample.n)
    parts = partition_folds(sample.n, config.folds, config.seed)
    loss = value_only_error if config.monitor == "value" else gradient_enhanced_error

    def run_fold(i):
        train, test = _train_test(sample.n, parts, i)
        train_s, test_s = sample.subset(train), sample.subset(test)
        res = greedy_profile(fmap, train_s, config.l_max, config.theta, config.use_gradients)
        tests = [loss(f, fmap, test_s) for f in res.profiles]
        rows = [TraceRow("profile", i, j, f.basis.size, res.train_error[j], tests[j])
                for j, f in enumerate(res.profiles)]
        return tests, rows

    try:
        out = _map(run_fold, range(config.folds), config.threads)
    except GradRidgeError as exc:
        raise type(exc)(f"profile cross-validation failed: {exc}") from exc
    curves = np.array([t for t, _ in out])
    mean_test = curves.mean(axis=0)
    l_star = _argmin_first(mean_test)
    final = greedy_profile(fmap, sample, l_star, config.theta, config.use_gradients)
    trace = [row for _, rows in out for row in rows]
    trace += [TraceRow("profile_final", -1, j, f.basis.size, final.train_error[j])
              for j, f in enumerate(final.profiles)]
    return ProfileCv(final.profiles[-1], l_star, mean_test.tolist(), trace)


@dataclass
class SurrogateModel:
    """Composed surrogate ``x -> f(g(standardize(x)))``."""

    marginals: tuple
    feature_map: FeatureMap
    profile: Profile
    metadata: dict = field(default_factory=dict)
    trace: list = field(default_factory=list, repr=False)

    @property
    def d(self):
        return self.feature_map.d

    @property
    def m(self):
        return self.feature_map.m

    def _standardize(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.d:
            raise CompatibilityError(f"model expects dimension {self.d}, got {x.shape[1]}")
        xi = np.empty_like(x)
        jac = np.empty_like(x)
        for j, mg in enumerate(self.marginals):
            xi[:, j], jac[:, j] = mg.standardize(x[:, j])
        return xi, jac

    def predict(self, x):
        xi, _ = self._standardize(x)
        return self.profile.evaluate(self.feature_map.evaluate(xi))

    def predict_with_gradient(self, x):
        xi, jac = self._standardize(x)
        f, grad = composed_prediction(self.profile, self.feature_map, xi)
        return f, grad * jac

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "d": self.d,
            "m": self.m,
            "marginals": [mg.to_dict() for mg in self.marginals],
            "feature": {
                "families": [f.value for f in self.feature_map.basis.families],
                "lambda": [list(map(int, a)) for a in self.feature_map.basis.index_set],
                "G": self.feature_map.G.tolist(),
            },
            "profile": {
                "gamma": [list(map(int, a)) for a in self.profile.basis.index_set],
                "w": self.profile.w.tolist(),
            },
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, data):
        try:
            if data["format_version"] != FORMAT_VERSION:
                raise CompatibilityError(f"unsupported model format version {data['format_version']}")
            m = int(data["m"])
            marginals = tuple(Marginal.from_dict(x) for x in data["marginals"])
            feat = data["feature"]
            fmap = FeatureMap.from_dict({"families": feat["families"], "indices": feat["lambda"], "G": feat["G"]})
            prof = Profile.from_dict({"indices": data["profile"]["gamma"], "w": data["profile"]["w"]}, m)
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, GradRidgeError):
                raise
            raise InputError(f"malformed model document: {exc}") from exc
        if fmap.d != int(data["d"]) or fmap.m != m or len(marginals) != fmap.d:
            raise CompatibilityError("model document has inconsistent dimensions")
        return cls(marginals, fmap, prof, data.get("metadata", {}))

    @classmethod
    def from_json(cls, text):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InputError(f"cannot parse model file: {exc}") from exc
        return cls.from_dict(data)


def cv_train(sample: Sample, config: CvConfig) -> SurrogateModel:
    """Learn ``g`` then ``f`` with cross-validated stopping, both on the same sample."""
    config.validate(sample.n)
    std = sample.standardized()
    feat = cv_feature_map(std, config)
    prof = cv_profile(std, feat.feature_map, config)
    metadata = {
        "N": sample.n,
        "m": config.m,
        "k_star": feat.k_star,
        "l_star": prof.l_star,
        "card_lambda": feat.feature_map.basis.size,
        "card_gamma": prof.profile.basis.size,
        "train_j_hat": j_hat(feat.feature_map, std),
        "train_mse": value_only_error(prof.profile, feat.feature_map, std),
        "cv_feature_loss": feat.mean_test,
        "cv_profile_loss": prof.mean_test,
        "config": {k: v for k, v in asdict(config).items() if k not in ("threads",)},
        "prng": PRNG_NAME,
    }
    return SurrogateModel(sample.marginals, feat.feature_map, prof.profile, metadata,
                          feat.trace + prof.trace)


def evaluate(model: SurrogateModel, validation: Sample) -> dict:
    """Validation metrics: value MSE, alignment loss of ``g`` and gradient MSE of ``f o g``."""
    validation.check_compatible(model.d)
    f, grad = model.predict_with_gradient(validation.points)
    std = Sample(validation.points, validation.values, validation.gradients, model.marginals).standardized()
    return {
        "mse": float(np.mean((validation.values - f) ** 2)),
        "j_hat": j_hat(model.feature_map, std),
        "gradient_mse": float(np.mean(np.sum((validation.gradients - grad) ** 2, axis=1))),
        "n": validation.n,
    }


def _fmt(x):
    return "" if x is None else format(float(x), ".17g")


def trace_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_HEADER)
    for r in rows:
        writer.writerow([r.phase, r.fold, r.iteration, r.card, _fmt(r.train_loss), _fmt(r.test_loss)])
    return buf.getvalue()
