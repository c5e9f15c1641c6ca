"""Black-box victim models with query accounting.

Two concrete victims: a small fixed-weight feed-forward classifier for
realistic attack runs, and an analytically constructed landscape whose true
margin decreases at a known Lipschitz rate along one direction (used for
bound verification, where the harness may read the ground-truth margin
through a separate oracle method that attack tactics never see).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .defenses import LossMap, RndParams, apply_postprocess, rnd_preprocess
from .margin import margin_loss_predicted

__all__ = [
    "InputError",
    "BlackBoxModel",
    "SyntheticClassifier",
    "RobustLandscapeModel",
    "DefendedModel",
    "make_synthetic_classifier",
    "make_robust_landscape",
    "verify_global_robustness",
    "save_classifier",
    "load_classifier",
]


class InputError(ValueError):
    """Query input has wrong dimensions or lies outside the input range."""


class BlackBoxModel:
    """Query-only victim contract: scores out, one counter tick per query."""

    input_dims: int
    num_classes: int
    input_range: tuple[float, float]

    def __init__(self, input_dims: int, num_classes: int,
                 input_range: tuple[float, float] = (0.0, 1.0)):
        if input_dims < 1:
            raise ValueError("input_dims must be >= 1")
        if num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        self.input_dims = input_dims
        self.num_classes = num_classes
        self.input_range = input_range
        self.query_count = 0

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.input_dims,):
            raise InputError(f"expected shape ({self.input_dims},), got {x.shape}")
        lo, hi = self.input_range
        if x.min() < lo - 1e-12 or x.max() > hi + 1e-12:
            raise InputError("input outside the model's valid range")
        return x

    def query(self, x, rng: np.random.Generator | None = None) -> np.ndarray:
        x = self._check(x)
        self.query_count += 1
        return self._score(x)

    def _score(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class SyntheticClassifier(BlackBoxModel):
    """One-hidden-layer tanh network with fixed seeded weights.

    Deterministic: identical inputs yield identical scores across calls and
    runs.  The output scale puts typical top-two margins in the low single
    digits to tens, comparable to logit margins of image classifiers.
    """

    def __init__(self, input_dims: int = 32, num_classes: int = 10, seed: int = 0,
                 hidden: int = 64, out_scale: float = 6.0):
        super().__init__(input_dims, num_classes)
        self.seed = seed
        self.hidden = hidden
        self.out_scale = out_scale
        rng = np.random.default_rng(seed)
        self.w1 = rng.normal(0.0, 1.0, size=(hidden, input_dims)) / np.sqrt(input_dims)
        self.b1 = rng.normal(0.0, 0.5, size=hidden)
        self.w2 = rng.normal(0.0, 1.0, size=(num_classes, hidden)) / np.sqrt(hidden)
        self.b2 = rng.normal(0.0, 0.2, size=num_classes)

    def _score(self, x: np.ndarray) -> np.ndarray:
        hid = np.tanh(self.w1 @ x + self.b1)
        return self.out_scale * (self.w2 @ hid + self.b2)


def make_synthetic_classifier(input_dims: int = 32, num_classes: int = 10,
                              seed: int = 0) -> SyntheticClassifier:
    return SyntheticClassifier(input_dims, num_classes, seed)


class RobustLandscapeModel(BlackBoxModel):
    """Two-class model whose true margin is an explicit Lipschitz landscape.

    true margin(x) = max(L0 - lipschitz * max(0, <x - x0, direction>), floor).
    The direction is normalized so that a move of size r (in the declared
    norm) changes the margin by at most lipschitz * r, hence any class score
    by at most lipschitz * r / 2: the model is (r, lipschitz * r)-robust.
    """

    def __init__(self, L0: float, lipschitz: float, dims: int,
                 norm: str = "linf", floor: float = -1.0,
                 input_range: tuple[float, float] = (-1e9, 1e9)):
        if L0 <= 0:
            raise ValueError("L0 must be > 0")
        if lipschitz <= 0:
            raise ValueError("lipschitz must be > 0")
        if norm not in ("linf", "l2"):
            raise ValueError("norm must be 'linf' or 'l2'")
        super().__init__(dims, 2, input_range)
        self.L0 = L0
        self.lipschitz = lipschitz
        self.norm = norm
        self.floor = floor
        self.x0 = np.zeros(dims)
        d = np.ones(dims)
        # dual-normalize so <v, direction> <= ||v|| in the declared norm
        self.direction = d / np.abs(d).sum() if norm == "linf" else d / np.linalg.norm(d)

    def true_margin(self, x) -> float:
        """Ground-truth margin; harness-side oracle, not part of the query surface."""
        x = np.asarray(x, dtype=float)
        t = float(np.dot(x - self.x0, self.direction))
        return max(self.L0 - self.lipschitz * max(0.0, t), self.floor)

    def descent_direction(self) -> np.ndarray:
        return self.direction.copy()

    def _score(self, x: np.ndarray) -> np.ndarray:
        m = self.true_margin(x)
        return np.array([m / 2.0, -m / 2.0])


def make_robust_landscape(L0: float, lipschitz: float, dims: int,
                          norm: str = "linf") -> RobustLandscapeModel:
    return RobustLandscapeModel(L0, lipschitz, dims, norm=norm)


@dataclass
class DefendedModel:
    """Victim wrapped by optional input-noise pre-processing and a loss map."""

    inner: BlackBoxModel
    post: LossMap
    pre: RndParams | None = None

    @property
    def input_dims(self) -> int:
        return self.inner.input_dims

    @property
    def num_classes(self) -> int:
        return self.inner.num_classes

    @property
    def input_range(self) -> tuple[float, float]:
        return self.inner.input_range

    @property
    def query_count(self) -> int:
        return self.inner.query_count

    def query(self, x, rng: np.random.Generator | None = None) -> np.ndarray:
        if self.pre is not None:
            if rng is None:
                raise ValueError("pre-processing noise requires a random stream")
            x = rnd_preprocess(x, self.pre, rng, self.inner.input_range)
        s = self.inner.query(x)
        return apply_postprocess(s, self.post, rng)


def verify_global_robustness(model: BlackBoxModel, center, radius: float,
                             delta: float, epsilon: float, samples: int,
                             rng: np.random.Generator,
                             norm: str = "linf") -> bool:
    """Sampled falsification of (delta, epsilon)-bounded score variation.

    Returns False if any sampled pair within delta of each other (both inside
    the ball of the given radius around center) has a per-class score gap of
    at least epsilon.  A True result is evidence, not a proof.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    center = np.asarray(center, dtype=float)
    lo, hi = model.input_range
    dims = model.input_dims
    for _ in range(samples):
        if norm == "linf":
            x1 = center + rng.uniform(-radius, radius, size=dims)
            step = rng.uniform(-delta, delta, size=dims)
        else:
            u = rng.normal(size=dims)
            x1 = center + u / np.linalg.norm(u) * rng.uniform(0, radius)
            v = rng.normal(size=dims)
            step = v / np.linalg.norm(v) * rng.uniform(0, delta)
        x1 = np.clip(x1, lo, hi)
        x2 = np.clip(x1 + step, lo, hi)
        s1 = model.query(x1)
        s2 = model.query(x2)
        if np.abs(s1 - s2).max() >= epsilon:
            return False
    return True


def save_classifier(model: SyntheticClassifier, path) -> None:
    """Persist weights with a (dims, classes, seed) header for reproducible reload."""
    np.savez(
        path,
        header=np.array([model.input_dims, model.num_classes, model.seed,
                         model.hidden], dtype=np.int64),
        out_scale=np.array([model.out_scale]),
        w1=model.w1, b1=model.b1, w2=model.w2, b2=model.b2,
    )


def load_classifier(path) -> SyntheticClassifier:
    data = np.load(path)
    dims, classes, seed, hidden = (int(v) for v in data["header"])
    model = SyntheticClassifier(dims, classes, seed, hidden=hidden,
                                out_scale=float(data["out_scale"][0]))
    model.w1, model.b1 = data["w1"], data["b1"]
    model.w2, model.b2 = data["w2"], data["b2"]
    return model
