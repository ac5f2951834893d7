"""Expected-value models per event and threshold calibration.

Dependent events get a one-hidden-layer regressor on their Markov blanket;
independent events get their training mean.  Thresholds are the largest
absolute deviation seen on clean validation data, optionally scaled.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)


class ModelError(Exception):
    pass


class TrainingFailed(ModelError):
    """Raised when a regressor cannot be trained and the event should fall back to its mean."""


@dataclass(frozen=True)
class Hyperparameters:
    hidden: int = 16
    epochs: int = 1500
    learning_rate: float = 1e-2
    optimizer: str = "adam"
    momentum: float = 0.9
    # fewer than rows_per_input * |MB| training rows -> mean model
    rows_per_input: int = 10

    def __post_init__(self):
        if self.hidden < 1 or self.epochs < 0 or self.learning_rate <= 0:
            raise ValueError("hidden >= 1, epochs >= 0 and learning_rate > 0 are required")
        if self.optimizer not in ("adam", "momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def event_seed(global_seed: int, event_id: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([global_seed % 2**32, event_id % 2**32])


# -- network maths -----------------------------------------------------------

def init_params(n_inputs: int, hidden: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    return {
        "W1": rng.normal(0.0, 1.0 / math.sqrt(n_inputs), size=(n_inputs, hidden)),
        "b1": np.zeros(hidden),
        "W2": rng.normal(0.0, 1.0 / math.sqrt(hidden), size=hidden),
        "b2": np.zeros(1),
    }


def forward(params: Mapping[str, np.ndarray], Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # einsum keeps each row's arithmetic independent of batch size (BLAS blocking does not)
    hidden = np.tanh(np.einsum("ik,kh->ih", Z, params["W1"]) + params["b1"])
    return np.einsum("ih,h->i", hidden, params["W2"]) + params["b2"][0], hidden


def loss_and_grad(params: Mapping[str, np.ndarray], Z: np.ndarray, y: np.ndarray) -> tuple[float, dict]:
    """Mean squared error and its gradient with respect to every parameter."""
    out, hidden = forward(params, Z)
    err = out - y
    loss = float(np.mean(err**2))
    d_out = 2.0 * err / len(y)
    d_hidden = np.outer(d_out, params["W2"]) * (1.0 - hidden**2)
    grads = {
        "W1": Z.T @ d_hidden,
        "b1": d_hidden.sum(axis=0),
        "W2": hidden.T @ d_out,
        "b2": np.array([d_out.sum()]),
    }
    return loss, grads


def _optimize(params: dict, Z: np.ndarray, y: np.ndarray, hp: Hyperparameters, lr: float) -> float:
    state = {k: (np.zeros_like(v), np.zeros_like(v)) for k, v in params.items()}
    b1, b2, eps = 0.9, 0.999, 1e-8
    for t in range(1, hp.epochs + 1):
        loss, grads = loss_and_grad(params, Z, y)
        if not math.isfinite(loss):
            return loss
        for k, g in grads.items():
            m, v = state[k]
            if hp.optimizer == "adam":
                m *= b1
                m += (1 - b1) * g
                v *= b2
                v += (1 - b2) * g * g
                params[k] -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
            else:
                m *= hp.momentum
                m -= lr * g
                params[k] += m
    return float(np.mean((forward(params, Z)[0] - y) ** 2))


# -- models ------------------------------------------------------------------

@dataclass
class MlpRegressor:
    inputs: tuple[int, ...]
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_scale: float
    params: dict[str, np.ndarray]
    seed: int
    epochs: int
    dropped_inputs: tuple[int, ...] = ()
    activation: str = "tanh"

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        """Predictions in count units for rows of the (undropped) input columns."""
        Z = (np.asarray(inputs, dtype=float) - self.x_mean) / self.x_std
        out, _ = forward(self.params, Z)
        return self.y_mean + self.y_scale * out

    def to_dict(self) -> dict:
        return {
            "inputs": list(self.inputs),
            "dropped_inputs": list(self.dropped_inputs),
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "y_mean": self.y_mean,
            "y_scale": self.y_scale,
            "params": {k: v.tolist() for k, v in sorted(self.params.items())},
            "seed": self.seed,
            "epochs": self.epochs,
            "activation": self.activation,
            "hidden": int(self.params["W1"].shape[1]),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpRegressor":
        k = len(d["inputs"])
        params = {key: np.asarray(val, dtype=float) for key, val in d["params"].items()}
        params["W1"] = params["W1"].reshape(k, d["hidden"])
        return cls(
            tuple(d["inputs"]),
            np.asarray(d["x_mean"], dtype=float),
            np.asarray(d["x_std"], dtype=float),
            float(d["y_mean"]),
            float(d["y_scale"]),
            params,
            d["seed"],
            d["epochs"],
            tuple(d["dropped_inputs"]),
            d["activation"],
        )


@dataclass
class MeanModel:
    event_id: int
    mean: float
    # why a dependent event ended up here, if it did
    fallback: Optional[str] = None

    kind = "proximity"

    def predict_rows(self, X: np.ndarray, event_ids: Sequence[int]) -> np.ndarray:
        return np.full(np.asarray(X).shape[0], self.mean, dtype=float)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "event_id": self.event_id, "mean": self.mean, "fallback": self.fallback}


@dataclass
class DependencyModel:
    event_id: int
    regressor: MlpRegressor

    kind = "dependency"

    def predict_rows(self, X: np.ndarray, event_ids: Sequence[int]) -> np.ndarray:
        col = {e: j for j, e in enumerate(event_ids)}
        missing = [e for e in self.regressor.inputs if e not in col]
        if missing:
            raise ModelError(f"event {self.event_id}: input columns {missing} missing from data")
        idx = [col[e] for e in self.regressor.inputs]
        return self.regressor.predict(np.asarray(X)[:, idx])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "event_id": self.event_id, "regressor": self.regressor.to_dict()}


PatternModel = Union[MeanModel, DependencyModel]


def model_from_dict(d: dict) -> PatternModel:
    if d["kind"] == "proximity":
        return MeanModel(d["event_id"], float(d["mean"]), d.get("fallback"))
    if d["kind"] == "dependency":
        return DependencyModel(d["event_id"], MlpRegressor.from_dict(d["regressor"]))
    raise ModelError(f"unknown model kind {d['kind']!r}")


def train_mean(column: np.ndarray, event_id: int = 0) -> MeanModel:
    column = np.asarray(column, dtype=float)
    if column.size == 0:
        raise ModelError("cannot fit a mean on an empty column")
    return MeanModel(event_id, float(column.mean()))


def train_mlp(
    inputs: np.ndarray,
    target: np.ndarray,
    input_ids: Sequence[int],
    hp: Hyperparameters = Hyperparameters(),
    seed: int = 0,
) -> MlpRegressor:
    """Fit a regressor from input columns (one per input id) to the target column.

    Inputs are z-scored with training statistics; the target is rescaled
    internally but predictions come back in count units.
    """
    inputs = np.asarray(inputs, dtype=float)
    target = np.asarray(target, dtype=float)
    n = len(target)
    if len(input_ids) == 0:
        raise TrainingFailed("empty blanket")
    if n < hp.rows_per_input * len(input_ids):
        raise TrainingFailed(f"{n} rows < {hp.rows_per_input} x {len(input_ids)} inputs")
    std = inputs.std(axis=0)
    keep = std > 0
    if not keep.any():
        raise TrainingFailed("all blanket inputs are constant")
    dropped = tuple(e for e, k in zip(input_ids, keep) if not k)
    kept_ids = tuple(e for e, k in zip(input_ids, keep) if k)
    x = inputs[:, keep]
    x_mean, x_std = x.mean(axis=0), x.std(axis=0)
    y_mean = float(target.mean())
    y_scale = float(target.std()) or 1.0
    Z = (x - x_mean) / x_std
    y = (target - y_mean) / y_scale

    lr = hp.learning_rate
    for attempt in range(2):
        rng = np.random.default_rng(seed)
        params = init_params(Z.shape[1], hp.hidden, rng)
        # divergence is detected from the loss, so overflow along the way is expected
        with np.errstate(over="ignore", invalid="ignore"):
            loss = _optimize(params, Z, y, hp, lr)
        if math.isfinite(loss):
            return MlpRegressor(kept_ids, x_mean, x_std, y_mean, y_scale, params, seed, hp.epochs, dropped)
        lr /= 2
    raise TrainingFailed("loss diverged twice")


def train_patterns(
    data: np.ndarray,
    event_ids: Sequence[int],
    blankets: Mapping[int, Sequence[int]],
    hp: Hyperparameters = Hyperparameters(),
    seed: int = 0,
    jobs: int = 1,
) -> dict[int, PatternModel]:
    """One model per column: a regressor where the blanket is non-empty, else the mean."""
    data = np.asarray(data, dtype=float)
    if data.shape[0] == 0:
        raise ModelError("training set is empty")
    tasks = [(data, list(event_ids), e, tuple(blankets.get(e, ())), hp, seed) for e in event_ids]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            models = list(pool.map(_train_one, tasks))
    else:
        models = [_train_one(t) for t in tasks]
    return {m.event_id: m for m in models}


def _train_one(task) -> PatternModel:
    data, event_ids, event_id, mb, hp, seed = task
    col = {e: j for j, e in enumerate(event_ids)}
    target = data[:, col[event_id]]
    if not mb:
        return train_mean(target, event_id)
    s = int(event_seed(seed, event_id).generate_state(1)[0])
    try:
        reg = train_mlp(data[:, [col[e] for e in mb]], target, mb, hp, s)
    except TrainingFailed as exc:
        logger.warning("event %s: regressor fallback to mean (%s)", event_id, exc)
        model = train_mean(target, event_id)
        model.fallback = str(exc)
        return model
    return DependencyModel(event_id, reg)


def predict_expected(model: PatternModel, row: Mapping[int, float] | np.ndarray, event_ids=None) -> float:
    """Expected count of the model's event for one sequence.

    ``row`` is either a mapping event_id -> count or a vector aligned with ``event_ids``.
    """
    if isinstance(row, Mapping):
        ids = sorted(row)
        vec = np.array([[row[e] for e in ids]], dtype=float)
    else:
        if event_ids is None:
            raise ModelError("vector rows need event_ids")
        ids, vec = list(event_ids), np.asarray(row, dtype=float).reshape(1, -1)
    return float(model.predict_rows(vec, ids)[0])


def expected_matrix(data: np.ndarray, event_ids: Sequence[int], models: Mapping[int, PatternModel]) -> np.ndarray:
    data = np.asarray(data, dtype=float)
    missing = [e for e in event_ids if e not in models]
    if missing:
        raise ModelError(f"no model for events {missing}")
    out = np.empty_like(data)
    for j, e in enumerate(event_ids):
        try:
            out[:, j] = models[e].predict_rows(data, event_ids)
        except ModelError as exc:
            raise ModelError(f"predicting event {e}: {exc}") from exc
    return out


def compute_deviation_matrix(
    data: np.ndarray, event_ids: Sequence[int], models: Mapping[int, PatternModel]
) -> np.ndarray:
    """|observed - expected| for every sequence and event."""
    return np.abs(np.asarray(data, dtype=float) - expected_matrix(data, event_ids, models))


@dataclass
class ThresholdVector:
    event_ids: list[int]
    values: np.ndarray
    margin: float = 1.0

    def __getitem__(self, event_id: int) -> float:
        return float(self.values[self.event_ids.index(event_id)])


def calibrate_thresholds(D: np.ndarray, event_ids: Sequence[int], margin: float = 1.0) -> ThresholdVector:
    D = np.asarray(D, dtype=float)
    if margin < 1.0:
        raise ValueError("margin must be >= 1")
    if D.ndim != 2 or D.shape[0] == 0:
        raise ModelError("validation set empty")
    return ThresholdVector(list(event_ids), margin * D.max(axis=0), margin)
