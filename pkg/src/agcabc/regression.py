"""Least-squares estimates of ``E[theta | s]`` and the regression adjustment.

Two function families are available: affine maps fitted in closed form and a
small sigmoid multilayer perceptron trained with Adam and early stopping.
Both work on standardized inputs and targets; predictions are mapped back to
the original parameter scale.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np

from .core import SeedLike, Standardizer, fit_standardizer, make_rng

__all__ = [
    "MlpSpec",
    "RegressionModel",
    "TrainingDivergedError",
    "fit_linear",
    "fit_mlp",
    "select_model",
    "fit_scale_model",
    "adjust",
    "adjust_heteroscedastic",
    "mlp_loss_and_grad",
    "train_val_split",
]

FORMAT_VERSION = 1


class TrainingDivergedError(FloatingPointError):
    """The training loss became non-finite."""


@dataclass(frozen=True)
class MlpSpec:
    hidden_sizes: tuple = (128, 16)
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 500
    patience: int = 20
    batch_size: int = 256
    full_batch_max: int = 1024
    train_frac: float = 0.8

    def __post_init__(self):
        if len(self.hidden_sizes) == 0:
            raise ValueError("need at least one hidden layer")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")


@dataclass
class RegressionModel:
    """A fitted regression function ``g`` mapping summaries to parameters.

    ``params`` holds ``[W, b]`` for the linear kind and
    ``[W1, b1, W2, b2, ...]`` for the MLP, all acting on standardized data.
    """

    kind: str
    params: list
    input_std: Standardizer
    output_std: Standardizer
    flags: dict = field(default_factory=dict)
    history: dict = field(default_factory=dict)

    def predict(self, summaries) -> np.ndarray:
        s = np.asarray(summaries, dtype=float)
        single = s.ndim == 1
        x = self.input_std.transform(np.atleast_2d(s))
        if self.kind == "linear":
            y = x @ self.params[0] + self.params[1]
        else:
            y = _mlp_forward(self.params, x)[-1]
        out = self.output_std.inverse(y)
        return out[0] if single else out

    __call__ = predict

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def affine(self) -> tuple[np.ndarray, np.ndarray]:
        """Raw-scale coefficients ``(W, b)`` with ``g(s) = s @ W + b`` (linear kind only)."""
        if self.kind != "linear":
            raise TypeError("only linear models have affine coefficients")
        W_std, b_std = self.params
        W = W_std / self.input_std.scale[:, None] * self.output_std.scale[None, :]
        b = self.output_std.mean + self.output_std.scale * (b_std - (self.input_std.mean / self.input_std.scale) @ W_std)
        return W, b

    def to_dict(self) -> dict:
        return {
            "format": "agcabc.regression",
            "version": FORMAT_VERSION,
            "kind": self.kind,
            "shapes": [list(p.shape) for p in self.params],
            "params": [p.ravel().tolist() for p in self.params],
            "input_std": self.input_std.to_dict(),
            "output_std": self.output_std.to_dict(),
            "flags": dict(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionModel":
        if d.get("format") != "agcabc.regression" or d.get("version") != FORMAT_VERSION:
            raise ValueError("not a version-1 regression model dump")
        params = [np.asarray(p, dtype=float).reshape(shape) for p, shape in zip(d["params"], d["shapes"])]
        return cls(
            d["kind"],
            params,
            Standardizer.from_dict(d["input_std"]),
            Standardizer.from_dict(d["output_std"]),
            dict(d.get("flags", {})),
        )


def _arrays(data):
    theta = np.atleast_2d(np.asarray(data.theta, dtype=float))
    s = np.asarray(data.summaries, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    return theta, s


def _quiet_standardizer(x) -> Standardizer:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return fit_standardizer(x)


# ---------------------------------------------------------------------------
# linear least squares

def _solve_linear(x, y):
    n, d = x.shape
    design = np.hstack([x, np.ones((n, 1))])
    beta, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    ridge = rank < d + 1
    if ridge:
        penalty = 1e-8 * np.eye(d + 1)
        penalty[-1, -1] = 0.0
        beta = np.linalg.solve(design.T @ design + penalty, design.T @ y)
    return beta[:-1], beta[-1], ridge


def fit_linear(data) -> RegressionModel:
    """Affine least-squares fit of ``theta`` on ``s``.

    Rank-deficient designs (fewer distinct rows than ``D + 1``, constant
    summaries, collinear columns) fall back to a ridge penalty of ``1e-8`` and
    set ``flags["ridge"]``.
    """
    theta, s = _arrays(data)
    in_std, out_std = _quiet_standardizer(s), _quiet_standardizer(theta)
    W, b, ridge = _solve_linear(in_std.transform(s), out_std.transform(theta))
    return RegressionModel("linear", [W, b], in_std, out_std, {"ridge": bool(ridge)})


# ---------------------------------------------------------------------------
# multilayer perceptron

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _mlp_init(sizes, rng):
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return params


def _mlp_forward(params, x):
    acts = [x]
    n_layers = len(params) // 2
    for i in range(n_layers):
        z = acts[-1] @ params[2 * i] + params[2 * i + 1]
        acts.append(z if i == n_layers - 1 else _sigmoid(z))
    return acts


def mlp_loss_and_grad(params, x, y):
    """Mean squared error ``(1/n) sum ||y - g(x)||^2`` and its parameter gradient."""
    acts = _mlp_forward(params, x)
    n = x.shape[0]
    resid = acts[-1] - y
    loss = float(np.sum(resid**2) / n)
    grads = [None] * len(params)
    delta = 2.0 * resid / n
    for i in range(len(params) // 2 - 1, -1, -1):
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            a = acts[i]
            delta = (delta @ params[2 * i].T) * a * (1.0 - a)
    return loss, grads


def _mse(params, x, y):
    return float(np.sum((_mlp_forward(params, x)[-1] - y) ** 2) / x.shape[0])


def train_val_split(n: int, train_frac: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    n_train = min(n - 1, max(1, int(round(train_frac * n))))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def _train_mlp(x_tr, y_tr, x_va, y_va, spec: MlpSpec, rng):
    sizes = [x_tr.shape[1], *spec.hidden_sizes, y_tr.shape[1]]
    params = _mlp_init(sizes, rng)
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    n = x_tr.shape[0]
    batch = n if n <= spec.full_batch_max else spec.batch_size
    step = 0
    best_val = _mse(params, x_va, y_va)
    best = [p.copy() for p in params]
    history = {"train": [_mse(params, x_tr, y_tr)], "val": [best_val], "best_epoch": 0, "best_train": []}
    history["best_train"].append(history["train"][0])
    wait = 0
    for epoch in range(1, spec.max_epochs + 1):
        order = rng.permutation(n) if batch < n else np.arange(n)
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            loss, grads = mlp_loss_and_grad(params, x_tr[idx], y_tr[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite training loss at epoch {epoch}, step {step}")
            step += 1
            c1 = 1.0 - spec.beta1**step
            c2 = 1.0 - spec.beta2**step
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= spec.beta1
                mi += (1.0 - spec.beta1) * g
                vi *= spec.beta2
                vi += (1.0 - spec.beta2) * g * g
                p -= spec.learning_rate * (mi / c1) / (np.sqrt(vi / c2) + spec.adam_eps)
        train_loss = _mse(params, x_tr, y_tr)
        val_loss = _mse(params, x_va, y_va)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingDivergedError(f"non-finite loss after epoch {epoch}")
        history["train"].append(train_loss)
        history["val"].append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best = [p.copy() for p in params]
            history["best_epoch"] = epoch
            history["best_train"].append(train_loss)
            wait = 0
        else:
            wait += 1
            if wait >= spec.patience:
                break
    history["epochs"] = epoch
    return best, history


def fit_mlp(data, spec: MlpSpec = MlpSpec(), seed: SeedLike = 0, split=None) -> RegressionModel:
    """Train the MLP on an 80/20 split with early stopping on the validation loss.

    ``split`` optionally fixes ``(train_idx, val_idx)``; otherwise it is drawn
    from ``seed``. The returned weights are those of the best validation
    epoch.
    """
    theta, s = _arrays(data)
    n = theta.shape[0]
    if n < 10:
        raise ValueError("need at least 10 samples to train the network")
    rng = make_rng(seed)
    tr, va = split if split is not None else train_val_split(n, spec.train_frac, rng)
    in_std, out_std = _quiet_standardizer(s[tr]), _quiet_standardizer(theta[tr])
    x, y = in_std.transform(s), out_std.transform(theta)
    params, history = _train_mlp(x[tr], y[tr], x[va], y[va], spec, rng)
    return RegressionModel("mlp", params, in_std, out_std, {}, history)


def _val_error(model: RegressionModel, theta, s, scale):
    resid = (theta - model.predict(s)) / scale
    return float(np.mean(np.sum(resid**2, axis=1)))


def select_model(data, spec: MlpSpec = MlpSpec(), seed: SeedLike = 0) -> RegressionModel:
    """Pick linear or MLP regression by validation error on a shared 80/20 split.

    Ties go to the linear model, which is then refitted on all rows.
    """
    theta, s = _arrays(data)
    n = theta.shape[0]
    if n < 10:
        raise ValueError("need at least 10 samples for model selection")
    rng = make_rng(seed)
    tr, va = train_val_split(n, spec.train_frac, rng)

    scale = _quiet_standardizer(theta[tr]).scale
    linear = fit_linear(SimpleNamespace(theta=theta[tr], summaries=s[tr]))
    mlp = fit_mlp(data, spec, rng.integers(2**63), split=(tr, va))
    errors = {
        "linear": _val_error(linear, theta[va], s[va], scale),
        "mlp": _val_error(mlp, theta[va], s[va], scale),
    }
    if errors["linear"] <= errors["mlp"]:
        chosen = fit_linear(data)
    else:
        chosen = mlp
    chosen.flags["validation_mse"] = errors
    return chosen


# ---------------------------------------------------------------------------
# adjustment

def adjust(model: RegressionModel, data, s_obs) -> tuple[np.ndarray, np.ndarray]:
    """Move samples to ``s_obs``: ``theta' = g(s_obs) + theta - g(s)``.

    Returns ``(adjusted, residuals)``.
    """
    theta, s = _arrays(data)
    residuals = theta - model.predict(s)
    return model.predict(np.asarray(s_obs, dtype=float)) + residuals, residuals


def fit_scale_model(mean_model: RegressionModel, data, spec: MlpSpec = MlpSpec(), seed: SeedLike = 0) -> RegressionModel:
    """MLP regressing ``log|theta - g(s)|`` on ``s``, one output per parameter."""
    theta, s = _arrays(data)
    resid = theta - mean_model.predict(s)

    target = SimpleNamespace(theta=np.log(np.maximum(np.abs(resid), 1e-12)), summaries=s)
    return fit_mlp(target, spec, seed)


def adjust_heteroscedastic(
    mean_model: RegressionModel, scale_model: RegressionModel, data, s_obs
) -> tuple[np.ndarray, dict]:
    """Location-scale adjustment ``g(s_obs) + (theta - g(s)) * sd(s_obs) / sd(s)``.

    ``sd = exp(scale_model)``. Values of ``sd(s)`` below ``1e-12`` are clamped
    and counted in the returned flags.
    """
    theta, s = _arrays(data)
    s_obs = np.asarray(s_obs, dtype=float)
    sd = np.exp(scale_model.predict(s))
    sd_obs = np.exp(scale_model.predict(s_obs))
    clamped = sd < 1e-12
    sd = np.maximum(sd, 1e-12)
    adjusted = mean_model.predict(s_obs) + (theta - mean_model.predict(s)) * (sd_obs / sd)
    return adjusted, {"clamped": int(clamped.sum())}
