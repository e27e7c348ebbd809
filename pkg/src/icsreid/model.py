"""Two-head embedding model with manual gradients, plus its optimizer.

The model maps raw features through two tanh layers to a hidden feature
g(x), then through a linear head and L2 normalization to a unit-norm
embedding f(x).  Losses feed gradients back through both heads; the
normalization Jacobian (I - f f^T) / ||e|| is applied exactly, which keeps
central finite differences a valid oracle for every downstream loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CHECKPOINT_MAGIC = "icsreid-model"
CHECKPOINT_VERSION = 1
PARAM_FORMAT = "%.17g"  # round-trips float64 exactly


@dataclass
class ForwardTape:
    """Intermediates retained by forward for the matching backward call."""

    X: np.ndarray
    H1: np.ndarray
    G: np.ndarray
    F: np.ndarray
    prenorm: np.ndarray  # ||e|| per row, e = G @ W3 + b3
    version: int


class EmbeddingModel:
    """Feedforward map D_in -> H -> H (hidden head) -> d, L2 normalized."""

    PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")

    def __init__(self, in_dim: int, hidden_dim: int, embed_dim: int,
                 rng: np.random.Generator | None = None):
        if min(in_dim, hidden_dim, embed_dim) <= 0:
            raise ValueError("model dimensions must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.embed_dim = embed_dim
        self.params: dict[str, np.ndarray] = {
            "W1": rng.standard_normal((in_dim, hidden_dim)) / np.sqrt(in_dim),
            "b1": np.zeros(hidden_dim),
            "W2": rng.standard_normal((hidden_dim, hidden_dim)) / np.sqrt(hidden_dim),
            "b2": np.zeros(hidden_dim),
            "W3": rng.standard_normal((hidden_dim, embed_dim)) / np.sqrt(hidden_dim),
            "b3": np.zeros(embed_dim),
        }
        self.version = 0

    def bump_version(self) -> None:
        """Mark in-place parameter mutation; outstanding tapes become stale."""
        self.version += 1

    def copy(self) -> "EmbeddingModel":
        clone = EmbeddingModel.__new__(EmbeddingModel)
        clone.in_dim = self.in_dim
        clone.hidden_dim = self.hidden_dim
        clone.embed_dim = self.embed_dim
        clone.params = {k: v.copy() for k, v in self.params.items()}
        clone.version = 0
        return clone

    def forward(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray, ForwardTape]:
        """Return (G, F, tape) for a batch of rows.

        G holds the hidden features, F the unit-norm embeddings.  The tape
        is consumed by :meth:`backward` and becomes stale as soon as the
        parameters change.
        """
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.in_dim:
            raise ValueError(f"input dim {X.shape[1]} does not match model in_dim {self.in_dim}")
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite values in model input")
        p = self.params
        H1 = np.tanh(X @ p["W1"] + p["b1"])
        G = np.tanh(H1 @ p["W2"] + p["b2"])
        E = G @ p["W3"] + p["b3"]
        prenorm = np.linalg.norm(E, axis=1)
        if np.any(prenorm == 0.0):
            raise ValueError("zero pre-normalization embedding; cannot normalize")
        F = E / prenorm[:, None]
        return G, F, ForwardTape(X=X, H1=H1, G=G, F=F, prenorm=prenorm, version=self.version)

    def backward(self, tape: ForwardTape, dG: np.ndarray, dF: np.ndarray) -> dict[str, np.ndarray]:
        """Chain upstream feature gradients into parameter gradients."""
        if tape.version != self.version:
            raise RuntimeError("stale tape: parameters changed since the forward pass")
        p = self.params
        dG = np.zeros_like(tape.G) if dG is None else np.asarray(dG, dtype=np.float64)
        dF = np.zeros_like(tape.F) if dF is None else np.asarray(dF, dtype=np.float64)
        if dG.shape != tape.G.shape or dF.shape != tape.F.shape:
            raise ValueError("upstream gradient shapes do not match the tape")

        # normalization Jacobian: dE = (dF - f (f . dF)) / ||e||
        radial = np.sum(dF * tape.F, axis=1, keepdims=True)
        dE = (dF - tape.F * radial) / tape.prenorm[:, None]

        grads = {}
        grads["W3"] = tape.G.T @ dE
        grads["b3"] = dE.sum(axis=0)
        dG_total = dG + dE @ p["W3"].T

        dA2 = dG_total * (1.0 - tape.G**2)
        grads["W2"] = tape.H1.T @ dA2
        grads["b2"] = dA2.sum(axis=0)
        dH1 = dA2 @ p["W2"].T

        dA1 = dH1 * (1.0 - tape.H1**2)
        grads["W1"] = tape.X.T @ dA1
        grads["b1"] = dA1.sum(axis=0)
        return grads

    def save(self, path) -> None:
        dump_params(path, self.params, header=(self.in_dim, self.hidden_dim, self.embed_dim))

    @classmethod
    def load(cls, path) -> "EmbeddingModel":
        dims, params = load_params(path)
        in_dim, hidden_dim, embed_dim = dims
        model = cls(in_dim, hidden_dim, embed_dim)
        expected = {name: model.params[name].shape for name in cls.PARAM_NAMES}
        for name, shape in expected.items():
            if name not in params:
                raise ValueError(f"checkpoint missing parameter {name}")
            if params[name].shape != shape:
                raise ValueError(
                    f"checkpoint parameter {name} has shape {params[name].shape}, expected {shape}"
                )
        model.params = params
        return model


def dump_params(path, params: dict[str, np.ndarray], header: tuple[int, ...]) -> None:
    """Decimal-text parameter dump with a version and shape header."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{CHECKPOINT_MAGIC}\t{CHECKPOINT_VERSION}\t" + "\t".join(map(str, header)) + "\n")
        for name in sorted(params):
            shape = params[name].shape
            arr = np.atleast_2d(params[name])
            fh.write(f"param\t{name}\t" + "\t".join(map(str, shape)) + "\n")
            for row in arr:
                fh.write("\t".join(PARAM_FORMAT % v for v in row) + "\n")


def load_params(path) -> tuple[tuple[int, ...], dict[str, np.ndarray]]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty checkpoint")
    head = lines[0].split("\t")
    if head[0] != CHECKPOINT_MAGIC or int(head[1]) != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    dims = tuple(int(v) for v in head[2:])
    params: dict[str, np.ndarray] = {}
    i = 1
    while i < len(lines):
        tag = lines[i].split("\t")
        if tag[0] != "param" or len(tag) not in (3, 4):
            raise ValueError(f"{path}: line {i + 1}: expected a param header")
        name = tag[1]
        shape = tuple(int(v) for v in tag[2:])
        rows = shape[0] if len(shape) == 2 else 1
        block = lines[i + 1:i + 1 + rows]
        if len(block) != rows:
            raise ValueError(f"{path}: parameter {name}: truncated value block")
        arr = np.array([[float(v) for v in line.split("\t")] for line in block])
        if arr.size != int(np.prod(shape)):
            raise ValueError(f"{path}: parameter {name}: shape mismatch")
        params[name] = arr.reshape(shape)
        i += 1 + rows
    return dims, params


@dataclass
class OptimizerConfig:
    learning_rate: float = 3.5e-4
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class AdamOptimizer:
    """Adaptive-moment estimation with decoupled weight decay."""

    def __init__(self, params: dict[str, np.ndarray], cfg: OptimizerConfig | None = None):
        self.cfg = cfg if cfg is not None else OptimizerConfig()
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr: float | None = None) -> None:
        """Update parameters in place.  Aborts on non-finite gradients."""
        for name, grad in grads.items():
            if not np.all(np.isfinite(grad)):
                bad = int(np.sum(~np.isfinite(grad)))
                raise FloatingPointError(
                    f"non-finite gradient for parameter {name} "
                    f"({bad}/{grad.size} entries) at step {self.t + 1}"
                )
        cfg = self.cfg
        lr = cfg.learning_rate if lr is None else lr
        self.t += 1
        bias1 = 1.0 - cfg.beta1**self.t
        bias2 = 1.0 - cfg.beta2**self.t
        for name, grad in grads.items():
            self.m[name] = cfg.beta1 * self.m[name] + (1.0 - cfg.beta1) * grad
            self.v[name] = cfg.beta2 * self.v[name] + (1.0 - cfg.beta2) * grad**2
            m_hat = self.m[name] / bias1
            v_hat = self.v[name] / bias2
            params[name] -= lr * (m_hat / (np.sqrt(v_hat) + cfg.eps) + cfg.weight_decay * params[name])


def lr_drop_epochs(total_epochs: int, reference_epochs: int,
                   base_drops: tuple[int, ...] = (40, 70)) -> tuple[int, ...]:
    """Scale the default decay boundaries proportionally to the epoch budget.

    At the reference budget the drops sit at their default epochs; shorter
    or longer budgets move them proportionally.  Drops falling outside the
    budget are omitted.
    """
    if total_epochs <= 0 or reference_epochs <= 0:
        return ()
    scaled = [int(round(d * total_epochs / reference_epochs)) for d in base_drops]
    return tuple(d for d in scaled if 0 < d < total_epochs)


def learning_rate_at(epoch: int, base_lr: float, drops: tuple[int, ...]) -> float:
    """Base rate divided by 10 at every configured epoch boundary passed."""
    passed = sum(1 for d in drops if epoch >= d)
    return base_lr * (0.1**passed)
