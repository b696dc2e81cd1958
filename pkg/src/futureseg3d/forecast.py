"""Future ego-motion forecasting from the prior trajectory.

Two predictors: a copy model that repeats the last observed motion, and a
stacked LSTM whose top hidden state is the 6D prediction directly (hidden
width equals the ego-motion width, so no output head is needed).

Cell equations, per layer and timestep (sigma = logistic):

    z = Wx @ x + Wh @ h_prev + b          z stacked as [i | f | g | o]
    i = sigma(z_i)   f = sigma(z_f)   g = tanh(z_g)   o = sigma(z_o)
    c = f * c_prev + i * g
    h = o * tanh(c)

Training is classical momentum SGD (acc = mu * acc + grad, w -= lr * acc)
on the mean batch l1 loss, with the learning rate decaying exponentially
between the configured endpoints. Gradients come from exact
backpropagation through time; everything is plain numpy in float64 and
bit-reproducible from the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .fileio import FormatError
from .geometry import EgoMotionVector

HIDDEN_SIZE = 6        # one unit per ego-motion component
DEFAULT_LAYERS = 3
DEFAULT_HISTORY = 4    # motions fed to the forecaster, oldest first

CHECKPOINT_MAGIC = b"FSEG3D-LSTM\n"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrajectoryHistory:
    """Ordered past ego-motions, oldest first."""

    motions: tuple[EgoMotionVector, ...]

    def __post_init__(self):
        motions = tuple(self.motions)
        if len(motions) == 0:
            raise ValueError("trajectory history must contain at least one motion")
        object.__setattr__(self, "motions", motions)

    def __len__(self) -> int:
        return len(self.motions)

    def as_matrix(self) -> np.ndarray:
        """(L, 6) array, oldest row first."""
        return np.stack([m.as_array() for m in self.motions])


@dataclass(frozen=True)
class TrainConfig:
    lr_start: float = 1e-4
    lr_end: float = 1e-6
    momentum: float = 0.9
    total_steps: int = 50_000
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.lr_end <= self.lr_start):
            raise ValueError(f"need 0 < lr_end <= lr_start, got {self.lr_start}..{self.lr_end}")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.total_steps < 1 or self.batch_size < 1:
            raise ValueError("total_steps and batch_size must be positive")


@dataclass
class LayerParams:
    """Weights of one cell; also reused as the matching gradient container.

    Gate rows are stacked [input, forget, candidate, output], HIDDEN_SIZE
    rows each.
    """

    w_x: np.ndarray  # (4H, input)
    w_h: np.ndarray  # (4H, H)
    bias: np.ndarray  # (4H,)

    def copy(self) -> "LayerParams":
        return LayerParams(self.w_x.copy(), self.w_h.copy(), self.bias.copy())

    @classmethod
    def zeros_like(cls, other: "LayerParams") -> "LayerParams":
        return cls(np.zeros_like(other.w_x), np.zeros_like(other.w_h),
                   np.zeros_like(other.bias))


@dataclass
class LstmModel:
    """Stacked LSTM with 6 units per layer."""

    layers: list[LayerParams]
    step: int = 0

    def __post_init__(self):
        if not self.layers:
            raise ValueError("model needs at least one layer")
        h = HIDDEN_SIZE
        for idx, layer in enumerate(self.layers):
            # input width equals the hidden width: motions are 6D and each
            # layer feeds the next its 6-unit hidden state
            if layer.w_x.shape != (4 * h, h) or layer.w_h.shape != (4 * h, h) \
                    or layer.bias.shape != (4 * h,):
                raise ValueError(f"layer {idx} has inconsistent shapes")
            if not all(np.all(np.isfinite(a)) for a in (layer.w_x, layer.w_h, layer.bias)):
                raise ValueError(f"layer {idx} has non-finite weights")

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def hidden_size(self) -> int:
        return HIDDEN_SIZE

    def copy(self) -> "LstmModel":
        return LstmModel([l.copy() for l in self.layers], self.step)

    @classmethod
    def initialize(cls, seed: int, num_layers: int = DEFAULT_LAYERS) -> "LstmModel":
        """Seeded init: weights uniform in [-0.1, 0.1], forget bias 1."""
        rng = np.random.default_rng(seed)
        return cls._initialize_from(rng, num_layers)

    @classmethod
    def _initialize_from(cls, rng: np.random.Generator, num_layers: int) -> "LstmModel":
        h = HIDDEN_SIZE
        layers = []
        for _ in range(num_layers):
            w_x = rng.uniform(-0.1, 0.1, size=(4 * h, h))
            w_h = rng.uniform(-0.1, 0.1, size=(4 * h, h))
            bias = np.zeros(4 * h)
            bias[h:2 * h] = 1.0
            layers.append(LayerParams(w_x, w_h, bias))
        return cls(layers)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form avoids exp overflow without branching
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _forward(model: LstmModel, x_seq: np.ndarray):
    """Run the stack over a (T, B, 6) batch; returns top h at the last step
    and the per-(layer, timestep) cache needed for backprop."""
    steps, batch, _ = x_seq.shape
    h_size = model.hidden_size
    h = [np.zeros((batch, h_size)) for _ in model.layers]
    c = [np.zeros((batch, h_size)) for _ in model.layers]
    cache = [[None] * steps for _ in model.layers]
    for t in range(steps):
        x = x_seq[t]
        for l, p in enumerate(model.layers):
            z = x @ p.w_x.T + h[l] @ p.w_h.T + p.bias
            gi = _sigmoid(z[:, :h_size])
            gf = _sigmoid(z[:, h_size:2 * h_size])
            gg = np.tanh(z[:, 2 * h_size:3 * h_size])
            go = _sigmoid(z[:, 3 * h_size:])
            c_new = gf * c[l] + gi * gg
            tanh_c = np.tanh(c_new)
            h_new = go * tanh_c
            cache[l][t] = (x, h[l], c[l], gi, gf, gg, go, tanh_c)
            h[l], c[l] = h_new, c_new
            x = h_new
    return h[-1], cache


def _backward(model: LstmModel, cache, d_out: np.ndarray) -> list[LayerParams]:
    """Exact BPTT given dLoss/d(top hidden at last step); returns summed
    gradients in LayerParams layout."""
    h_size = model.hidden_size
    steps = len(cache[0])
    grads = [LayerParams.zeros_like(p) for p in model.layers]
    dh_next = [np.zeros_like(d_out) for _ in model.layers]
    dc_next = [np.zeros_like(d_out) for _ in model.layers]
    for t in reversed(range(steps)):
        d_above = d_out if t == steps - 1 else np.zeros_like(d_out)
        for l in reversed(range(model.num_layers)):
            x, h_prev, c_prev, gi, gf, gg, go, tanh_c = cache[l][t]
            p, g = model.layers[l], grads[l]
            dh = dh_next[l] + d_above
            dc = dh * go * (1.0 - tanh_c ** 2) + dc_next[l]
            dz = np.empty((dh.shape[0], 4 * h_size))
            dz[:, :h_size] = dc * gg * gi * (1.0 - gi)
            dz[:, h_size:2 * h_size] = dc * c_prev * gf * (1.0 - gf)
            dz[:, 2 * h_size:3 * h_size] = dc * gi * (1.0 - gg ** 2)
            dz[:, 3 * h_size:] = dh * tanh_c * go * (1.0 - go)
            g.w_x += dz.T @ x
            g.w_h += dz.T @ h_prev
            g.bias += dz.sum(axis=0)
            dh_next[l] = dz @ p.w_h
            dc_next[l] = dc * gf
            d_above = dz @ p.w_x
    return grads


def copy_forecast(h: TrajectoryHistory) -> EgoMotionVector:
    """Repeat the most recent observed motion."""
    if len(h) == 0:
        raise ValueError("cannot forecast from an empty history")
    return h.motions[-1]


def lstm_forward(m: LstmModel, h: TrajectoryHistory) -> EgoMotionVector:
    """Feed the history through the stack from zero states; the top hidden
    state at the final timestep is the prediction."""
    x_seq = h.as_matrix()[:, None, :]
    out, _ = _forward(m, x_seq)
    return EgoMotionVector.from_array(out[0])


def lstm_loss(pred: EgoMotionVector, target: EgoMotionVector) -> float:
    """Sum of absolute component differences (l1)."""
    return float(np.abs(pred.as_array() - target.as_array()).sum())


def lstm_gradient(m: LstmModel, h: TrajectoryHistory,
                  target: EgoMotionVector) -> list[LayerParams]:
    """Exact gradient of lstm_loss(lstm_forward(m, h), target) w.r.t. every
    weight. The l1 subgradient at zero residual is taken as 0."""
    x_seq = h.as_matrix()[:, None, :]
    out, cache = _forward(m, x_seq)
    d_out = np.sign(out - target.as_array()[None, :])
    return _backward(m, cache, d_out)


@dataclass(frozen=True)
class TrainResult:
    model: LstmModel
    loss_curve: np.ndarray  # mean batch loss at every step


def learning_rate(cfg: TrainConfig, step: int) -> float:
    """Exponential decay, endpoint-exact: lr(0) = lr_start and
    lr(total_steps) = lr_end."""
    frac = step / cfg.total_steps
    return cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** frac


def lstm_train(dataset: list[tuple[TrajectoryHistory, EgoMotionVector]],
               cfg: TrainConfig, num_layers: int = DEFAULT_LAYERS) -> TrainResult:
    """Momentum SGD over random batches of (history, target) pairs.

    All histories must share one length so batches stack. Deterministic
    given cfg.seed (the seed drives both init and batch sampling).
    """
    if len(dataset) == 0:
        raise ValueError("training dataset must be non-empty")
    lengths = {len(h) for h, _ in dataset}
    if len(lengths) != 1:
        raise ValueError(f"histories must share one length, got {sorted(lengths)}")
    xs = np.stack([h.as_matrix() for h, _ in dataset])          # (N, L, 6)
    ys = np.stack([t.as_array() for _, t in dataset])           # (N, 6)

    rng = np.random.default_rng(cfg.seed)
    model = LstmModel._initialize_from(rng, num_layers)
    velocity = [LayerParams.zeros_like(p) for p in model.layers]
    losses = np.empty(cfg.total_steps)

    for step in range(cfg.total_steps):
        idx = rng.integers(0, len(dataset), size=cfg.batch_size)
        x_seq = xs[idx].transpose(1, 0, 2)                      # (L, B, 6)
        target = ys[idx]
        out, cache = _forward(model, x_seq)
        residual = out - target
        losses[step] = np.abs(residual).sum(axis=1).mean()
        grads = _backward(model, cache, np.sign(residual) / cfg.batch_size)
        lr = learning_rate(cfg, step)
        for p, v, g in zip(model.layers, velocity, grads):
            v.w_x = cfg.momentum * v.w_x + g.w_x
            v.w_h = cfg.momentum * v.w_h + g.w_h
            v.bias = cfg.momentum * v.bias + g.bias
            p.w_x -= lr * v.w_x
            p.w_h -= lr * v.w_h
            p.bias -= lr * v.bias

    model.step += cfg.total_steps
    return TrainResult(model, losses)


def forecast_rollout(model: LstmModel, history: TrajectoryHistory,
                     steps: int) -> list[EgoMotionVector]:
    """Predict several future motions by feeding each prediction back into a
    sliding window of the original history length."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    window = list(history.motions)
    out = []
    for _ in range(steps):
        pred = lstm_forward(model, TrajectoryHistory(tuple(window)))
        out.append(pred)
        window = window[1:] + [pred]
    return out


def save_checkpoint(model: LstmModel, path) -> None:
    """Write magic + one-line JSON header + little-endian float64 blocks
    (w_x, w_h, bias per layer, bottom layer first, row-major)."""
    header = {
        "format_version": CHECKPOINT_VERSION,
        "num_layers": model.num_layers,
        "hidden_size": model.hidden_size,
        "input_size": HIDDEN_SIZE,
        "step": model.step,
    }
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode("ascii"))
        f.write(b"\n")
        for layer in model.layers:
            for block in (layer.w_x, layer.w_h, layer.bias):
                f.write(np.ascontiguousarray(block, dtype="<f8").tobytes())


def load_checkpoint(path) -> LstmModel:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise FormatError(f"{path}: bad checkpoint magic")
    rest = data[len(CHECKPOINT_MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0:
        raise FormatError(f"{path}: missing checkpoint header line")
    try:
        header = json.loads(rest[:nl].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unparsable checkpoint header: {exc}") from exc
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
    if header.get("hidden_size") != HIDDEN_SIZE or header.get("input_size") != HIDDEN_SIZE:
        raise FormatError(f"{path}: checkpoint sizes do not match this model family")
    num_layers = header.get("num_layers")
    if not isinstance(num_layers, int) or num_layers < 1:
        raise FormatError(f"{path}: bad layer count {num_layers!r}")

    body = rest[nl + 1:]
    h = HIDDEN_SIZE
    per_layer = (4 * h * h) * 2 + 4 * h
    expected = num_layers * per_layer * 8
    if len(body) != expected:
        raise FormatError(
            f"{path}: weight payload is {len(body)} bytes, expected {expected}")
    flat = np.frombuffer(body, dtype="<f8")
    layers = []
    offset = 0
    for _ in range(num_layers):
        w_x = flat[offset:offset + 4 * h * h].reshape(4 * h, h).astype(np.float64)
        offset += 4 * h * h
        w_h = flat[offset:offset + 4 * h * h].reshape(4 * h, h).astype(np.float64)
        offset += 4 * h * h
        bias = flat[offset:offset + 4 * h].astype(np.float64)
        offset += 4 * h
        layers.append(LayerParams(w_x, w_h, bias))
    return LstmModel(layers, step=int(header.get("step", 0)))
