"""Optimizers, the gradient-accumulation training loop, and checkpoints.

Crowd sizes vary between samples, so a "batch" is a run of per-sample
forward/backward passes whose gradients accumulate before one optimizer
step; the step uses the mean-per-point gradient so the learning rates
quoted for each mode behave the same regardless of crowd size.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import CheckpointError, NumericError, TrainingDiverged
from .graph import SIGN_MODES, build_graph_sequence
from .losses import cde_loss, nll_loss
from .model import (
    ModelParams,
    init_params,
    predict_deterministic,
    predict_probabilistic,
)

CHECKPOINT_MAGIC = b"CGCNCKPT"
CHECKPOINT_VERSION = 1

ADAM_BETAS = (0.9, 0.999)
ADAM_EPSILON = 1e-8

# Per-mode optimizer defaults: the probabilistic objective trains with SGD,
# the deterministic one with Adam.
MODE_DEFAULTS = {
    "probabilistic": ("sgd", 0.01),
    "deterministic": ("adam", 0.0015),
}


@dataclass
class TrainConfig:
    mode: str = "probabilistic"
    epochs: int = 150
    batch_size: int = 128
    optimizer: str | None = None       # resolved from mode when None
    learning_rate: float | None = None
    alpha: float = 0.5
    seed: int = 0
    t_obs: int = 8
    t_pred: int = 12
    f_hidden: int = 42
    k_residual: int = 4
    sign_mode: str = "negated"
    lr_decay: float = 1.0  # multiplicative per epoch; 1.0 disables the schedule

    def __post_init__(self):
        if self.mode not in MODE_DEFAULTS:
            raise ValueError(f"mode must be one of {sorted(MODE_DEFAULTS)}, got {self.mode!r}")
        if self.sign_mode not in SIGN_MODES:
            raise ValueError(f"sign_mode must be one of {SIGN_MODES}, got {self.sign_mode!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.t_obs < 2 or self.t_pred < 1:
            raise ValueError("epochs must be >= 0 and batch_size/t_obs/t_pred positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError(f"lr_decay must lie in (0, 1], got {self.lr_decay}")
        default_kind, default_lr = MODE_DEFAULTS[self.mode]
        if self.optimizer is None:
            self.optimizer = default_kind
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.learning_rate is None:
            self.learning_rate = default_lr


@dataclass
class OptimizerState:
    kind: str
    learning_rate: float
    beta1: float = ADAM_BETAS[0]
    beta2: float = ADAM_BETAS[1]
    epsilon: float = ADAM_EPSILON
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def copy(self):
        return OptimizerState(
            kind=self.kind, learning_rate=self.learning_rate, beta1=self.beta1,
            beta2=self.beta2, epsilon=self.epsilon, step_count=self.step_count,
            m={k: a.copy() for k, a in self.m.items()},
            v={k: a.copy() for k, a in self.v.items()},
        )


def make_optimizer(kind, learning_rate, params):
    state = OptimizerState(kind=kind, learning_rate=learning_rate)
    if kind == "adam":
        for name, t in params.named_tensors():
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
    elif kind != "sgd":
        raise ValueError(f"unknown optimizer kind {kind!r}")
    return state


def optimizer_step(params, grads, state):
    """One in-place update. All gradients are checked before any parameter moves."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter '{name}'; step aborted")
    state.step_count += 1
    if state.kind == "sgd":
        for name, t in params.named_tensors():
            if name in grads:
                t.data = t.data - state.learning_rate * grads[name]
        return
    t_step = state.step_count
    bias1 = 1.0 - state.beta1 ** t_step
    bias2 = 1.0 - state.beta2 ** t_step
    for name, t in params.named_tensors():
        if name not in grads:
            continue
        g = grads[name]
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[name] / bias1
        v_hat = state.v[name] / bias2
        t.data = t.data - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


@dataclass
class TrainResult:
    params: ModelParams
    optimizer_state: OptimizerState
    log: list
    rng_state: dict
    epoch: int


def sample_loss(sample, graph, params, config):
    """Mode-appropriate loss for one sequence sample."""
    if config.mode == "probabilistic":
        field_pred = predict_probabilistic(graph, params)
        return nll_loss(field_pred, sample.rel_fut)
    pred = predict_deterministic(graph, params)
    return cde_loss(pred, sample.abs_fut, sample.abs_obs[:, -1, :], alpha=config.alpha)


def train(train_samples, config, val_samples=None, params=None,
          optimizer_state=None, rng_state=None, start_epoch=0, progress=None):
    """Run the training loop; deterministic for a fixed seed on one thread.

    Resuming: pass the params/optimizer_state/rng_state/epoch restored from
    a checkpoint (with the same ordered `train_samples`) and the run matches
    an uninterrupted one bitwise.
    """
    if not train_samples:
        raise ValueError("train() needs a non-empty training set")
    rng = np.random.default_rng(config.seed)
    if rng_state is not None:
        rng.bit_generator.state = rng_state
    if params is None:
        params = init_params(mode=config.mode, t_obs=config.t_obs, t_pred=config.t_pred,
                             f_hidden=config.f_hidden, k_residual=config.k_residual, rng=rng)
    if optimizer_state is None:
        optimizer_state = make_optimizer(config.optimizer, config.learning_rate, params)

    graphs = [build_graph_sequence(s, config.sign_mode) for s in train_samples]
    val_graphs = None
    if val_samples:
        val_graphs = [build_graph_sequence(s, config.sign_mode) for s in val_samples]

    log = []
    last_good = (params.copy(), optimizer_state.copy(), start_epoch)
    n = len(train_samples)
    for epoch in range(start_epoch, config.epochs):
        # recomputed from the epoch index so resumed runs stay equivalent
        optimizer_state.learning_rate = config.learning_rate * config.lr_decay ** epoch
        order = rng.permutation(n)
        epoch_loss_sum = 0.0
        epoch_points = 0
        batch_points = 0
        in_batch = 0
        params.zero_grads()
        try:
            for idx in order:
                loss = sample_loss(train_samples[idx], graphs[idx], params, config)
                if not np.isfinite(loss.value):
                    raise NumericError(f"non-finite loss at epoch {epoch}")
                loss.total.backward()
                epoch_loss_sum += loss.value
                epoch_points += loss.n_points
                batch_points += loss.n_points
                in_batch += 1
                if in_batch == config.batch_size:
                    _flush_batch(params, optimizer_state, batch_points)
                    batch_points = 0
                    in_batch = 0
            if in_batch:
                _flush_batch(params, optimizer_state, batch_points)
        except NumericError as exc:
            good_params, good_state, good_epoch = last_good
            raise TrainingDiverged(
                f"training diverged at epoch {epoch}: {exc}",
                params=good_params, optimizer_state=good_state, log=log, epoch=good_epoch,
            ) from exc

        record = {
            "epoch": epoch + 1,
            "train_loss": epoch_loss_sum / epoch_points,
            "train_loss_sum": epoch_loss_sum,
        }
        if val_graphs is not None:
            record["val_ade"], record["val_fde"] = _validation_metrics(
                params, val_samples, val_graphs, config.mode)
        log.append(record)
        last_good = (params.copy(), optimizer_state.copy(), epoch + 1)
        if progress is not None:
            progress(record)

    return TrainResult(params=params, optimizer_state=optimizer_state, log=log,
                       rng_state=rng.bit_generator.state, epoch=config.epochs)


def _flush_batch(params, state, batch_points):
    scale = 1.0 / max(batch_points, 1)
    grads = {}
    for name, t in params.named_tensors():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        grads[name] = g * scale
    optimizer_step(params, grads, state)
    params.zero_grads()


def _validation_metrics(params, samples, graphs, mode):
    from .evaluation import ade, fde
    from .model import relative_to_absolute

    ade_num = fde_num = 0.0
    ade_den = fde_den = 0
    for sample, graph in zip(samples, graphs):
        if mode == "probabilistic":
            disp = predict_probabilistic(graph, params).mu.data
        else:
            disp = predict_deterministic(graph, params).data
        pred_abs = relative_to_absolute(disp, sample.abs_obs[:, -1, :])
        n, t = sample.n_peds, sample.t_pred
        ade_num += ade(pred_abs, sample.abs_fut) * n * t
        ade_den += n * t
        fde_num += fde(pred_abs, sample.abs_fut) * n
        fde_den += n
    return ade_num / max(ade_den, 1), fde_num / max(fde_den, 1)


# ---------------------------------------------------------------------------
# Checkpoints: magic + version + JSON header + row-major float64 LE payload.

def _header_bytes(header):
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, params, optimizer_state, config, rng_state, epoch=0):
    """Write a self-describing checkpoint; round-trips are byte-stable."""
    manifest = [{"name": name, "shape": list(t.shape)} for name, t in params.named_tensors()]
    moment_names = sorted(optimizer_state.m) if optimizer_state.kind == "adam" else []
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(config),
        "model": {
            "mode": params.mode, "t_obs": params.t_obs, "t_pred": params.t_pred,
            "f_hidden": params.f_hidden, "k_residual": params.k_residual,
        },
        "optimizer": {
            "kind": optimizer_state.kind,
            "learning_rate": optimizer_state.learning_rate,
            "beta1": optimizer_state.beta1,
            "beta2": optimizer_state.beta2,
            "epsilon": optimizer_state.epsilon,
            "step_count": optimizer_state.step_count,
            "moment_names": moment_names,
        },
        "rng_state": rng_state,
        "epoch": epoch,
        "tensors": manifest,
    }
    blob = _header_bytes(header)
    chunks = [CHECKPOINT_MAGIC,
              CHECKPOINT_VERSION.to_bytes(4, "little"),
              len(blob).to_bytes(8, "little"), blob]
    for _, t in params.named_tensors():
        chunks.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    for name in moment_names:
        chunks.append(np.ascontiguousarray(optimizer_state.m[name], dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(optimizer_state.v[name], dtype="<f8").tobytes())
    data = b"".join(chunks)
    with open(path, "wb") as f:
        f.write(data)


def load_checkpoint(path):
    """Read a checkpoint back into (params, optimizer_state, config, rng_state, epoch)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(CHECKPOINT_MAGIC) + 12 or not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a crowdgcn checkpoint")
    off = len(CHECKPOINT_MAGIC)
    version = int.from_bytes(raw[off : off + 4], "little")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off += 4
    header_len = int.from_bytes(raw[off : off + 8], "little")
    off += 8
    try:
        header = json.loads(raw[off : off + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from None
    off += header_len

    model_meta = header["model"]
    params = init_params(mode=model_meta["mode"], t_obs=model_meta["t_obs"],
                         t_pred=model_meta["t_pred"], f_hidden=model_meta["f_hidden"],
                         k_residual=model_meta["k_residual"], rng=np.random.default_rng(0))

    expected = {name: tuple(t.shape) for name, t in params.named_tensors()}
    manifest = header["tensors"]
    if [m["name"] for m in manifest] != list(expected):
        raise CheckpointError(f"{path}: tensor manifest does not match model layout")
    payload_sizes = []
    for m in manifest:
        shape = tuple(int(s) for s in m["shape"])
        if shape != expected[m["name"]]:
            raise CheckpointError(
                f"{path}: tensor '{m['name']}' has shape {shape}, expected {expected[m['name']]}")
        payload_sizes.append(int(np.prod(shape)) if shape else 1)

    opt_meta = header["optimizer"]
    moment_names = list(opt_meta.get("moment_names", []))
    moment_sizes = [payload_sizes[[m["name"] for m in manifest].index(n)] for n in moment_names]
    total = sum(payload_sizes) + 2 * sum(moment_sizes)
    if len(raw) - off != total * 8:
        raise CheckpointError(f"{path}: payload length {len(raw) - off} does not match manifest")

    def take(count, shape):
        nonlocal off
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape)
        off += count * 8
        return arr.astype(np.float64)

    for (name, t), size in zip(params.named_tensors(), payload_sizes):
        t.data = take(size, t.shape)

    optimizer_state = OptimizerState(
        kind=opt_meta["kind"], learning_rate=opt_meta["learning_rate"],
        beta1=opt_meta["beta1"], beta2=opt_meta["beta2"], epsilon=opt_meta["epsilon"],
        step_count=opt_meta["step_count"],
    )
    shape_of = {m["name"]: tuple(int(s) for s in m["shape"]) for m in manifest}
    for name, size in zip(moment_names, moment_sizes):
        optimizer_state.m[name] = take(size, shape_of[name])
        optimizer_state.v[name] = take(size, shape_of[name])

    config_fields = {f.name for f in fields(TrainConfig)}
    config = TrainConfig(**{k: v for k, v in header["config"].items() if k in config_fields})
    return params, optimizer_state, config, header["rng_state"], header["epoch"]
