"""The trajectory network: graph-convolutional encoder, time-extrapolating
convolutional decoder, and probabilistic / deterministic output heads.

One encoder layer aggregates node features through the normalized attention
adjacency, projects them, and convolves along the observation axis; the
decoder treats time as channels to map T_obs steps onto T_pred steps, then
refines through residual convolution layers.  The probabilistic head emits a
bivariate Gaussian per pedestrian per step (in displacement space); the
deterministic head emits displacements directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import NumericError, ShapeError

MODES = ("probabilistic", "deterministic")

# Channel counts emitted by the head per node per step.
GAUSSIAN_CHANNELS = 5  # mu_x, mu_y, log sigma_x, log sigma_y, atanh-ish rho
POINT_CHANNELS = 2

DEFAULT_F_HIDDEN = 42
DEFAULT_K_RESIDUAL = 4
TEMPORAL_KERNEL_WIDTH = 3
PRELU_INIT_SLOPE = 0.25


@dataclass
class GaussianField:
    """Bivariate Gaussian parameters per pedestrian per predicted step.

    mu: N x T_pred x 2 (displacements, m/step); sigma: N x T_pred x 2 (> 0);
    rho: N x T_pred in (-1, 1).  Fields are autodiff tensors; use ``.data``
    for plain arrays.
    """

    mu: Tensor
    sigma: Tensor
    rho: Tensor

    def arrays(self):
        return self.mu.data, self.sigma.data, self.rho.data


@dataclass
class ModelParams:
    """All trainable weights, named for checkpointing and the census."""

    spatial_weight: Tensor        # 2 x F_hid
    temporal_kernel: Tensor       # F_hid x F_hid x 3
    temporal_bias: Tensor         # F_hid
    stgcnn_slope: Tensor          # scalar
    txp_kernels: list[Tensor]     # [T_pred x T_obs x 3] + K x [T_pred x T_pred x 3]
    txp_biases: list[Tensor]      # (K+1) x [T_pred]
    txp_slopes: list[Tensor]      # (K+1) scalars
    head_weight: Tensor           # F_hid x C_out
    head_bias: Tensor             # C_out
    mode: str = "probabilistic"
    t_obs: int = 8
    t_pred: int = 12
    f_hidden: int = DEFAULT_F_HIDDEN
    k_residual: int = DEFAULT_K_RESIDUAL

    def named_tensors(self):
        """(name, tensor) pairs in a stable order."""
        pairs = [
            ("spatial_weight", self.spatial_weight),
            ("temporal_kernel", self.temporal_kernel),
            ("temporal_bias", self.temporal_bias),
            ("stgcnn_slope", self.stgcnn_slope),
        ]
        for i, (k, b, s) in enumerate(zip(self.txp_kernels, self.txp_biases, self.txp_slopes)):
            pairs.append((f"txp_kernel_{i}", k))
            pairs.append((f"txp_bias_{i}", b))
            pairs.append((f"txp_slope_{i}", s))
        pairs.append(("head_weight", self.head_weight))
        pairs.append(("head_bias", self.head_bias))
        return pairs

    def tensors(self):
        return [t for _, t in self.named_tensors()]

    def zero_grads(self):
        for t in self.tensors():
            t.zero_grad()

    def copy(self):
        clone = init_params(mode=self.mode, t_obs=self.t_obs, t_pred=self.t_pred,
                            f_hidden=self.f_hidden, k_residual=self.k_residual,
                            rng=np.random.default_rng(0))
        for (_, src), (_, dst) in zip(self.named_tensors(), clone.named_tensors()):
            dst.data = src.data.copy()
        return clone


def _uniform_init(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(mode="probabilistic", t_obs=8, t_pred=12,
                f_hidden=DEFAULT_F_HIDDEN, k_residual=DEFAULT_K_RESIDUAL, rng=None):
    """Fresh trainable parameters; weights ~ U(-a, a), a = sqrt(6/(fan_in+fan_out))."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if rng is None:
        rng = np.random.default_rng(0)
    kw = TEMPORAL_KERNEL_WIDTH
    c_out = GAUSSIAN_CHANNELS if mode == "probabilistic" else POINT_CHANNELS

    def trainable(data):
        return Tensor(data, requires_grad=True)

    txp_kernels = [trainable(_uniform_init(rng, (t_pred, t_obs, kw), t_obs * kw, t_pred * kw))]
    txp_biases = [trainable(np.zeros(t_pred))]
    txp_slopes = [trainable(np.float64(PRELU_INIT_SLOPE))]
    for _ in range(k_residual):
        txp_kernels.append(trainable(_uniform_init(rng, (t_pred, t_pred, kw), t_pred * kw, t_pred * kw)))
        txp_biases.append(trainable(np.zeros(t_pred)))
        txp_slopes.append(trainable(np.float64(PRELU_INIT_SLOPE)))

    return ModelParams(
        spatial_weight=trainable(_uniform_init(rng, (2, f_hidden), 2, f_hidden)),
        temporal_kernel=trainable(_uniform_init(rng, (f_hidden, f_hidden, kw), f_hidden * kw, f_hidden * kw)),
        temporal_bias=trainable(np.zeros(f_hidden)),
        stgcnn_slope=trainable(np.float64(PRELU_INIT_SLOPE)),
        txp_kernels=txp_kernels,
        txp_biases=txp_biases,
        txp_slopes=txp_slopes,
        head_weight=trainable(_uniform_init(rng, (f_hidden, c_out), f_hidden, c_out)),
        head_bias=trainable(np.zeros(c_out)),
        mode=mode,
        t_obs=t_obs,
        t_pred=t_pred,
        f_hidden=f_hidden,
        k_residual=k_residual,
    )


def parameter_census(params):
    """Total count of trainable scalars.

    Accepts a ModelParams or any iterable of tensors.
    """
    tensors = params.tensors() if hasattr(params, "tensors") else list(params)
    return int(sum(t.size for t in tensors))


def stgcnn_forward(graph, params):
    """Encoder layer: adjacency aggregation, projection, temporal conv, PReLU.

    Returns a T_obs x N x F_hid tensor.
    """
    if graph.node_feats.shape[0] != params.t_obs:
        raise ShapeError(
            f"graph has {graph.node_feats.shape[0]} observation steps, params expect {params.t_obs}")
    v = Tensor(graph.node_feats)    # T x N x 2
    a = Tensor(graph.adj_norm)      # T x N x N
    h = ad.matmul(a, v)             # spatial aggregation per timestep
    h = ad.matmul(h, params.spatial_weight)          # T x N x F
    h = ad.transpose(h, (2, 0, 1))                   # F x T x N: channels, time, nodes
    h = ad.conv_time(h, params.temporal_kernel, padding=(TEMPORAL_KERNEL_WIDTH - 1) // 2)
    h = ad.add(h, ad.reshape(params.temporal_bias, (params.f_hidden, 1, 1)))
    h = ad.transpose(h, (1, 2, 0))                   # back to T x N x F
    return ad.prelu(h, params.stgcnn_slope)


def txpcnn_forward(h, params):
    """Decoder: map T_obs to T_pred with time as channels, then K residual layers.

    Input T_obs x N x F_hid, output T_pred x N x F_hid.  The convolutions
    slide along the feature axis independently per pedestrian, so the stack
    is permutation-equivariant over the crowd.
    """
    pad = (TEMPORAL_KERNEL_WIDTH - 1) // 2
    u = ad.transpose(h, (0, 2, 1))  # T_obs x F x N: time as channels
    u = ad.conv_time(u, params.txp_kernels[0], padding=pad)
    u = ad.add(u, ad.reshape(params.txp_biases[0], (params.t_pred, 1, 1)))
    u = ad.prelu(u, params.txp_slopes[0])
    for k in range(1, len(params.txp_kernels)):
        z = ad.conv_time(u, params.txp_kernels[k], padding=pad)
        z = ad.add(z, ad.reshape(params.txp_biases[k], (params.t_pred, 1, 1)))
        u = ad.prelu(ad.add(z, u), params.txp_slopes[k])
    return ad.transpose(u, (0, 2, 1))  # T_pred x N x F


def _head_output(graph, params, expected_channels):
    h = stgcnn_forward(graph, params)
    u = txpcnn_forward(h, params)
    if params.head_weight.shape[1] != expected_channels:
        raise ShapeError(
            f"head emits {params.head_weight.shape[1]} channels, expected {expected_channels} "
            f"for {params.mode} mode")
    out = ad.add(ad.matmul(u, params.head_weight), params.head_bias)  # T_pred x N x C
    if not np.isfinite(out.data).all():
        raise NumericError("non-finite head output")
    return ad.transpose(out, (1, 0, 2))  # N x T_pred x C


def predict_probabilistic(graph, params):
    """Forward pass to a GaussianField over future displacements."""
    out = _head_output(graph, params, GAUSSIAN_CHANNELS)
    mu = out[..., 0:2]
    sigma = ad.exp(out[..., 2:4])
    rho = ad.tanh(out[..., 4])
    return GaussianField(mu=mu, sigma=sigma, rho=rho)


def predict_deterministic(graph, params):
    """Forward pass to N x T_pred x 2 displacement predictions."""
    return _head_output(graph, params, POINT_CHANNELS)


def relative_to_absolute(disp, origin):
    """Cumulative-sum displacements along time, offset by each origin.

    disp: N x T x 2 (array or Tensor), origin: N x 2.  Inverse of the
    dataset's differencing.
    """
    origin = np.asarray(origin, dtype=np.float64)
    if isinstance(disp, Tensor):
        return ad.add(ad.cumsum(disp, axis=1), Tensor(origin[:, None, :]))
    return np.cumsum(np.asarray(disp, dtype=np.float64), axis=1) + origin[:, None, :]
