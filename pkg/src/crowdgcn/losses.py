"""Training objectives: bivariate-Gaussian negative log-likelihood and the
combined average/final displacement loss.

Both losses reduce by summation over pedestrians and predicted steps; the
returned LossValue also carries per-pedestrian sums for logging so runs
with different crowd sizes stay comparable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import NumericError
from .model import relative_to_absolute

LOG_TWO_PI = float(np.log(2.0 * np.pi))

# Keeps 1/(1 - rho^2) finite if rho ever saturates to +-1 in float.
_CORR_FLOOR = 1e-12


@dataclass
class LossValue:
    """A scalar loss tensor plus a detached per-pedestrian breakdown."""

    total: Tensor
    per_ped: np.ndarray
    n_points: int

    @property
    def value(self):
        return float(self.total.data)

    @property
    def mean_per_ped(self):
        return float(self.per_ped.mean()) if self.per_ped.size else 0.0


def nll_loss(pred, target):
    """Negative log-likelihood of target displacements under a GaussianField.

    Summed over all pedestrians and predicted steps.
    """
    target = np.asarray(target, dtype=np.float64)
    mu, sigma, rho = pred.mu, pred.sigma, pred.rho
    d = ad.sub(Tensor(target), mu)
    dx, dy = d[..., 0], d[..., 1]
    sx, sy = sigma[..., 0], sigma[..., 1]
    zx = ad.div(dx, sx)
    zy = ad.div(dy, sy)
    one_minus_r2 = ad.clamp_min(ad.sub(Tensor(1.0), ad.mul(rho, rho)), _CORR_FLOOR)
    quad = ad.sub(ad.add(ad.mul(zx, zx), ad.mul(zy, zy)),
                  ad.mul(ad.mul(Tensor(2.0), rho), ad.mul(zx, zy)))
    point_nll = ad.add(
        ad.add(Tensor(LOG_TWO_PI), ad.add(ad.log(sx), ad.log(sy))),
        ad.add(ad.mul(Tensor(0.5), ad.log(one_minus_r2)),
               ad.div(quad, ad.mul(Tensor(2.0), one_minus_r2))),
    )  # N x T_pred
    total = ad.tensor_sum(point_nll)
    if not np.isfinite(total.data).all():
        raise NumericError("nll_loss evaluated to a non-finite value")
    return LossValue(total=total, per_ped=point_nll.data.sum(axis=1).copy(),
                     n_points=int(point_nll.size))


def cde_loss(pred_disp, target_abs, origin, alpha=0.5):
    """Combined displacement loss on absolute positions.

    ``alpha * sum_t sum_i ||Y - Yhat|| + (1 - alpha) * sum_i ||Y_T - Yhat_T||``
    where the prediction arrives as displacements and is converted to
    absolute positions from each pedestrian's last observed point.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    target_abs = np.asarray(target_abs, dtype=np.float64)
    pred_abs = relative_to_absolute(pred_disp, origin)
    if not isinstance(pred_abs, Tensor):
        pred_abs = Tensor(pred_abs)
    err = ad.sub(pred_abs, Tensor(target_abs))
    dist = ad.eucnorm(err)                    # N x T_pred
    all_steps = ad.tensor_sum(dist)
    final_step = ad.tensor_sum(dist[:, -1])
    total = ad.add(ad.mul(Tensor(alpha), all_steps),
                   ad.mul(Tensor(1.0 - alpha), final_step))
    if not np.isfinite(total.data).all():
        raise NumericError("cde_loss evaluated to a non-finite value")
    return LossValue(total=total, per_ped=dist.data.sum(axis=1).copy(),
                     n_points=int(dist.size))
