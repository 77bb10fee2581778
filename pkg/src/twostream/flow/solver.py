"""Coarse-to-fine variational optical flow.

Energy per pyramid level, with robust penalty Psi(s^2) = sqrt(s^2 + eps^2):

    E(u, v) = sum Psi( (I2(x+w) - I1(x))^2
                       + gamma * |grad I2(x+w) - grad I1(x)|^2 )
            + alpha * sum Psi( |grad u|^2 + |grad v|^2 )

Each level runs fixed-point (outer) iterations that re-warp and re-linearize,
inner iterations that update the robustness factors, and an SOR relaxation of
the resulting linear system. The smoothness term is discretized with forward
differences so the relaxed system is the exact Euler-Lagrange equation of the
discrete energy; the energy is checked to be non-increasing across outer
iterations and a ConvergenceError carries the pyramid level if it is not.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from ..errors import ConfigError, ConvergenceError, NumericError, ShapeError
from .fields import FlowField
from .pyramid import (build_pyramid, deriv_x, deriv_y, pyramid_level_count,
                      resize_bilinear, warp_bilinear)

# Robust penalty offset; also keeps diffusivities bounded.
ROBUST_EPS = 1e-3
# Allowed relative energy increase before the solve counts as diverged.
ENERGY_TOLERANCE = 1e-6

MIN_FRAME_DIM = 16

# The solver works on 8-bit-range luma internally. ROBUST_EPS is an absolute
# scale, so the data/smoothness balance that alpha and gamma encode only holds
# at this intensity range; on [0, 1] inputs the data term would be too weak to
# resist the flat-flow TV diffusivity and every minimizer would degenerate to
# a globally constant field.
INTENSITY_SCALE = 255.0

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class FlowParams:
    alpha: float = 30.0
    gamma: float = 10.0
    pyramid_scale: float = 0.8
    levels: int | None = None  # None = auto: shrink until min dim hits 8 px
    outer_iterations: int = 5
    inner_iterations: int = 3
    sor_omega: float = 1.9
    sor_sweeps: int = 30

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if not 0.5 <= self.pyramid_scale < 0.95:
            raise ConfigError(
                f"pyramid_scale must lie in [0.5, 0.95), got {self.pyramid_scale}")
        if self.levels is not None and self.levels < 1:
            raise ConfigError(f"levels must be >= 1 or None, got {self.levels}")
        if self.outer_iterations < 1 or self.inner_iterations < 1:
            raise ConfigError("iteration counts must be >= 1")
        if not 1.0 < self.sor_omega < 2.0:
            raise ConfigError(f"sor_omega must lie in (1, 2), got {self.sor_omega}")
        if self.sor_sweeps < 1:
            raise ConfigError(f"sor_sweeps must be >= 1, got {self.sor_sweeps}")


def to_grayscale(frame: np.ndarray) -> np.ndarray:
    """RGB (H, W, 3) to luma; 2-D input passes through unchanged."""
    if frame.ndim == 2:
        return frame.astype(np.float64)
    if frame.ndim == 3 and frame.shape[2] == 3:
        return frame.astype(np.float64) @ LUMA_WEIGHTS
    raise ShapeError(f"expected (H, W) or (H, W, 3) frame, got {frame.shape}")


@njit(cache=True, nogil=True)
def _sor_sweeps(du, dv, d11, d12, d22, b1, b2, wn, ws, we, ww, wsum,
                alpha, omega, sweeps):
    """Gauss-Seidel SOR in natural pixel order on the coupled du/dv system."""
    h, w = du.shape
    for _ in range(sweeps):
        for i in range(h):
            for j in range(w):
                acc_u = 0.0
                acc_v = 0.0
                if i > 0:
                    acc_u += wn[i, j] * du[i - 1, j]
                    acc_v += wn[i, j] * dv[i - 1, j]
                if i < h - 1:
                    acc_u += ws[i, j] * du[i + 1, j]
                    acc_v += ws[i, j] * dv[i + 1, j]
                if j > 0:
                    acc_u += ww[i, j] * du[i, j - 1]
                    acc_v += ww[i, j] * dv[i, j - 1]
                if j < w - 1:
                    acc_u += we[i, j] * du[i, j + 1]
                    acc_v += we[i, j] * dv[i, j + 1]
                gs_u = (b1[i, j] - d12[i, j] * dv[i, j] + alpha * acc_u) \
                    / (d11[i, j] + alpha * wsum[i, j])
                du[i, j] = (1.0 - omega) * du[i, j] + omega * gs_u
                gs_v = (b2[i, j] - d12[i, j] * du[i, j] + alpha * acc_v) \
                    / (d22[i, j] + alpha * wsum[i, j])
                dv[i, j] = (1.0 - omega) * dv[i, j] + omega * gs_v


def _forward_diff_sq(a: np.ndarray) -> np.ndarray:
    """(a_E - a)^2 + (a_S - a)^2 with zero contribution past the far edges."""
    out = np.zeros_like(a)
    out[:, :-1] += (a[:, 1:] - a[:, :-1]) ** 2
    out[:-1, :] += (a[1:, :] - a[:-1, :]) ** 2
    return out


def _neighbor_sum(wn, ws, we, ww, x):
    out = np.zeros_like(x)
    out[1:, :] += wn[1:, :] * x[:-1, :]
    out[:-1, :] += ws[:-1, :] * x[1:, :]
    out[:, :-1] += we[:, :-1] * x[:, 1:]
    out[:, 1:] += ww[:, 1:] * x[:, :-1]
    return out


def _dpsi(s2: np.ndarray) -> np.ndarray:
    return 0.5 / np.sqrt(s2 + ROBUST_EPS ** 2)


def flow_energy(i1: np.ndarray, i2: np.ndarray, u: np.ndarray, v: np.ndarray,
                alpha: float, gamma: float) -> float:
    """Discrete energy of a flow candidate on one pyramid level."""
    i2w = warp_bilinear(i2, u, v)
    data = (i2w - i1) ** 2
    data += gamma * ((deriv_x(i2w) - deriv_x(i1)) ** 2
                     + (deriv_y(i2w) - deriv_y(i1)) ** 2)
    smooth = _forward_diff_sq(u) + _forward_diff_sq(v)
    return float(np.sum(np.sqrt(data + ROBUST_EPS ** 2))
                 + alpha * np.sum(np.sqrt(smooth + ROBUST_EPS ** 2)))


def _constant_mode_step(du, dv, psi_d, ix, iy, iz, ixx, ixy, iyy, ixz, iyz,
                        gamma):
    """Best globally-constant increment of the linearized data energy.

    A constant shift has zero smoothness cost (only differences enter), so
    point relaxation alone moves it at the pace of the data/smoothness
    stiffness ratio, which is hopeless under a TV diffusivity on flat flow.
    Solving the 2x2 aggregate system directly fixes that mode.
    """
    bright = iz + ix * du + iy * dv
    gradx = ixz + ixx * du + ixy * dv
    grady = iyz + ixy * du + iyy * dv
    a11 = float(np.sum(psi_d * (ix * ix + gamma * (ixx * ixx + ixy * ixy))))
    a22 = float(np.sum(psi_d * (iy * iy + gamma * (iyy * iyy + ixy * ixy))))
    a12 = float(np.sum(psi_d * (ix * iy + gamma * (ixx * ixy + ixy * iyy))))
    r1 = -float(np.sum(psi_d * (ix * bright + gamma * (ixx * gradx + ixy * grady))))
    r2 = -float(np.sum(psi_d * (iy * bright + gamma * (ixy * gradx + iyy * grady))))
    det = a11 * a22 - a12 * a12
    if det <= 1e-30:
        return
    du += (a22 * r1 - a12 * r2) / det
    dv += (a11 * r2 - a12 * r1) / det


def _solve_level(i1, i2, u, v, params: FlowParams, level: int):
    alpha, gamma = params.alpha, params.gamma
    i1x, i1y = deriv_x(i1), deriv_y(i1)
    energy_prev = flow_energy(i1, i2, u, v, alpha, gamma)
    for _ in range(params.outer_iterations):
        i2w = warp_bilinear(i2, u, v)
        i2wx, i2wy = deriv_x(i2w), deriv_y(i2w)
        ix = 0.5 * (i1x + i2wx)
        iy = 0.5 * (i1y + i2wy)
        iz = i2w - i1
        ixx, ixy, iyy = deriv_x(i2wx), deriv_y(i2wx), deriv_y(i2wy)
        ixz = i2wx - i1x
        iyz = i2wy - i1y
        du = np.zeros_like(u)
        dv = np.zeros_like(v)
        for _ in range(params.inner_iterations):
            # Lagged robustness factor of the linearized data term.
            bright = iz + ix * du + iy * dv
            gradx = ixz + ixx * du + ixy * dv
            grady = iyz + ixy * du + iyy * dv
            psi_d = _dpsi(bright ** 2 + gamma * (gradx ** 2 + grady ** 2))
            _constant_mode_step(du, dv, psi_d, ix, iy, iz, ixx, ixy, iyy,
                                ixz, iyz, gamma)
            d11 = psi_d * (ix * ix + gamma * (ixx * ixx + ixy * ixy))
            d22 = psi_d * (iy * iy + gamma * (iyy * iyy + ixy * ixy))
            d12 = psi_d * (ix * iy + gamma * (ixx * ixy + ixy * iyy))
            d1z = psi_d * (ix * iz + gamma * (ixx * ixz + ixy * iyz))
            d2z = psi_d * (iy * iz + gamma * (ixy * ixz + iyy * iyz))
            # Diffusivity of the forward-difference smoothness term; the
            # weight of edge (p, east/south neighbor) is psi_s at p.
            psi_s = _dpsi(_forward_diff_sq(u + du) + _forward_diff_sq(v + dv))
            we = psi_s.copy()
            we[:, -1] = 0.0
            ws = psi_s.copy()
            ws[-1, :] = 0.0
            wn = np.zeros_like(psi_s)
            wn[1:, :] = ws[:-1, :]
            ww = np.zeros_like(psi_s)
            ww[:, 1:] = we[:, :-1]
            wsum = wn + ws + we + ww
            b1 = -d1z + alpha * (_neighbor_sum(wn, ws, we, ww, u) - wsum * u)
            b2 = -d2z + alpha * (_neighbor_sum(wn, ws, we, ww, v) - wsum * v)
            _sor_sweeps(du, dv, d11, d12, d22, b1, b2, wn, ws, we, ww, wsum,
                        alpha, params.sor_omega, params.sor_sweeps)
        # Backtracking keeps the true (warped, non-linearized) energy
        # non-increasing even when the Gauss-Newton step overshoots.
        accepted = False
        for t in (1.0, 0.5, 0.25, 0.125):
            energy = flow_energy(i1, i2, u + t * du, v + t * dv, alpha, gamma)
            if not np.isfinite(energy):
                raise ConvergenceError(
                    f"flow energy diverged (non-finite) at pyramid level "
                    f"{level} (0 = coarsest)", level=level)
            if energy <= energy_prev * (1.0 + ENERGY_TOLERANCE):
                u = u + t * du
                v = v + t * dv
                energy_prev = min(energy_prev, energy)
                accepted = True
                break
        if not accepted:
            # No step length reduced the energy: the current flow is already
            # at the scheme's resolution limit for this level.
            break
    return u, v


def _validate_frames(frame_a, frame_b):
    if frame_a.shape != frame_b.shape:
        raise ShapeError(f"frame dims differ: {frame_a.shape} vs {frame_b.shape}")
    a = to_grayscale(frame_a)
    b = to_grayscale(frame_b)
    h, w = a.shape
    if h < MIN_FRAME_DIM or w < MIN_FRAME_DIM:
        raise ShapeError(f"frames must be at least {MIN_FRAME_DIM}px per side, "
                         f"got {h}x{w}")
    for name, img in (("frame_a", a), ("frame_b", b)):
        if not np.all(np.isfinite(img)):
            raise NumericError(f"{name} contains non-finite values")
        if img.min() < -1e-6 or img.max() > 1.0 + 1e-6:
            raise NumericError(f"{name} values must lie in [0, 1], got range "
                               f"[{img.min():.4g}, {img.max():.4g}]")
    return a * INTENSITY_SCALE, b * INTENSITY_SCALE


def estimate_flow(frame_a: np.ndarray, frame_b: np.ndarray,
                  params: FlowParams | None = None) -> FlowField:
    """Displacement field mapping frame_a pixels onto frame_b.

    Frames are (H, W) grayscale or (H, W, 3) RGB with values in [0, 1] and at
    least 16 px per side. The function holds no shared state, so independent
    frame pairs may be solved concurrently.
    """
    if params is None:
        params = FlowParams()
    a, b = _validate_frames(frame_a, frame_b)
    n_levels = pyramid_level_count(a.shape, params.pyramid_scale, params.levels)
    pyr_a = build_pyramid(a, params.pyramid_scale, n_levels)
    pyr_b = build_pyramid(b, params.pyramid_scale, n_levels)
    u = np.zeros_like(pyr_a[0])
    v = np.zeros_like(pyr_a[0])
    for level, (ia, ib) in enumerate(zip(pyr_a, pyr_b)):
        if level > 0:
            old_h, old_w = u.shape
            new_h, new_w = ia.shape
            u = resize_bilinear(u, ia.shape) * (new_w / old_w)
            v = resize_bilinear(v, ia.shape) * (new_h / old_h)
        u, v = _solve_level(ia, ib, u, v, params, level)
    return FlowField(u=u.astype(np.float32), v=v.astype(np.float32))
