"""Frame-sequence preprocessing: grayscale, background removal, blur, downsample,
finite-difference time derivatives and random input masking."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

LUMA = (0.299, 0.587, 0.114)


@dataclass
class FrameSequence:
    frames: np.ndarray  # (T, H, W) or (T, H, W, C)
    dt: float
    value_range: tuple[float, float] | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim not in (3, 4):
            raise ValueError(f"frames must be (T, H, W[, C]), got shape {self.frames.shape}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def flatten(self) -> np.ndarray:
        """(T, H*W) matrix of grayscale frames."""
        if self.frames.ndim != 3:
            raise ValueError("flatten expects grayscale frames")
        return self.frames.reshape(self.n_frames, -1)


@dataclass(frozen=True)
class PipelineConfig:
    grayscale: bool = True
    luma: tuple[float, float, float] = LUMA
    remove_background: bool = True
    sigma: float | None = 1.0  # None skips the blur
    target: tuple[int, int] | None = None  # None skips downsampling
    mask_fraction: float = 0.0
    derivative_order: int = 1
    derivatives_after_downsample: bool = True

    def __post_init__(self):
        if self.sigma is not None and self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not 0.0 <= self.mask_fraction < 1.0:
            raise ValueError("mask fraction must lie in [0, 1)")
        if self.derivative_order not in (1, 2):
            raise ValueError("derivative_order must be 1 or 2")


def to_grayscale(frames: np.ndarray, luma=LUMA) -> np.ndarray:
    """Luma-weighted grayscale, then min-max normalised to [0, 1]."""
    if frames.ndim == 4:
        g = frames[..., :3] @ np.asarray(luma, dtype=np.float64)
    else:
        g = frames
    lo, hi = g.min(), g.max()
    if hi > lo:
        g = (g - lo) / (hi - lo)
    else:
        g = np.zeros_like(g)
    return g


def remove_background(frames: np.ndarray) -> np.ndarray:
    """Subtract the temporal-mean frame.

    The mean is taken relative to the first frame, so a static video maps to
    exact zeros.
    """
    shifted = frames - frames[:1]
    return shifted - shifted.mean(axis=0, keepdims=True)


def gaussian_blur(frames: np.ndarray, sigma: float) -> np.ndarray:
    """Per-frame 2-D Gaussian, kernel truncated at 3 sigma, reflect padding."""
    return ndimage.gaussian_filter(frames, sigma=(0, sigma, sigma), mode="reflect", truncate=3.0)


def area_downsample(frames: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Area-average resampling of (T, H, W) frames to (T, h, w).

    Each output pixel is the mean of the source area it covers, with fractional
    overlap weights when the sizes do not divide evenly.
    """
    T, H, W = frames.shape
    h, w = target
    if h > H or w > W or h < 1 or w < 1:
        raise ValueError(f"target {target} must be within the source size {(H, W)}")
    if H % h == 0 and W % w == 0:
        return frames.reshape(T, h, H // h, w, W // w).mean(axis=(2, 4))
    Ry = _area_weights(H, h)
    Rx = _area_weights(W, w)
    return np.einsum("ih,thw,jw->tij", Ry, frames, Rx)


def _area_weights(src: int, dst: int) -> np.ndarray:
    R = np.zeros((dst, src))
    edges = np.linspace(0.0, src, dst + 1)
    for i in range(dst):
        a, b = edges[i], edges[i + 1]
        for k in range(int(np.floor(a)), int(np.ceil(b))):
            overlap = min(b, k + 1) - max(a, k)
            if overlap > 0:
                R[i, k] = overlap
        R[i] /= R[i].sum()
    return R


def preprocess_frames(seq: FrameSequence, config: PipelineConfig = PipelineConfig()) -> FrameSequence:
    if seq.n_frames < 2:
        raise ValueError("need at least two frames")
    f = seq.frames
    if config.target is not None:
        H, W = f.shape[1:3]
        if config.target[0] > H or config.target[1] > W:
            raise ValueError(f"target {config.target} is larger than the source {(H, W)}")
    if config.grayscale or f.ndim == 4:
        f = to_grayscale(f, config.luma)
    if config.remove_background:
        f = remove_background(f)
    if config.sigma is not None:
        f = gaussian_blur(f, config.sigma)
    if config.target is not None:
        f = area_downsample(f, config.target)
    return FrameSequence(f, seq.dt, (float(f.min()), float(f.max())))


def temporal_derivatives(X: np.ndarray, dt: float, order: int = 1):
    """Second-order accurate finite differences along axis 0.

    Interior rows use centred stencils; the two end rows use one-sided
    second-order stencils, so the output aligns row-for-row with ``X``.
    Returns ``Xdot`` or ``(Xdot, Xddot)`` for ``order=2``.
    """
    X = np.asarray(X, dtype=np.float64)
    T = X.shape[0]
    if T < 3:
        raise ValueError("need at least three frames for derivative stencils")
    d1 = np.empty_like(X)
    d1[1:-1] = (X[2:] - X[:-2]) / (2 * dt)
    d1[0] = (-3 * X[0] + 4 * X[1] - X[2]) / (2 * dt)
    d1[-1] = (3 * X[-1] - 4 * X[-2] + X[-3]) / (2 * dt)
    if order == 1:
        return d1
    if order != 2:
        raise ValueError("order must be 1 or 2")
    d2 = np.empty_like(X)
    d2[1:-1] = (X[2:] - 2 * X[1:-1] + X[:-2]) / dt**2
    if T >= 4:
        d2[0] = (2 * X[0] - 5 * X[1] + 4 * X[2] - X[3]) / dt**2
        d2[-1] = (2 * X[-1] - 5 * X[-2] + 4 * X[-3] - X[-4]) / dt**2
    else:
        d2[0] = d2[1]
        d2[-1] = d2[1]
    return d1, d2


def random_mask(X: np.ndarray, fraction: float, seed=None, return_mask: bool = False):
    """Zero ``round(fraction * n)`` uniformly chosen entries in every row."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must lie in [0, 1)")
    X = np.asarray(X, dtype=np.float64)
    m, n = X.shape
    k = int(np.rint(fraction * n))
    keep = np.ones((m, n))
    if k:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        # argsort of iid uniforms gives independent uniform k-subsets per row
        drop = np.argsort(rng.random((m, n)), axis=1)[:, :k]
        np.put_along_axis(keep, drop, 0.0, axis=1)
    out = X * keep
    return (out, keep) if return_mask else out


def frames_to_dataset(seq: FrameSequence, config: PipelineConfig = PipelineConfig()):
    """Run the pipeline and return a training :class:`~sindyae.datagen.Dataset`."""
    from .datagen import Dataset

    if config.derivatives_after_downsample:
        out = preprocess_frames(seq, config)
        X = out.flatten()
        ders = temporal_derivatives(X, seq.dt, config.derivative_order)
    else:
        full = preprocess_frames(seq, replace(config, target=None))
        Xf = full.flatten()
        ders = temporal_derivatives(Xf, seq.dt, config.derivative_order)
        if config.target is not None:
            shape = full.frames.shape[1:]
            down = lambda A: area_downsample(A.reshape(-1, *shape), config.target).reshape(A.shape[0], -1)  # noqa: E731
            X = down(Xf)
            ders = tuple(down(d) for d in ders) if isinstance(ders, tuple) else down(ders)
        else:
            X = Xf
    if config.derivative_order == 1:
        Xdot, Xddot = ders, None
    else:
        Xdot, Xddot = ders
    meta = dict(system="video", traj_len=X.shape[0], n_traj=1, mask_fraction=config.mask_fraction)
    return Dataset(X, Xdot, seq.dt, Xddot=Xddot, meta=meta)
