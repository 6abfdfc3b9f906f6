"""Synthetic datasets with exact time derivatives.

* Lorenz latent dynamics embedded in 128-D through Legendre modes,
* a rendered 51x51 pendulum "video",
* the lambda-omega reaction-diffusion system on a periodic grid.

All generators are deterministic functions of their config and seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class IntegrationError(RuntimeError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class ConfigurationError(ValueError):
    pass


@dataclass
class Dataset:
    X: np.ndarray
    Xdot: np.ndarray
    dt: float
    Xddot: np.ndarray | None = None
    Z: np.ndarray | None = None  # ground-truth latent state, when known
    Zdot: np.ndarray | None = None
    Zddot: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        for name in ("Xdot", "Xddot"):
            a = getattr(self, name)
            if a is not None and a.shape != self.X.shape:
                raise ValueError(f"{name} shape {a.shape} differs from X shape {self.X.shape}")

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in ("X", "Xdot", "Xddot", "Z", "Zdot", "Zddot") if getattr(self, k) is not None}

    def subset(self, idx, traj_len: int | None = None) -> "Dataset":
        idx = np.asarray(idx)
        kw = {k: v[idx] for k, v in self.arrays().items()}
        meta = {k: v for k, v in self.meta.items() if k not in ("traj_len", "n_traj")}
        if traj_len is not None:
            meta.update(traj_len=int(traj_len), n_traj=len(idx) // int(traj_len))
        return Dataset(dt=self.dt, meta=meta, **kw)

    def trajectory_subset(self, traj_ids) -> "Dataset":
        """Keep whole trajectories (by index)."""
        length = int(self.meta["traj_len"])
        rows = np.concatenate([np.arange(t * length, (t + 1) * length) for t in traj_ids])
        return self.subset(rows, traj_len=length)

    def trajectories(self) -> list[slice]:
        """Row ranges of the individual trajectories (one range if unknown)."""
        length = int(self.meta.get("traj_len", self.n_samples))
        return [slice(s, s + length) for s in range(0, self.n_samples, length)]


def rk4_integrate(f: Callable[[np.ndarray], np.ndarray], z0, dt: float, steps: int,
                  max_norm: float | None = None):
    """Classical fixed-step RK4.

    ``z0`` may be one state ``(d,)`` or a batch ``(k, d)``; ``f`` must act on the
    same shape. Returns ``(Z, Zdot)`` of shape ``(steps + 1, *z0.shape)`` holding
    the states and ``f`` evaluated at each stored state. With ``max_norm`` the
    run stops with :class:`IntegrationError` once any ``|z|`` entry exceeds it.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    z = np.array(z0, dtype=np.float64)
    Z = np.empty((steps + 1, *z.shape))
    Zd = np.empty_like(Z)
    Z[0] = z
    k1 = f(z)
    Zd[0] = k1
    for i in range(steps):
        k2 = f(z + 0.5 * dt * k1)
        k3 = f(z + 0.5 * dt * k2)
        k4 = f(z + dt * k3)
        z = z + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(z)):
            raise IntegrationError(f"non-finite state at step {i + 1}", i + 1)
        if max_norm is not None and np.max(np.abs(z)) > max_norm:
            raise IntegrationError(f"state norm exceeded {max_norm:g} at step {i + 1}", i + 1)
        k1 = f(z)
        Z[i + 1] = z
        Zd[i + 1] = k1
    return Z, Zd


# ---------------------------------------------------------------- Lorenz


@dataclass(frozen=True)
class GeneratorConfig:
    system: str = "lorenz"
    n_ics: int = 2048
    steps: int = 250  # stored samples per trajectory
    dt: float = 0.02
    seed: int = 0
    noise_std: float = 0.0
    # lorenz
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    ic_low: tuple = (-36.0, -48.0, -16.0)
    ic_high: tuple = (36.0, 48.0, 66.0)
    n_grid: int = 128
    z2_power: int = 3
    lorenz_scale: float = 1.0 / 40.0  # state scaling applied before embedding
    # pendulum
    image_size: int = 51
    omega_max: float = 2.1
    energy_bound: float = 0.99
    # reaction-diffusion
    d1: float = 0.1
    d2: float = 0.1
    rd_beta: float = 1.0
    rd_grid: int = 100
    rd_samples: int = 10000
    rd_dt_internal: float | None = None
    # linear oscillator
    embed_dim: int = 10

    def __post_init__(self):
        if self.system not in ("lorenz", "pendulum", "rd", "oscillator"):
            raise ConfigurationError(f"unknown system {self.system!r}")
        if self.n_ics < 1 or self.steps < 1 or self.dt <= 0:
            raise ConfigurationError("n_ics, steps and dt must be positive")


LORENZ_BAYES = dict(beta=-2.7, z2_power=2)


def lorenz_rhs(sigma=10.0, rho=28.0, beta=8.0 / 3.0):
    def f(z):
        z1, z2, z3 = z[..., 0], z[..., 1], z[..., 2]
        return np.stack([sigma * (z2 - z1), z1 * (rho - z3) - z2, z1 * z2 - beta * z3], axis=-1)

    return f


def legendre_modes(n_grid: int = 128, count: int = 6) -> np.ndarray:
    """First ``count`` Legendre polynomials on a uniform grid over [-1, 1], shape (count, n_grid).

    Built by the three-term recurrence and scaled to unit max magnitude.
    """
    y = np.linspace(-1.0, 1.0, n_grid)
    P = [np.ones_like(y), y.copy()]
    for k in range(1, count - 1):
        P.append(((2 * k + 1) * y * P[k] - k * P[k - 1]) / (k + 1))
    modes = np.array(P[:count])
    return modes / np.abs(modes).max(axis=1, keepdims=True)


def lorenz_embed(Z: np.ndarray, Zdot: np.ndarray, modes: np.ndarray, z2_power: int = 3):
    """``x = u1 z1 + u2 z2 + u3 z3 + u4 z1^3 + u5 z2^p + u6 z3^3`` and its exact time derivative."""
    z1, z2, z3 = Z[:, 0:1], Z[:, 1:2], Z[:, 2:3]
    d1, d2, d3 = Zdot[:, 0:1], Zdot[:, 1:2], Zdot[:, 2:3]
    u = modes
    p = z2_power
    X = z1 * u[0] + z2 * u[1] + z3 * u[2] + z1**3 * u[3] + z2**p * u[4] + z3**3 * u[5]
    Xdot = (d1 * u[0] + d2 * u[1] + d3 * u[2] + 3 * z1**2 * d1 * u[3]
            + p * z2 ** (p - 1) * d2 * u[4] + 3 * z3**2 * d3 * u[5])
    return X, Xdot


def lorenz_dataset(config: GeneratorConfig = GeneratorConfig(), seed=None) -> Dataset:
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    z0 = rng.uniform(config.ic_low, config.ic_high, size=(config.n_ics, 3))
    f = lorenz_rhs(config.sigma, config.rho, config.beta)
    Z, Zd = rk4_integrate(f, z0, config.dt, config.steps - 1)
    # (steps, ics, 3) -> trajectory-major rows
    Z = Z.transpose(1, 0, 2).reshape(-1, 3)
    Zd = Zd.transpose(1, 0, 2).reshape(-1, 3)
    modes = legendre_modes(config.n_grid)
    X, Xdot = lorenz_embed(Z * config.lorenz_scale, Zd * config.lorenz_scale, modes, config.z2_power)
    if config.noise_std > 0:
        X = X + config.noise_std * rng.standard_normal(X.shape)
        Xdot = Xdot + config.noise_std * rng.standard_normal(Xdot.shape)
    meta = dict(system="lorenz", n_traj=config.n_ics, traj_len=config.steps, seed=int(seed),
                sigma=config.sigma, rho=config.rho, beta=config.beta, z2_power=config.z2_power,
                lorenz_scale=config.lorenz_scale)
    return Dataset(X, Xdot, config.dt, Z=Z, Zdot=Zd, meta=meta)


# ------------------------------------------------------ Linear oscillator


def oscillator_dataset(n_ics: int = 20, steps: int = 100, dt: float = 0.05, n: int = 10, seed=0,
                       omega: float = 1.0) -> Dataset:
    """Harmonic oscillator ``dz1 = omega z2, dz2 = -omega z1`` embedded as ``x = z Q^T``.

    ``Q`` is a random ``n x 2`` matrix with orthonormal columns; trajectories use
    the exact rotation solution, so every derivative is exact.
    """
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, 2)))
    z0 = rng.uniform(-1.0, 1.0, size=(n_ics, 2))
    t = dt * np.arange(steps)
    c, s = np.cos(omega * t)[None, :], np.sin(omega * t)[None, :]
    z1 = z0[:, :1] * c + z0[:, 1:] * s
    z2 = -z0[:, :1] * s + z0[:, 1:] * c
    Z = np.stack([z1.ravel(), z2.ravel()], axis=1)
    Zd = omega * np.stack([Z[:, 1], -Z[:, 0]], axis=1)
    meta = dict(system="oscillator", n_traj=n_ics, traj_len=steps, seed=int(seed), omega=omega)
    return Dataset(Z @ Q.T, Zd @ Q.T, dt, Z=Z, Zdot=Zd, meta={**meta, "embedding": Q.tolist()})


# -------------------------------------------------------------- Pendulum


def pendulum_rhs(state):
    return np.stack([state[..., 1], -np.sin(state[..., 0])], axis=-1)


def pendulum_energy(z, dz):
    return 0.5 * dz**2 - np.cos(z)


def sample_pendulum_ics(n: int, rng: np.random.Generator, omega_max=2.1, bound=0.99, max_attempts=10_000):
    """Uniform ICs on [-pi, pi] x [-omega_max, omega_max] that cannot loop over the top."""
    out = []
    attempts = 0
    while len(out) < n:
        if attempts >= max_attempts:
            raise RuntimeError(f"only {len(out)} of {n} pendulum ICs accepted after {attempts} attempts")
        attempts += 1
        z0 = rng.uniform(-np.pi, np.pi)
        w0 = rng.uniform(-omega_max, omega_max)
        if abs(pendulum_energy(z0, w0)) <= bound:
            out.append((z0, w0))
    return np.array(out)


def pendulum_grid(size: int = 51):
    y = np.linspace(-1.5, 1.5, size)
    # frame[i, j] sits at (y1, y2) = (y[j], y[i]); flattened row-major
    Y1, Y2 = np.meshgrid(y, y, indexing="xy")
    return Y1.ravel(), Y2.ravel()


def render_pendulum(z, dz=None, ddz=None, size: int = 51):
    """Gaussian blob frames for angles ``z`` and (optionally) exact time derivatives.

    Returns ``(X, Xdot, Xddot)``; derivative arrays are None when not requested.
    """
    z = np.asarray(z, dtype=np.float64).reshape(-1, 1)
    y1, y2 = pendulum_grid(size)
    c1 = np.cos(z - np.pi / 2)
    c2 = np.sin(z - np.pi / 2)
    r1, r2 = y1 - c1, y2 - c2
    X = np.exp(-20.0 * (r1**2 + r2**2))
    if dz is None:
        return X, None, None
    dz = np.asarray(dz, dtype=np.float64).reshape(-1, 1)
    s, c = np.sin(z), np.cos(z)  # dc1/dz = cos z, dc2/dz = sin z
    dD = -2 * r1 * c - 2 * r2 * s
    g1 = -20.0 * dD
    Xdot = X * g1 * dz
    if ddz is None:
        return X, Xdot, None
    ddz = np.asarray(ddz, dtype=np.float64).reshape(-1, 1)
    ddD = 2.0 + 2 * r1 * s - 2 * r2 * c
    g2 = -20.0 * ddD
    Xddot = X * ((g1**2 + g2) * dz**2 + g1 * ddz)
    return X, Xdot, Xddot


def pendulum_trajectories(ics: np.ndarray, dt: float, steps: int):
    """RK4 on ``(z, dz)``; returns ``Z, dZ, ddZ`` each shaped (n_ics * steps, 1), trajectory-major."""
    S, Sd = rk4_integrate(pendulum_rhs, ics, dt, steps - 1)
    S = S.transpose(1, 0, 2).reshape(-1, 2)
    Sd = Sd.transpose(1, 0, 2).reshape(-1, 2)
    return S[:, :1], S[:, 1:], Sd[:, 1:]


def pendulum_video_dataset(config: GeneratorConfig = GeneratorConfig(system="pendulum", n_ics=100, steps=500),
                           seed=None) -> Dataset:
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    ics = sample_pendulum_ics(config.n_ics, rng, config.omega_max, config.energy_bound)
    Z, dZ, ddZ = pendulum_trajectories(ics, config.dt, config.steps)
    X, Xdot, Xddot = render_pendulum(Z, dZ, ddZ, config.image_size)
    if config.noise_std > 0:
        X = X + config.noise_std * rng.standard_normal(X.shape)
    meta = dict(system="pendulum", n_traj=config.n_ics, traj_len=config.steps, seed=int(seed),
                image_size=config.image_size)
    return Dataset(X, Xdot, config.dt, Xddot=Xddot, Z=Z, Zdot=dZ, Zddot=ddZ, meta=meta)


# ---------------------------------------------------- Reaction-diffusion


def periodic_laplacian(u: np.ndarray, h: float) -> np.ndarray:
    return (np.roll(u, 1, -1) + np.roll(u, -1, -1) + np.roll(u, 1, -2) + np.roll(u, -1, -2) - 4 * u) / h**2


def lambda_omega_rhs(d1: float, d2: float, beta: float, h: float):
    def f(state):
        u, v = state[0], state[1]
        a2 = u**2 + v**2
        du = (1 - a2) * u + beta * a2 * v
        dv = -beta * a2 * u + (1 - a2) * v
        if d1:
            du = du + d1 * periodic_laplacian(u, h)
        if d2:
            dv = dv + d2 * periodic_laplacian(v, h)
        return np.stack([du, dv])

    return f


def rd_grid(n: int = 100, half_width: float = 10.0):
    y = np.linspace(-half_width, half_width, n + 1)[:n]
    return y, y[1] - y[0]


def rd_initial_condition(n: int = 100):
    y, _ = rd_grid(n)
    Y1, Y2 = np.meshgrid(y, y, indexing="xy")
    r = np.sqrt(Y1**2 + Y2**2)
    ang = np.angle(Y1 + 1j * Y2)
    return np.stack([np.tanh(r * np.cos(ang - r)), np.tanh(r * np.sin(ang - r))])


def rk4_stability_dt(d: float, h: float) -> float:
    """Largest stable explicit RK4 step for the diffusion part (real-axis bound 2.785)."""
    if d <= 0:
        return np.inf
    return 2.785 / (8.0 * d / h**2)


def reaction_diffusion_dataset(config: GeneratorConfig = GeneratorConfig(system="rd", dt=0.05)) -> Dataset:
    n = config.rd_grid
    if n > 100:
        raise ConfigurationError("reaction-diffusion grid is limited to 100x100")
    y, h = rd_grid(n)
    dmax = max(config.d1, config.d2)
    bound = rk4_stability_dt(dmax, h)
    if config.rd_dt_internal is not None:
        if config.rd_dt_internal > bound:
            raise ConfigurationError(f"internal dt {config.rd_dt_internal} exceeds the stability bound {bound:.4g}")
        sub = max(1, int(np.ceil(config.dt / config.rd_dt_internal - 1e-12)))
    else:
        sub = max(1, int(np.ceil(config.dt / (0.5 * bound))))
    h_int = config.dt / sub
    f = lambda_omega_rhs(config.d1, config.d2, config.rd_beta, h)
    Y1, Y2 = np.meshgrid(y, y, indexing="xy")
    window = np.exp(-0.1 * (Y1**2 + Y2**2)).ravel()
    state = rd_initial_condition(n)
    m = config.rd_samples
    X = np.empty((m, n * n))
    Xdot = np.empty((m, n * n))
    for k in range(m):
        deriv = f(state)
        X[k] = window * state[0].ravel()
        Xdot[k] = window * deriv[0].ravel()
        if k + 1 < m:
            S, _ = rk4_integrate(f, state, h_int, sub)
            state = S[-1]
    rng = np.random.default_rng(config.seed)
    if config.noise_std > 0:
        X += config.noise_std * rng.standard_normal(X.shape)
        Xdot += config.noise_std * rng.standard_normal(Xdot.shape)
    meta = dict(system="rd", n_traj=1, traj_len=m, grid=n, substeps=sub, d1=config.d1, d2=config.d2,
                beta=config.rd_beta)
    return Dataset(X, Xdot, config.dt, meta=meta)


PRESETS = {
    "lorenz": GeneratorConfig(system="lorenz"),
    "lorenz_bayes": GeneratorConfig(system="lorenz", n_ics=1024, **LORENZ_BAYES),
    "pendulum": GeneratorConfig(system="pendulum", n_ics=100, steps=500, dt=0.02),
    "rd": GeneratorConfig(system="rd", dt=0.05, noise_std=1e-6),
}


def generate(config: GeneratorConfig, seed=None) -> Dataset:
    if config.system == "lorenz":
        return lorenz_dataset(config, seed)
    if config.system == "pendulum":
        return pendulum_video_dataset(config, seed)
    if config.system == "oscillator":
        return oscillator_dataset(config.n_ics, config.steps, config.dt, config.embed_dim,
                                  config.seed if seed is None else seed)
    return reaction_diffusion_dataset(config if seed is None else _with_seed(config, seed))


def _with_seed(config: GeneratorConfig, seed) -> GeneratorConfig:
    from dataclasses import replace

    return replace(config, seed=int(seed))


def split_rd(ds: Dataset, n_test: int = 1000, n_val: int = 1000, seed: int = 0):
    """Last ``n_test`` rows are test; ``n_val`` random earlier rows are validation."""
    m = ds.n_samples
    head = np.arange(m - n_test)
    rng = np.random.default_rng(seed)
    val = np.sort(rng.choice(head, size=n_val, replace=False))
    train = np.setdiff1d(head, val)
    return ds.subset(train), ds.subset(val), ds.subset(np.arange(m - n_test, m))
