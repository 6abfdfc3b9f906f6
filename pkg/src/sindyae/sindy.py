"""Candidate-function library, coefficient matrix and inclusion mask.

Column order of the library is fixed so that coefficient checkpoints are
portable: the constant column, then monomials of the state in graded
lexicographic order (degree 1, then 2, ...; within a degree the order of
``itertools.combinations_with_replacement``), then ``sin`` of each state
coordinate. For second-order models the state is ``(z, dz)`` concatenated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError


@dataclass(frozen=True)
class LibrarySpec:
    latent_dim: int
    poly_order: int = 3
    include_sine: bool = False
    model_order: int = 1
    include_constant: bool = True

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if not 0 <= self.poly_order <= 3:
            raise ValueError(f"poly_order must be in 0..3, got {self.poly_order}")
        if self.model_order not in (1, 2):
            raise ValueError(f"model_order must be 1 or 2, got {self.model_order}")

    @property
    def state_dim(self) -> int:
        return self.latent_dim * self.model_order

    def monomials(self) -> list[tuple[int, ...]]:
        """Variable-index tuples of every monomial of degree 1..poly_order."""
        out = []
        for deg in range(1, self.poly_order + 1):
            out.extend(combinations_with_replacement(range(self.state_dim), deg))
        return out

    def terms(self) -> list[tuple]:
        """``("const",)``, ``("poly", idx_tuple)`` or ``("sin", i)`` per column."""
        t: list[tuple] = [("const",)] if self.include_constant else []
        t += [("poly", m) for m in self.monomials()]
        if self.include_sine:
            t += [("sin", i) for i in range(self.state_dim)]
        return t

    @property
    def n_terms(self) -> int:
        return len(self.terms())

    def variable_names(self) -> list[str]:
        d = self.latent_dim
        base = ["z"] if d == 1 else [f"z{i + 1}" for i in range(d)]
        if self.model_order == 2:
            base = base + ["dz" if d == 1 else f"dz{i + 1}" for i in range(d)]
        return base

    def term_names(self) -> list[str]:
        names = self.variable_names()
        out = []
        for term in self.terms():
            if term[0] == "const":
                out.append("1")
            elif term[0] == "sin":
                out.append(f"sin({names[term[1]]})")
            else:
                parts = []
                for v in sorted(set(term[1])):
                    k = term[1].count(v)
                    parts.append(names[v] if k == 1 else f"{names[v]}^{k}")
                out.append("*".join(parts))
        return out

    def lhs_names(self) -> list[str]:
        d = self.latent_dim
        z = ["z"] if d == 1 else [f"z{i + 1}" for i in range(d)]
        if self.model_order == 1:
            return [f"d{v}/dt" for v in z]
        return [f"d²{v}/dt²" for v in z]


def build_library(state, spec: LibrarySpec):
    """Evaluate the library on each row of ``state``.

    Accepts a numpy array (returns an array) or a :class:`~sindyae.autodiff.Var`
    (returns a traced Var, differentiable with respect to the state).
    """
    traced = isinstance(state, ad.Var)
    if not traced:
        return _library_values(ad.as_array2(state, "state"), spec)
    s = state
    if s.shape[1] != spec.state_dim:
        raise DimensionError(f"library state has {s.shape[1]} columns, expected {spec.state_dim}")
    m = s.shape[0]
    cols = []
    if spec.include_constant:
        cols.append(ad.Var(np.ones((m, 1))))
    single = [ad.columns(s, [i]) for i in range(spec.state_dim)]
    cache: dict[tuple[int, ...], ad.Var] = {}
    for mono in spec.monomials():
        if len(mono) == 1:
            v = single[mono[0]]
        else:
            v = ad.mul(cache[mono[:-1]], single[mono[-1]])
        cache[mono] = v
        cols.append(v)
    if spec.include_sine:
        cols.extend(ad.sin(c) for c in single)
    return ad.hstack(cols)


def _library_values(s: np.ndarray, spec: LibrarySpec) -> np.ndarray:
    """Untraced twin of :func:`build_library` performing the same float operations."""
    if s.shape[1] != spec.state_dim:
        raise DimensionError(f"library state has {s.shape[1]} columns, expected {spec.state_dim}")
    out = np.empty((s.shape[0], spec.n_terms))
    c = 0
    if spec.include_constant:
        out[:, 0] = 1.0
        c = 1
    cache: dict[tuple[int, ...], np.ndarray] = {}
    for mono in spec.monomials():
        v = s[:, mono[0]] if len(mono) == 1 else cache[mono[:-1]] * s[:, mono[-1]]
        cache[mono] = v
        out[:, c] = v
        c += 1
    if spec.include_sine:
        out[:, c:] = np.sin(s)
    return out


@dataclass
class SindyModel:
    spec: LibrarySpec
    xi: np.ndarray
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        self.xi = ad.as_array2(self.xi, "xi")
        shape = (self.spec.n_terms, self.spec.latent_dim)
        if self.xi.shape != shape:
            raise DimensionError(f"xi has shape {self.xi.shape}, expected {shape}")
        if self.mask is None:
            self.mask = np.ones(shape)
        self.mask = ad.as_array2(self.mask, "mask")
        if self.mask.shape != shape:
            raise DimensionError(f"mask has shape {self.mask.shape}, expected {shape}")
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise ValueError("mask entries must be 0 or 1")

    @property
    def coefficients(self) -> np.ndarray:
        """Effective coefficients ``mask * xi``."""
        return self.mask * self.xi

    def copy(self) -> "SindyModel":
        return SindyModel(self.spec, self.xi.copy(), self.mask.copy())


def init_xi(spec: LibrarySpec, how: str = "ones", seed=None, std: float = 0.1) -> np.ndarray:
    shape = (spec.n_terms, spec.latent_dim)
    if how == "ones":
        return np.ones(shape)
    if how == "gaussian":
        return np.random.default_rng(seed).normal(0.0, std, size=shape)
    raise ValueError(f"unknown xi init {how!r}")


def predict_latent_derivative(theta, model: SindyModel, xi=None):
    """``theta @ (mask * xi)``; pass a traced ``xi`` Var to differentiate through it."""
    coef = ad.mul(ad.Var(model.mask), xi) if xi is not None else ad.Var(model.coefficients)
    th = theta if isinstance(theta, ad.Var) else ad.Var(ad.as_array2(theta, "theta"))
    if th.shape[1] != model.spec.n_terms:
        raise DimensionError(f"theta has {th.shape[1]} columns, model has {model.spec.n_terms} terms")
    out = ad.matmul(th, coef)
    return out if (isinstance(theta, ad.Var) or xi is not None) else out.value


def threshold_update(model: SindyModel, tau: float) -> np.ndarray:
    """New mask with entries whose |xi| is strictly below ``tau`` switched off.

    Entries already off stay off.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    keep = (model.mask == 1) & (np.abs(model.xi) >= tau)
    return keep.astype(np.float64)


def active_term_count(model: SindyModel) -> int:
    return int(model.mask.sum())


def sequential_threshold_lstsq(theta: np.ndarray, target: np.ndarray, tau: float, iters: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Classical sequentially thresholded least squares.

    Returns ``(xi, mask)``. Each round refits every output column on its
    currently active terms, then drops terms with magnitude below ``tau``.
    """
    theta = ad.as_array2(theta, "theta")
    target = ad.as_array2(target, "target")
    if theta.shape[0] != target.shape[0]:
        raise DimensionError("theta and target need the same number of rows")
    p, d = theta.shape[1], target.shape[1]
    mask = np.ones((p, d), dtype=bool)
    xi = np.zeros((p, d))
    for _ in range(iters + 1):
        for j in range(d):
            idx = np.flatnonzero(mask[:, j])
            xi[:, j] = 0.0
            if idx.size:
                xi[idx, j] = np.linalg.lstsq(theta[:, idx], target[:, j], rcond=None)[0]
        new_mask = mask & (np.abs(xi) >= tau)
        if np.array_equal(new_mask, mask):
            break
        mask = new_mask
    xi[~mask] = 0.0
    return xi, mask.astype(np.float64)


def equation_strings(model: SindyModel, display_tol: float = 1e-4, precision: int = 3) -> list[str]:
    """One readable equation per latent coordinate, e.g. ``d²z/dt² = -0.99*sin(z)``."""
    names = model.spec.term_names()
    coef = model.coefficients
    lines = []
    for j, lhs in enumerate(model.spec.lhs_names()):
        parts = []
        for i, name in enumerate(names):
            c = coef[i, j]
            if abs(c) < display_tol:
                continue
            mag = f"{abs(c):.{precision}g}"
            body = mag if name == "1" else f"{mag}*{name}"
            if not parts:
                parts.append(("-" if c < 0 else "") + body)
            else:
                parts.append(("- " if c < 0 else "+ ") + body)
        lines.append(f"{lhs} = {' '.join(parts) if parts else '0'}")
    return lines
