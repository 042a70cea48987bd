"""Datasets, design matrices and the parametric link models.

The outcome model is indexed by three links::

    gamma(x) = tanh(beta0 + beta' x)
    alpha(x) = exp(theta0 + theta' x)
    GOP(z, x) = exp(omega0 + omega' z + eta' x)

Each link may use its own covariate subset (the misspecification scenarios
rely on this), so a :class:`ModelSpec` records the columns per block.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .gop import GopPoint

__all__ = [
    "Dataset",
    "ModelSpec",
    "Design",
    "ParamVector",
    "build_design",
    "eval_links",
]


class DataError(ValueError):
    """Malformed or inadmissible data."""


def _check_binary(name, v):
    if not np.all((v == 0) | (v == 1)):
        raise DataError(f"column {name!r} must be binary (0/1)")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observed units ``(Y, A, Z, X)``.

    ``z`` is ``n x m`` (one column per quasi-instrument) and ``x`` is
    ``n x q``.  Arrays are made read-only on construction.
    """

    y: np.ndarray
    a: np.ndarray
    z: np.ndarray
    x: np.ndarray
    z_names: tuple[str, ...] = ("z",)
    x_names: tuple[str, ...] = ()

    def __post_init__(self):
        y = np.array(self.y, dtype=float).ravel()
        a = np.array(self.a, dtype=float).ravel()
        z = np.array(self.z, dtype=float)
        z = z.reshape(-1, 1) if z.ndim == 1 else z
        x = np.array(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1) if x.size else np.empty((y.size, 0))
        n = y.size
        if n < 1:
            raise DataError("dataset is empty")
        if not (a.size == n and z.shape[0] == n and x.shape[0] == n):
            raise DataError("all columns must have the same length")
        for name, v in (("y", y), ("a", a), ("z", z)):
            if np.any(np.isnan(v)):
                raise DataError(f"missing values in {name!r}")
            _check_binary(name, v)
        if not np.all(np.isfinite(x)):
            raise DataError("covariates must be finite")
        if a.sum() < 1:
            raise DataError("no treated units (a == 1)")
        z_names = tuple(self.z_names) if len(self.z_names) == z.shape[1] else tuple(
            f"z{j + 1}" for j in range(z.shape[1]))
        x_names = tuple(self.x_names) if len(self.x_names) == x.shape[1] else tuple(
            f"x{j + 1}" for j in range(x.shape[1]))
        for arr in (y, a, z, x):
            arr.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z_names", z_names)
        object.__setattr__(self, "x_names", x_names)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def m(self) -> int:
        return self.z.shape[1]

    def column(self, name: str) -> np.ndarray:
        if name in self.x_names:
            return self.x[:, self.x_names.index(name)]
        if name in self.z_names:
            return self.z[:, self.z_names.index(name)]
        raise KeyError(f"unknown column {name!r}")

    def covariates(self, names) -> np.ndarray:
        names = list(names)
        missing = [c for c in names if c not in self.x_names]
        if missing:
            raise KeyError(f"unknown covariate column(s): {missing}")
        idx = [self.x_names.index(c) for c in names]
        return self.x[:, idx]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.y[rows], self.a[rows], self.z[rows], self.x[rows],
                       self.z_names, self.x_names)

    def with_qiv(self, name: str) -> "Dataset":
        """Copy restricted to a single quasi-instrument column."""
        j = self.z_names.index(name)
        return Dataset(self.y, self.a, self.z[:, [j]], self.x, (name,), self.x_names)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.y, self.a, self.z, self.x):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(repr((self.z_names, self.x_names)).encode())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class ModelSpec:
    """Covariate columns used by each working model.

    ``None`` means "every covariate in the dataset".  ``pz``/``pa`` are the
    logistic models for ``P(Z=1|X)`` and ``P(A=1|Z,X)``.  ``gop_interactions``
    lists ``(z_name, x_name)`` pairs added as product terms to the GOP design.
    """

    gamma: tuple[str, ...] | None = None
    alpha: tuple[str, ...] | None = None
    gop: tuple[str, ...] | None = None
    pz: tuple[str, ...] | None = None
    pa: tuple[str, ...] | None = None
    gop_interactions: tuple[tuple[str, str], ...] = ()
    center: bool = False

    def columns(self, block: str, d: Dataset) -> tuple[str, ...]:
        cols = getattr(self, block)
        return tuple(d.x_names) if cols is None else tuple(cols)


def _prepend_one(x):
    return np.column_stack([np.ones(x.shape[0]), x])


@dataclass(frozen=True, eq=False)
class Design:
    """Design matrices for the three outcome links.

    ``gop`` carries an intercept (omega0), the QIV columns (omega) and the
    covariate columns (eta), in that order.
    """

    gamma: np.ndarray
    alpha: np.ndarray
    gop: np.ndarray
    names: dict = field(default_factory=dict)
    m: int = 1
    centers: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.gamma.shape[0]

    @property
    def layout(self) -> tuple[int, int, int, int]:
        """Block sizes ``(beta, theta, omega incl. omega0, eta)``."""
        return (self.gamma.shape[1], self.alpha.shape[1], 1 + self.m,
                self.gop.shape[1] - 1 - self.m)

    @property
    def k(self) -> int:
        return self.gamma.shape[1] + self.alpha.shape[1] + self.gop.shape[1]

    def slices(self):
        kb, kt, _, _ = self.layout
        kg = self.gop.shape[1]
        return slice(0, kb), slice(kb, kb + kt), slice(kb + kt, kb + kt + kg)

    def with_z(self, zval: float) -> "Design":
        """Copy with every QIV column (and interactions) set to ``zval``."""
        g = self.gop.copy()
        g[:, 1:1 + self.m] = zval
        inter = getattr(self, "_interactions", ())
        for col, xv in inter:
            g[:, col] = zval * xv
        out = Design(self.gamma, self.alpha, g, self.names, self.m, self.centers)
        object.__setattr__(out, "_interactions", inter)
        return out

    def links(self, phi) -> GopPoint:
        phi = phi.to_array() if isinstance(phi, ParamVector) else np.asarray(phi, dtype=float)
        sb, st, so = self.slices()
        return GopPoint(np.tanh(self.gamma @ phi[sb]), np.exp(self.alpha @ phi[st]),
                        np.exp(self.gop @ phi[so]))


def build_design(d: Dataset, spec: ModelSpec | None = None) -> Design:
    """Deterministic design matrices for the gamma, alpha and GOP links."""
    spec = spec or ModelSpec()
    names = {}
    centers = {}
    mats = {}
    for block in ("gamma", "alpha", "gop"):
        cols = spec.columns(block, d)
        x = d.covariates(cols)
        if spec.center and x.shape[1]:
            mu = x.mean(axis=0)
            centers[block] = dict(zip(cols, mu.tolist()))
            x = x - mu
        mats[block] = x
        names[block] = cols
    gop_cols = ["(omega0)", *d.z_names, *names["gop"]]
    blocks = [np.ones((d.n, 1)), d.z, mats["gop"]]
    inter = []
    for zn, xn in spec.gop_interactions:
        if zn not in d.z_names:
            raise KeyError(f"unknown QIV column {zn!r}")
        xv = d.covariates([xn])[:, 0]
        inter.append((len(gop_cols), xv))
        gop_cols.append(f"{zn}:{xn}")
        blocks.append((d.column(zn) * xv)[:, None])
    gop = np.column_stack(blocks)
    names = {
        "beta": ("(intercept)", *names["gamma"]),
        "theta": ("(intercept)", *names["alpha"]),
        "gop": tuple(gop_cols),
    }
    design = Design(_prepend_one(mats["gamma"]), _prepend_one(mats["alpha"]), gop, names, d.m, centers)
    object.__setattr__(design, "_interactions", tuple(inter))
    return design


@dataclass(frozen=True)
class ParamVector:
    """All outcome-model parameters ``phi = (beta, theta, omega0, omega, eta)``."""

    beta: np.ndarray
    theta: np.ndarray
    omega0: float
    omega: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        for name in ("beta", "theta", "omega", "eta"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        object.__setattr__(self, "omega0", float(self.omega0))
        if not np.all(np.isfinite(self.to_array())):
            raise ValueError("parameters must be finite")

    @property
    def k(self) -> int:
        return self.beta.size + self.theta.size + 1 + self.omega.size + self.eta.size

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.beta, self.theta, [self.omega0], self.omega, self.eta])

    @classmethod
    def from_array(cls, vec, layout) -> "ParamVector":
        kb, kt, ko, ke = layout
        vec = np.asarray(vec, dtype=float)
        if vec.size != kb + kt + ko + ke:
            raise ValueError(f"expected {kb + kt + ko + ke} parameters, got {vec.size}")
        i = kb + kt
        return cls(vec[:kb], vec[kb:i], vec[i], vec[i + 1:i + ko], vec[i + ko:])

    @classmethod
    def zeros(cls, layout) -> "ParamVector":
        return cls.from_array(np.zeros(sum(layout)), layout)


def eval_links(phi: ParamVector, x_row, z_row) -> GopPoint:
    """Evaluate ``(gamma, alpha, GOP)`` at covariates ``x`` and QIVs ``z``.

    Assumes the three links share the same covariates (the plain model).
    Rows or stacked matrices are both accepted.
    """
    x = np.asarray(x_row, dtype=float)
    z = np.atleast_1d(np.asarray(z_row, dtype=float))
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] != phi.beta.size - 1 or x.shape[-1] != phi.theta.size - 1 \
            or x.shape[-1] != phi.eta.size or z.shape[-1] != phi.omega.size:
        raise ValueError("dimension mismatch between phi and (x, z)")
    gamma = np.tanh(phi.beta[0] + x @ phi.beta[1:])
    alpha = np.exp(phi.theta[0] + x @ phi.theta[1:])
    gop = np.exp(phi.omega0 + z @ phi.omega + x @ phi.eta)
    return GopPoint(gamma, alpha, gop)
