"""State, time-grid, and path containers.

States are either vectors, symmetric matrices (stored as the upper
triangle, row-major), or the absorbing Cemetery point.  Paths store
their states as one (T, d) array plus an alive mask; dead entries are
Cemetery when viewed through the State API.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

VECTOR = "vector"
SYMMATRIX = "symmatrix"
CEMETERY = "cemetery"


@dataclass(frozen=True)
class State:
    kind: str
    data: np.ndarray
    dim_info: tuple

    def __post_init__(self):
        object.__setattr__(self, "data", np.asarray(self.data, dtype=float))
        if self.kind == CEMETERY:
            if self.data.size != 0:
                raise InvalidArgumentError("Cemetery carries no data")
        elif self.kind == VECTOR:
            if self.data.shape != (self.dim_info[0],):
                raise InvalidArgumentError("vector data does not match dim_info")
        elif self.kind == SYMMATRIX:
            m = self.dim_info[0]
            if self.data.shape != (m * (m + 1) // 2,):
                raise InvalidArgumentError("symmatrix data must hold m(m+1)/2 entries")
        else:
            raise InvalidArgumentError("unknown state kind %r" % (self.kind,))

    @property
    def is_cemetery(self) -> bool:
        return self.kind == CEMETERY

    def matrix(self) -> np.ndarray:
        """Full symmetric matrix for SymMatrix states."""
        if self.kind != SYMMATRIX:
            raise InvalidArgumentError("matrix() requires a SymMatrix state")
        return sym_unpack(self.data, self.dim_info[0])


CEMETERY_STATE = State(CEMETERY, np.empty(0), ())


def vector_state(x) -> State:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return State(VECTOR, x, (x.size,))


def symmatrix_state(mat) -> State:
    mat = np.asarray(mat, dtype=float)
    if mat.ndim == 1:
        m = int(round((np.sqrt(8 * mat.size + 1) - 1) / 2))
        if m * (m + 1) // 2 != mat.size:
            raise InvalidArgumentError("packed length is not triangular")
        return State(SYMMATRIX, mat, (m, m))
    if mat.shape[0] != mat.shape[1] or not np.allclose(mat, mat.T):
        raise InvalidArgumentError("symmatrix_state needs a symmetric square matrix")
    return State(SYMMATRIX, sym_pack(mat), (mat.shape[0],) * 2)


def sym_pack(mat: np.ndarray) -> np.ndarray:
    """Upper triangle, row-major: (0,0), (0,1), ..., (1,1), (1,2), ..."""
    m = mat.shape[-1]
    iu = np.triu_indices(m)
    return np.asarray(mat, dtype=float)[..., iu[0], iu[1]]

def sym_unpack(packed: np.ndarray, m: int) -> np.ndarray:
    packed = np.asarray(packed, dtype=float)
    iu = np.triu_indices(m)
    out = np.zeros(packed.shape[:-1] + (m, m))
    out[..., iu[0], iu[1]] = packed
    out[..., iu[1], iu[0]] = packed
    return out


def eval_or_zero(f, state: State) -> float:
    """Evaluate f at a state; Cemetery maps to 0 by convention."""
    if state.is_cemetery:
        return 0.0
    return float(f(state.data))


@dataclass(frozen=True)
class TimeGrid:
    t: np.ndarray
    step: float | None = None  # uniform step, or None for explicit grids

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        object.__setattr__(self, "t", t)
        if t.ndim != 1 or t.size < 1:
            raise InvalidArgumentError("grid must be a 1-d array of times")
        if not np.isfinite(t).all():
            raise InvalidArgumentError("grid times must be finite")
        if t[0] != 0.0:
            raise InvalidArgumentError("grid must start at 0")
        if t.size > 1 and not (np.diff(t) > 0).all():
            raise InvalidArgumentError("grid times must be strictly increasing")

    def __len__(self):
        return self.t.size


def make_grid(t_end: float, dt: float) -> TimeGrid:
    """Uniform grid 0, dt, 2 dt, ... whose final point is >= t_end."""
    if not (np.isfinite(t_end) and np.isfinite(dt)):
        raise InvalidArgumentError("t_end and dt must be finite")
    if t_end <= 0 or dt <= 0 or dt > t_end:
        raise InvalidArgumentError("need 0 < dt <= t_end")
    n = max(1, int(np.ceil(t_end / dt - 1e-9)))
    return TimeGrid(np.arange(n + 1) * dt, step=dt)


@dataclass
class Path:
    """Single trajectory on a grid.

    values[k] is the numeric state at grid.t[k]; entries with alive[k]
    False are Cemetery (the numbers there are frozen bookkeeping and are
    never exposed as states).
    """

    grid: TimeGrid
    values: np.ndarray          # (T, d)
    alive: np.ndarray           # (T,) bool, monotone nonincreasing
    kind: str = VECTOR
    dim_info: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.alive = np.asarray(self.alive, dtype=bool)
        T = len(self.grid)
        if self.values.shape[0] != T or self.alive.shape != (T,):
            raise InvalidArgumentError("values/alive length must match the grid")
        if not self.alive[0]:
            raise InvalidArgumentError("paths must start alive")
        if np.any(self.alive[1:] & ~self.alive[:-1]):
            raise InvalidArgumentError("paths may not leave Cemetery")
        if not self.dim_info:
            self.dim_info = (self.values.shape[1],)

    def state_at(self, k: int) -> State:
        if not self.alive[k]:
            return CEMETERY_STATE
        return State(self.kind, self.values[k], self.dim_info)

    @property
    def states(self) -> list:
        return [self.state_at(k) for k in range(len(self.grid))]

    @property
    def lifetime(self) -> float:
        """First grid time in Cemetery, or +inf if the path survives."""
        dead = ~self.alive
        if not dead.any():
            return np.inf
        return float(self.grid.t[int(np.argmax(dead))])


@dataclass
class PathBatch:
    """Vectorized bundle of paths sharing one grid; axis 0 is the path."""

    grid: TimeGrid
    values: np.ndarray          # (B, T, d)
    alive: np.ndarray           # (B, T) bool
    kind: str = VECTOR
    dim_info: tuple = field(default_factory=tuple)

    def __len__(self):
        return self.values.shape[0]

    def path(self, i: int) -> Path:
        return Path(self.grid, self.values[i], self.alive[i], self.kind, self.dim_info)
