"""Environment descriptors shared by the simulators and the learning modules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InvalidStateError(ValueError):
    """Raised when a state vector is non-finite or has the wrong shape."""


@dataclass(frozen=True)
class StateDim:
    name: str
    unit: str
    low: float
    high: float

    @property
    def width(self) -> float:
        """Valid range size |X_i| of this dimension."""
        return self.high - self.low


@dataclass(frozen=True)
class ParamSpec:
    """One physical parameter: ground truth, nominal scale and box bounds."""

    name: str
    unit: str
    true_value: float
    scale: float
    lower: float
    upper: float


@dataclass(frozen=True)
class ActionSpace:
    """Either a discrete set of labelled actions or a bounded box.

    Actions are always carried around as float vectors of length ``dim``;
    a discrete action is a length-1 vector holding the index.
    """

    kind: str  # "discrete" | "continuous"
    labels: tuple[str, ...] = ()
    low: tuple[float, ...] = ()
    high: tuple[float, ...] = ()

    @property
    def dim(self) -> int:
        return 1 if self.kind == "discrete" else len(self.low)

    @property
    def n(self) -> int:
        return len(self.labels)

    def contains(self, action) -> bool:
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if a.shape != (self.dim,) or not np.all(np.isfinite(a)):
            return False
        if self.kind == "discrete":
            return float(a[0]).is_integer() and 0 <= a[0] < self.n
        return bool(np.all(a >= np.asarray(self.low)) and np.all(a <= np.asarray(self.high)))


@dataclass(frozen=True)
class EnvSpec:
    name: str
    dims: tuple[StateDim, ...]
    supervised: tuple[int, ...]
    actions: ActionSpace
    dt: float
    params: tuple[ParamSpec, ...]
    image_shape: tuple[int, int]
    init_low: tuple[float, ...]
    init_high: tuple[float, ...]
    # False when the simulator's parameters must not be used as a reference
    # for evaluating a fitted model (the bicycle stands in for a real car).
    reference_known: bool = True

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if any(d.width <= 0 for d in self.dims):
            raise ValueError("state ranges must be strictly positive")
        if not self.supervised or not set(self.supervised) <= set(range(len(self.dims))):
            raise ValueError("supervised dims must be a nonempty subset of the state dims")
        if not 4 <= len(self.params) <= 10:
            raise ValueError("an environment carries between 4 and 10 physical parameters")

    @property
    def state_dim(self) -> int:
        return len(self.dims)

    @property
    def n_supervised(self) -> int:
        return len(self.supervised)

    @property
    def low(self) -> np.ndarray:
        return np.array([d.low for d in self.dims])

    @property
    def high(self) -> np.ndarray:
        return np.array([d.high for d in self.dims])

    @property
    def widths(self) -> np.ndarray:
        return np.array([d.width for d in self.dims])

    @property
    def supervised_low(self) -> np.ndarray:
        return self.low[list(self.supervised)]

    @property
    def supervised_high(self) -> np.ndarray:
        return self.high[list(self.supervised)]

    @property
    def supervised_widths(self) -> np.ndarray:
        return self.widths[list(self.supervised)]

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.params)

    @property
    def true_params(self) -> np.ndarray:
        return np.array([p.true_value for p in self.params])

    @property
    def param_scales(self) -> np.ndarray:
        return np.array([p.scale for p in self.params])

    @property
    def param_lower(self) -> np.ndarray:
        return np.array([p.lower for p in self.params])

    @property
    def param_upper(self) -> np.ndarray:
        return np.array([p.upper for p in self.params])

    def validate_state(self, state) -> np.ndarray:
        x = np.asarray(state, dtype=np.float64)
        if x.shape != (self.state_dim,):
            raise InvalidStateError(
                f"{self.name}: expected state of shape ({self.state_dim},), got {x.shape}"
            )
        if not np.all(np.isfinite(x)):
            bad = [self.dims[i].name for i in np.flatnonzero(~np.isfinite(x))]
            raise InvalidStateError(f"{self.name}: non-finite state entries {bad}")
        return x

    def clamp(self, state: np.ndarray) -> np.ndarray:
        return np.clip(state, self.low, self.high)
