from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

from utils.errors import MmotError


class CostKind(str, Enum):
    NEG_NORM = "neg_norm"
    POS_NORM = "pos_norm"
    MAX_NORM_SIGNED = "max_norm_signed"
    NEG_PRODUCT_PAIR = "neg_product_pair"
    COORDINATE_ABS = "coordinate_abs"
    TABLE = "table"


class CostSpec(BaseModel):
    """Transport cost c(x, y) on R^d x R^d.

    Coordinates are 0-based: ``pair=(0, 1)`` is -y_1 y_2 and
    ``coordinate=0`` is |x_1 - y_1|.
    """
    kind: CostKind
    p: Optional[float] = Field(None, ge=1, description="Exponent of the l^p norm for norm kinds")
    sign: Optional[int] = Field(None, description="+1 or -1 for max_norm_signed")
    pair: Optional[tuple[int, int]] = Field(None, description="Coordinates (i, j) for neg_product_pair")
    coordinate: Optional[int] = Field(None, ge=0, description="Coordinate for coordinate_abs")
    table: Optional[list[list[float]]] = Field(None, description="Dense |X| x |Y| cost values")

    model_config = {"frozen": True}

    @model_validator(mode="after")
    def check_kind_fields(self):
        if self.kind in (CostKind.NEG_NORM, CostKind.POS_NORM):
            if self.p is None or not np.isfinite(self.p):
                raise ValueError("norm kinds need a finite p >= 1")
        elif self.kind == CostKind.MAX_NORM_SIGNED:
            if self.sign not in (-1, 1):
                raise ValueError("max_norm_signed needs sign = +1 or -1")
        elif self.kind == CostKind.NEG_PRODUCT_PAIR:
            if self.pair is None or self.pair[0] == self.pair[1] or min(self.pair) < 0:
                raise ValueError("neg_product_pair needs two distinct coordinates")
        elif self.kind == CostKind.COORDINATE_ABS:
            if self.coordinate is None:
                raise ValueError("coordinate_abs needs a coordinate")
        elif self.kind == CostKind.TABLE:
            if not self.table:
                raise ValueError("table cost needs a table")
            if len({len(row) for row in self.table}) != 1:
                raise ValueError("table rows differ in length")
        return self

    @classmethod
    def neg_norm(cls, p: float = 2.0) -> "CostSpec":
        return cls(kind=CostKind.NEG_NORM, p=p)

    @classmethod
    def pos_norm(cls, p: float = 2.0) -> "CostSpec":
        return cls(kind=CostKind.POS_NORM, p=p)

    @classmethod
    def max_norm(cls, sign: int = 1) -> "CostSpec":
        return cls(kind=CostKind.MAX_NORM_SIGNED, sign=sign)

    @classmethod
    def neg_product(cls, i: int = 0, j: int = 1) -> "CostSpec":
        return cls(kind=CostKind.NEG_PRODUCT_PAIR, pair=(i, j))

    @classmethod
    def coordinate_abs(cls, i: int = 0) -> "CostSpec":
        return cls(kind=CostKind.COORDINATE_ABS, coordinate=i)

    @classmethod
    def from_table(cls, values) -> "CostSpec":
        return cls(kind=CostKind.TABLE, table=np.asarray(values, dtype=float).tolist())

    @property
    def strictly_convex(self) -> bool:
        """True for the l^p norms with 1 < p < inf (strictly convex, smooth off the diagonal)."""
        return self.kind in (CostKind.NEG_NORM, CostKind.POS_NORM) and self.p is not None and 1 < self.p < np.inf

    @property
    def is_table(self) -> bool:
        return self.kind == CostKind.TABLE

    def check_dimension(self, d: int) -> None:
        if self.kind == CostKind.NEG_PRODUCT_PAIR and max(self.pair) >= d:
            raise MmotError(f"cost pair {self.pair} out of range for d={d}")
        if self.kind == CostKind.COORDINATE_ABS and self.coordinate >= d:
            raise MmotError(f"cost coordinate {self.coordinate} out of range for d={d}")

    def evaluate(self, x, y) -> np.ndarray:
        """c(x, y) for broadcastable arrays whose last axis is the coordinate axis."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind in (CostKind.NEG_NORM, CostKind.POS_NORM):
            value = np.sum(np.abs(x - y) ** self.p, axis=-1) ** (1.0 / self.p)
            return value if self.kind == CostKind.POS_NORM else -value
        if self.kind == CostKind.MAX_NORM_SIGNED:
            return self.sign * np.max(np.abs(x - y), axis=-1)
        if self.kind == CostKind.NEG_PRODUCT_PAIR:
            i, j = self.pair
            return -y[..., i] * y[..., j] + 0.0 * x[..., 0]
        if self.kind == CostKind.COORDINATE_ABS:
            k = self.coordinate
            return np.abs(x[..., k] - y[..., k])
        raise MmotError("table costs are only defined on their grid")

    def matrix(self, x_grid: np.ndarray, y_grid: np.ndarray) -> np.ndarray:
        x_grid = np.asarray(x_grid, dtype=float)
        y_grid = np.asarray(y_grid, dtype=float)
        if self.kind == CostKind.TABLE:
            values = np.asarray(self.table, dtype=float)
            if values.shape != (x_grid.shape[0], y_grid.shape[0]):
                raise MmotError(
                    f"table shape {values.shape} does not match grids "
                    f"({x_grid.shape[0]}, {y_grid.shape[0]})"
                )
            return values
        return self.evaluate(x_grid[:, None, :], y_grid[None, :, :])

    def label(self) -> str:
        if self.kind in (CostKind.NEG_NORM, CostKind.POS_NORM):
            return f"{self.kind.value}(p={self.p:g})"
        if self.kind == CostKind.MAX_NORM_SIGNED:
            return f"{self.kind.value}({self.sign:+d})"
        if self.kind == CostKind.NEG_PRODUCT_PAIR:
            return f"{self.kind.value}{tuple(self.pair)}"
        if self.kind == CostKind.COORDINATE_ABS:
            return f"{self.kind.value}({self.coordinate})"
        return self.kind.value
