"""Plain-text LP dump for cross-checking against external solvers.

Grammar, one record per line, fields separated by single spaces::

    lp <n_vars> <n_rows>                  header, first line
    c <j> <value>                         objective coefficient of variable j
    r <i> <rhs> <j>:<a> <j>:<a> ...       row i:  sum_j a * x_j = rhs
    # ...                                 comment

Rows are written in order, objective coefficients only when nonzero. Every
variable is nonnegative and the sense is minimize. Floats use repr so a
dump/load cycle reproduces the program exactly.
"""
from pathlib import Path
from typing import Union

import numpy as np

from lp.simplex import LinearProgram
from utils.errors import MmotError
from utils.logger import get_logger

logger = get_logger(__name__)


def dump_lp(lp: LinearProgram, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    with open(path, "w", encoding="utf-8") as f:
        f.write(f"lp {lp.n_vars} {lp.n_rows}\n")
        f.write("# minimize c.x subject to rows, x >= 0\n")
        for j in np.flatnonzero(lp.objective):
            f.write(f"c {j} {float(lp.objective[j])!r}\n")
        for i, (cols, coefs, rhs) in enumerate(lp.rows):
            terms = " ".join(f"{int(j)}:{float(a)!r}" for j, a in zip(cols, coefs))
            f.write(f"r {i} {float(rhs)!r} {terms}".rstrip() + "\n")

    logger.info(f"LP dump saved: {path}")
    return path


def load_lp(path: Union[str, Path]) -> LinearProgram:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    records = [line.split() for line in lines if line.strip() and not line.startswith("#")]
    if not records or records[0][0] != "lp":
        raise MmotError(f"{path}: missing 'lp' header")

    n_vars, n_rows = int(records[0][1]), int(records[0][2])
    objective = np.zeros(n_vars)
    rows = [([], [], 0.0)] * n_rows

    for number, record in enumerate(records[1:], start=2):
        tag = record[0]
        if tag == "c":
            objective[int(record[1])] = float(record[2])
        elif tag == "r":
            index, rhs = int(record[1]), float(record[2])
            cols, coefs = [], []
            for term in record[3:]:
                j, a = term.split(":")
                cols.append(int(j))
                coefs.append(float(a))
            rows[index] = (cols, coefs, rhs)
        else:
            raise MmotError(f"{path}:{number}: unknown record '{tag}'")

    return LinearProgram.from_rows(n_vars, objective, rows)
