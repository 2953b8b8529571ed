"""Exact rational linear feasibility via phase-1 simplex.

A small self-contained simplex over `fractions.Fraction`, used as an
independent oracle: when the SMT solver declares an ownership system
infeasible, the linear relaxation of that system is re-checked here with
exact arithmetic. All variables are implicitly non-negative, which matches
ownership quantities. Bland's rule keeps the pivoting cycle-free.

This is a feasibility checker, not an optimizer: it answers "is there any
assignment" and produces one witness when there is.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

ZERO = Fraction(0)
ONE = Fraction(1)


@dataclass(frozen=True, slots=True)
class LinearConstraint:
    """sum(coeff * var) REL const, with REL one of <=, >=, =."""

    coeffs: tuple[tuple[str, Fraction], ...]
    rel: str
    const: Fraction

    def __post_init__(self) -> None:
        if self.rel not in ("<=", ">=", "="):
            raise ValueError(f"bad relation {self.rel!r}")

    def describe(self) -> str:
        lhs = " + ".join(
            (f"{c}*{v}" if c != 1 else v) for v, c in self.coeffs
        ) or "0"
        return f"{lhs} {self.rel} {self.const}"


def find_feasible(
    constraints: list[LinearConstraint],
    variables: list[str],
) -> dict[str, Fraction] | None:
    """Finds a non-negative assignment satisfying every constraint.

    Returns None when the system is infeasible. Variables not mentioned in
    `variables` must not appear in the constraints.
    """
    index = {v: i for i, v in enumerate(variables)}
    n = len(variables)

    # Normalize into equalities with non-negative right-hand sides, adding
    # slack columns for inequalities and artificial columns where the slack
    # cannot serve as an initial basic variable.
    rows: list[list[Fraction]] = []
    rhs: list[Fraction] = []
    slack_kind: list[str] = []  # "slack" | "surplus" | "none" per row
    for con in constraints:
        row = [ZERO] * n
        for var, coeff in con.coeffs:
            if var not in index:
                raise ValueError(f"unknown variable {var!r}")
            row[index[var]] += Fraction(coeff)
        b = Fraction(con.const)
        rel = con.rel
        if b < 0:
            row = [-c for c in row]
            b = -b
            rel = {"<=": ">=", ">=": "<=", "=": "="}[rel]
        rows.append(row)
        rhs.append(b)
        slack_kind.append(
            {"<=": "slack", ">=": "surplus", "=": "none"}[rel]
        )

    m = len(rows)
    n_slack = sum(1 for kind in slack_kind if kind != "none")
    total = n + n_slack + m  # worst case: one artificial per row

    tableau: list[list[Fraction]] = []
    basis: list[int] = []
    art_cols: list[int] = []
    slack_at = n
    art_at = n + n_slack
    for i in range(m):
        row = rows[i] + [ZERO] * (total - n)
        kind = slack_kind[i]
        if kind == "slack":
            row[slack_at] = ONE
            basis_col = slack_at
            slack_at += 1
        elif kind == "surplus":
            row[slack_at] = -ONE
            slack_at += 1
            row[art_at] = ONE
            basis_col = art_at
            art_cols.append(art_at)
            art_at += 1
        else:
            row[art_at] = ONE
            basis_col = art_at
            art_cols.append(art_at)
            art_at += 1
        tableau.append(row)
        basis.append(basis_col)

    used = art_at
    art_set = set(art_cols)

    # Phase-1 objective: minimize the sum of artificial variables. Keep the
    # objective row in "reduced" form relative to the current basis.
    obj = [ZERO] * used
    obj_val = ZERO
    for col in art_cols:
        obj[col] = ONE
    for i, col in enumerate(basis):
        if col in art_set:
            for j in range(used):
                obj[j] -= tableau[i][j]
            obj_val -= rhs[i]

    def pivot(row_i: int, col_j: int) -> None:
        nonlocal obj_val
        piv = tableau[row_i][col_j]
        inv = ONE / piv
        tableau[row_i] = [c * inv for c in tableau[row_i]]
        rhs[row_i] *= inv
        for i in range(m):
            if i == row_i:
                continue
            factor = tableau[i][col_j]
            if factor == 0:
                continue
            prow = tableau[row_i]
            tableau[i] = [
                tableau[i][j] - factor * prow[j] for j in range(used)
            ]
            rhs[i] -= factor * rhs[row_i]
        factor = obj[col_j]
        if factor != 0:
            prow = tableau[row_i]
            for j in range(used):
                obj[j] -= factor * prow[j]
            obj_val -= factor * rhs[row_i]
        basis[row_i] = col_j

    while True:
        # Bland's rule: first column that can improve the objective.
        entering = next(
            (j for j in range(used) if obj[j] < 0), None
        )
        if entering is None:
            break
        # Ratio test; ties go to the smallest basis column (Bland again).
        best: tuple[Fraction, int] | None = None
        best_row = -1
        for i in range(m):
            coeff = tableau[i][entering]
            if coeff > 0:
                ratio = rhs[i] / coeff
                key = (ratio, basis[i])
                if best is None or key < best:
                    best = key
                    best_row = i
        if best_row < 0:
            # Unbounded phase-1 objective cannot happen (bounded below by 0),
            # but guard against it to avoid silent loops.
            raise RuntimeError("phase-1 simplex became unbounded")
        pivot(best_row, entering)

    if -obj_val != 0:  # objective row tracks -value; feasible iff minimum 0
        return None

    solution = {v: ZERO for v in variables}
    for i, col in enumerate(basis):
        if col < n:
            solution[variables[col]] = rhs[i]
        elif col in art_set and rhs[i] != 0:
            return None  # degenerate artificial left basic at nonzero level
    return solution


def check_assignment(
    constraints: list[LinearConstraint],
    assignment: dict[str, Fraction],
) -> list[LinearConstraint]:
    """Returns the constraints an assignment violates (empty when it fits)."""
    bad = []
    for con in constraints:
        total = sum(
            (Fraction(c) * assignment.get(v, ZERO) for v, c in con.coeffs),
            ZERO,
        )
        ok = (
            total <= con.const if con.rel == "<=" else
            total >= con.const if con.rel == ">=" else
            total == con.const
        )
        if not ok:
            bad.append(con)
    return bad
