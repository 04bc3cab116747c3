"""Builtin model zoo.

Names accepted by :func:`get_model`:

* ``additive_eq2`` -- five additive terms mixing a ramp, a cube, an
  exponential decay, a bounded rational term and a square root.
* ``interaction_eq3`` -- eight main effects plus a product, a
  product-with-square, a pairwise max and an absolute-sum interaction.
* ``product`` -- the plain product of all inputs (``arity`` required;
  ``productN`` is accepted as shorthand for ``product`` with arity N).
* ``poly_interaction`` -- b0 + b1*x1 + b2*x2 + b12*x1*x2^2 (``beta``
  required, four coefficients).
* ``max2`` -- max(x1, x2).
* ``relu_sum2`` -- max(x1 + x2, 0).
"""

from __future__ import annotations

import re

from .errors import UnknownModelError
from .expr import Bin, Const, Expr, ExprModel, Neg, parse_expression

__all__ = ["get_model", "builtin_names", "ADDITIVE_EQ2_SOURCE", "INTERACTION_EQ3_SOURCE"]

ADDITIVE_EQ2_SOURCE = "max(0, x1) + x2^3 + exp(-2*x3) + (1 + abs(x4))^-1 + sqrt(abs(x5))"

INTERACTION_EQ3_SOURCE = (
    "x1 + x2 + x3 + x4 + x5 + x6 + x7 + x8"
    " + x1*x2 + 0.5*x3*x4^2 + 2*max(x5, x6) + 1.5*abs(x7 + x8)"
)

_FIXED = {
    "additive_eq2": (5, ADDITIVE_EQ2_SOURCE),
    "interaction_eq3": (8, INTERACTION_EQ3_SOURCE),
    "max2": (2, "max(x1, x2)"),
    "relu_sum2": (2, "max(x1 + x2, 0)"),
}

_PRODUCT_RE = re.compile(r"^product([1-9][0-9]*)?$")


def _const(v: float) -> Expr:
    # negative coefficients as Neg(Const) so printing round-trips structurally
    return Const(float(v)) if v >= 0 else Neg(Const(float(-v)))


def builtin_names() -> list[str]:
    return sorted(_FIXED) + ["product", "poly_interaction"]


def get_model(name: str, *, arity: int | None = None, beta=None) -> ExprModel:
    """Construct a builtin model by name.

    ``arity`` applies to ``product`` only; ``beta`` (four coefficients)
    applies to ``poly_interaction`` only.
    """
    if name in _FIXED:
        p, source = _FIXED[name]
        return ExprModel.from_source(name, p, source)

    m = _PRODUCT_RE.match(name)
    if m:
        if m.group(1) is not None:
            if arity is not None and arity != int(m.group(1)):
                raise UnknownModelError(
                    f"conflicting arity for {name!r}: suffix says {m.group(1)}, got arity={arity}"
                )
            arity = int(m.group(1))
        if arity is None:
            raise UnknownModelError("model 'product' needs an arity (e.g. product3)")
        if arity < 1:
            raise UnknownModelError(f"product arity must be >= 1, got {arity}")
        source = "*".join(f"x{i}" for i in range(1, arity + 1))
        return ExprModel(f"product{arity}", arity, parse_expression(source, arity))

    if name == "poly_interaction":
        if beta is None:
            raise UnknownModelError(
                "model 'poly_interaction' needs beta=(b0, b1, b2, b12)"
            )
        beta = tuple(float(b) for b in beta)
        if len(beta) != 4:
            raise UnknownModelError(
                f"poly_interaction takes 4 coefficients, got {len(beta)}"
            )
        b0, b1, b2, b12 = beta
        body = Bin(
            "+",
            Bin(
                "+",
                Bin("+", _const(b0), Bin("*", _const(b1), parse_expression("x1", 2))),
                Bin("*", _const(b2), parse_expression("x2", 2)),
            ),
            Bin("*", _const(b12), parse_expression("x1*x2^2", 2)),
        )
        label = "poly_interaction(" + ", ".join(repr(b) for b in beta) + ")"
        return ExprModel(label, 2, body)

    raise UnknownModelError(
        f"unknown builtin model {name!r}; known names: {', '.join(builtin_names())}"
    )
