"""Closed-form profile utilities"""
from functools import lru_cache
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import sympy
from sympy import Integral, Symbol, lambdify, sympify

X = Symbol("x", real=True)


def parse_profile(text: str, constants: Optional[Dict[str, float]] = None) -> sympy.Expr:
    """
    Parse a closed-form profile in the variable x.

    Args:
        text: Expression such as "1 + A*cos(2*pi*x)"
        constants: Values substituted for named constants

    Returns:
        Sympy expression depending on x only
    """
    return _parse(text, tuple(sorted((constants or {}).items())))


@lru_cache(maxsize=128)
def _parse(text: str, constants: Tuple[Tuple[str, float], ...]) -> sympy.Expr:
    local = {"x": X, "pi": sympy.pi, "e": sympy.E}
    local.update({name: sympy.Float(value) for name, value in constants})
    try:
        expr = sympify(text, locals=local)
    except (sympy.SympifyError, SyntaxError, TypeError) as e:
        raise ValueError(f"cannot parse profile {text!r}: {e}") from e
    unknown = expr.free_symbols - {X}
    if unknown:
        names = ", ".join(sorted(str(s) for s in unknown))
        raise ValueError(f"profile {text!r} uses undefined constants: {names}")
    return expr


def profile_function(expr: sympy.Expr) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorised numpy callable for a parsed profile"""
    f = lambdify(X, expr, "numpy")

    def evaluate(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(f(x), dtype=float), x.shape).copy()

    return evaluate


def exact_antiderivative(expr: sympy.Expr) -> Optional[Callable[[np.ndarray], np.ndarray]]:
    """Antiderivative as a numpy callable, or None when sympy leaves an unevaluated integral"""
    try:
        primitive = sympy.integrate(expr, X)
    except Exception:
        return None
    if primitive.has(Integral):
        return None
    return profile_function(primitive)
