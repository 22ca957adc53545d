"""Control system definitions, parsing and standing-hypothesis checks.

Two kinds of systems are supported, both with the control box ``[-1, 1]^m``:

* :class:`LinearSystem` -- ``x' = A x + B u`` with ``2 <= n <= 5``;
* :class:`NonlinearSystem2D` -- ``x' = F(x) + sum_i G_i(x) u_i`` in the plane,
  with polynomial ``F`` and ``G_i`` so that Jacobians are exact.

The JSON schema is::

    {"kind": "linear", "A": [[...], ...], "B": [[...], ...]}
    {"kind": "nonlinear2d",
     "F": [comp1, comp2],
     "G": [[comp1, comp2], ...]}      # one entry per control column

where each polynomial component is a list of ``{"e": [e1, e2], "c": coef}``.
"""
from dataclasses import dataclass, field
import json
import math

import numpy as np

from . import linalg

MAX_DEGREE = 6
DEFAULT_LIPSCHITZ_BOX = ((-2.0, 2.0), (-2.0, 2.0))


class SchemaError(ValueError):
    """Raised when a system document does not follow the schema."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class NotNormalError(ValueError):
    """An operation that needs a normal pair ``(A, b)`` got a degenerate one."""


# ---------------------------------------------------------------------------
# polynomials


def _canon_terms(terms, path="poly"):
    acc = {}
    for k, (e, c) in enumerate(terms):
        e1, e2 = int(e[0]), int(e[1])
        c = float(c)
        if e1 < 0 or e2 < 0:
            raise SchemaError(f"{path}[{k}].e", "exponents must be nonnegative")
        if e1 + e2 > MAX_DEGREE:
            raise SchemaError(f"{path}[{k}].e", f"total degree {e1 + e2} exceeds {MAX_DEGREE}")
        if not math.isfinite(c):
            raise SchemaError(f"{path}[{k}].c", "coefficient must be finite")
        acc[(e1, e2)] = acc.get((e1, e2), 0.0) + c
    return tuple(sorted((e, c) for e, c in acc.items() if c != 0.0))


@dataclass(frozen=True)
class PolyVectorField:
    """Planar polynomial vector field, one term list per output component.

    Each component is a tuple of ``((e1, e2), coef)`` meaning
    ``coef * x1**e1 * x2**e2``; like terms are merged at construction.
    """

    components: tuple

    def __post_init__(self):
        comps = tuple(_canon_terms(c, f"component[{i}]") for i, c in enumerate(self.components))
        object.__setattr__(self, "components", comps)

    @classmethod
    def from_terms(cls, *components):
        return cls(tuple(tuple(((e[0], e[1]), c) for e, c in comp) for comp in components))

    @property
    def dim(self):
        return len(self.components)

    @property
    def degree(self):
        return max((e1 + e2 for comp in self.components for (e1, e2), _ in comp), default=0)

    def __call__(self, x):
        return eval_field(self, x)

    def partial(self, j):
        """Exact partial derivative with respect to ``x_{j+1}``."""
        out = []
        for comp in self.components:
            terms = []
            for (e1, e2), c in comp:
                e = (e1, e2)
                if e[j] == 0:
                    continue
                ne = (e1 - 1, e2) if j == 0 else (e1, e2 - 1)
                terms.append((ne, c * e[j]))
            out.append(tuple(terms))
        return PolyVectorField(tuple(out))

    def constant_term(self):
        return np.array([dict(comp).get((0, 0), 0.0) for comp in self.components])

    def linear_part(self):
        """Jacobian at the origin, read off the degree-one coefficients."""
        J = np.zeros((self.dim, 2))
        for i, comp in enumerate(self.components):
            d = dict(comp)
            J[i, 0] = d.get((1, 0), 0.0)
            J[i, 1] = d.get((0, 1), 0.0)
        return J

    def to_json(self):
        return [[{"e": [e1, e2], "c": c} for (e1, e2), c in comp] for comp in self.components]


def eval_field(f, x):
    """Exact evaluation of a polynomial field at a point."""
    x1, x2 = float(x[0]), float(x[1])
    return np.array([sum(c * x1**e1 * x2**e2 for (e1, e2), c in comp) for comp in f.components])


def eval_field_many(f, pts):
    """Vectorized evaluation at the rows of ``pts``; shape ``(k, dim)``."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    x1, x2 = pts[:, 0], pts[:, 1]
    out = np.zeros((pts.shape[0], f.dim))
    for i, comp in enumerate(f.components):
        for (e1, e2), c in comp:
            out[:, i] += c * x1**e1 * x2**e2
    return out


def eval_jacobian(f, x):
    """Exact Jacobian ``d f_i / d x_j`` at ``x``."""
    J = np.zeros((f.dim, 2))
    x1, x2 = float(x[0]), float(x[1])
    for i, comp in enumerate(f.components):
        for (e1, e2), c in comp:
            if e1:
                J[i, 0] += c * e1 * x1 ** (e1 - 1) * x2**e2
            if e2:
                J[i, 1] += c * e2 * x1**e1 * x2 ** (e2 - 1)
    return J


def lie_bracket(f, g, x):
    """``[f, g](x) = Dg(x) f(x) - Df(x) g(x)``."""
    return eval_jacobian(g, x) @ eval_field(f, x) - eval_jacobian(f, x) @ eval_field(g, x)


# ---------------------------------------------------------------------------
# systems


@dataclass(frozen=True, eq=False)
class LinearSystem:
    A: np.ndarray
    B: np.ndarray
    name: str = ""

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        B = np.array(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise SchemaError("A", f"must be square, got shape {A.shape}")
        n = A.shape[0]
        if not 2 <= n <= 5:
            raise SchemaError("A", f"state dimension {n} outside 2..5")
        if B.ndim != 2 or B.shape[0] != n:
            raise SchemaError("B", f"must have {n} rows, got shape {B.shape}")
        if not 1 <= B.shape[1] <= n:
            raise SchemaError("B", f"control dimension {B.shape[1]} outside 1..{n}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise SchemaError("A/B", "entries must be finite")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    kind = "linear"

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    def column(self, i):
        return self.B[:, i].copy()

    def __eq__(self, other):
        return (
            isinstance(other, LinearSystem)
            and np.array_equal(self.A, other.A)
            and np.array_equal(self.B, other.B)
        )

    __hash__ = None


@dataclass(frozen=True)
class HypothesisFlags:
    """Planar small-time hypotheses: ``F(0)=0``, per-column rank, ``DG(0)=0``."""

    f_vanishes: bool
    rank_condition: bool
    dg_vanishes: bool

    @property
    def all(self):
        return self.f_vanishes and self.rank_condition and self.dg_vanishes

    def as_tuple(self):
        return (self.f_vanishes, self.rank_condition, self.dg_vanishes)


@dataclass(frozen=True, eq=False)
class NonlinearSystem2D:
    F: PolyVectorField
    G_cols: tuple
    name: str = ""
    hypothesis_flags: HypothesisFlags = field(init=False)

    kind = "nonlinear2d"

    def __post_init__(self):
        if self.F.dim != 2:
            raise SchemaError("F", f"must have 2 components, got {self.F.dim}")
        cols = tuple(self.G_cols)
        if not 1 <= len(cols) <= 2:
            raise SchemaError("G", f"needs 1 or 2 columns, got {len(cols)}")
        for i, g in enumerate(cols):
            if g.dim != 2:
                raise SchemaError(f"G[{i}]", f"must have 2 components, got {g.dim}")
        object.__setattr__(self, "G_cols", cols)
        object.__setattr__(self, "hypothesis_flags", _compute_flags(self.F, cols))

    @property
    def n(self):
        return 2

    @property
    def m(self):
        return len(self.G_cols)

    def f(self, x, u):
        """Velocity ``F(x) + G(x) u``."""
        out = eval_field(self.F, x)
        for g, ui in zip(self.G_cols, np.atleast_1d(u)):
            out = out + ui * eval_field(g, x)
        return out

    def __eq__(self, other):
        return (
            isinstance(other, NonlinearSystem2D)
            and self.F == other.F
            and self.G_cols == other.G_cols
        )

    __hash__ = None


def _compute_flags(F, cols):
    f0 = bool(np.all(F.constant_term() == 0.0))
    A0 = F.linear_part()
    rank_ok = True
    for g in cols:
        b0 = g.constant_term()
        K = np.column_stack([b0, A0 @ b0])
        rank_ok &= linalg.numerical_rank(K) == 2
    dg0 = all(np.all(g.linear_part() == 0.0) for g in cols)
    return HypothesisFlags(f0, bool(rank_ok), bool(dg0))


# ---------------------------------------------------------------------------
# checks and transforms


@dataclass(frozen=True)
class ColumnNormality:
    rank: int
    L_const: float


def normality_check(sys):
    """Kalman rank and smallest singular value of ``[b, Ab, ..., A^(n-1) b]`` per column."""
    out = []
    for i in range(sys.m):
        K = linalg.controllability_matrix(sys.A, sys.B[:, i])
        out.append(ColumnNormality(linalg.numerical_rank(K), linalg.min_singular_value(K)))
    return out


def is_normal(sys):
    return all(c.rank == sys.n for c in normality_check(sys))


def linearize_at_origin(sys):
    """``A = DF(0)``, ``B = [G_1(0), ..., G_m(0)]``."""
    A = sys.F.linear_part()
    B = np.column_stack([g.constant_term() for g in sys.G_cols])
    return LinearSystem(A, B, name=f"{sys.name}-linearized" if sys.name else "")


def as_nonlinear(sys):
    """View a planar linear system as a polynomial control-affine one."""
    if sys.n != 2:
        raise ValueError("only planar linear systems have a nonlinear2d view")
    A, B = sys.A, sys.B
    F = PolyVectorField.from_terms(*[[((1, 0), A[i, 0]), ((0, 1), A[i, 1])] for i in range(2)])
    cols = tuple(
        PolyVectorField.from_terms(*[[((0, 0), B[i, j])] for i in range(2)]) for j in range(sys.m)
    )
    return NonlinearSystem2D(F, cols, name=sys.name)


def _negate(f):
    return PolyVectorField(tuple(tuple((e, -c) for e, c in comp) for comp in f.components))


def reversed_system(sys):
    """Dynamics ``x' = -F(x) - G(x) u``; its reachable sets are sublevels of the minimum time."""
    name = f"{sys.name}-reversed" if sys.name else ""
    if isinstance(sys, LinearSystem):
        return LinearSystem(-sys.A, -sys.B, name=name)
    return NonlinearSystem2D(_negate(sys.F), tuple(_negate(g) for g in sys.G_cols), name=name)


def local_lipschitz(sys, box=DEFAULT_LIPSCHITZ_BOX, samples=65):
    """Largest operator norm of the second derivatives of ``F``, ``G_i`` on a box.

    This is the Lipschitz constant of ``DF`` and ``DG`` there, sampled on a
    ``samples x samples`` grid.
    """
    xs = np.linspace(box[0][0], box[0][1], samples)
    ys = np.linspace(box[1][0], box[1][1], samples)
    fields = [sys.F, *sys.G_cols]
    seconds = [(f.partial(0), f.partial(1)) for f in fields]
    best = 0.0
    for x1 in xs:
        for x2 in ys:
            p = (x1, x2)
            for d1, d2 in seconds:
                H = np.hstack([eval_jacobian(d1, p), eval_jacobian(d2, p)])
                best = max(best, linalg.opnorm(H))
    return best


# ---------------------------------------------------------------------------
# JSON


def _as_matrix(obj, path):
    if not isinstance(obj, list) or not obj or not all(isinstance(r, list) for r in obj):
        raise SchemaError(path, "expected a non-empty array of arrays")
    width = len(obj[0])
    for i, row in enumerate(obj):
        if len(row) != width:
            raise SchemaError(f"{path}[{i}]", f"row length {len(row)} differs from {width}")
        for j, v in enumerate(row):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise SchemaError(f"{path}[{i}][{j}]", "expected a number")
    return np.array(obj, dtype=float)


def _as_poly_component(obj, path):
    if not isinstance(obj, list):
        raise SchemaError(path, "expected an array of terms")
    terms = []
    for k, t in enumerate(obj):
        tp = f"{path}[{k}]"
        if not isinstance(t, dict) or set(t) != {"e", "c"}:
            raise SchemaError(tp, 'expected {"e": [e1, e2], "c": coef}')
        e = t["e"]
        if (
            not isinstance(e, list)
            or len(e) != 2
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in e)
        ):
            raise SchemaError(f"{tp}.e", "expected two integers")
        c = t["c"]
        if isinstance(c, bool) or not isinstance(c, (int, float)):
            raise SchemaError(f"{tp}.c", "expected a number")
        if e[0] < 0 or e[1] < 0:
            raise SchemaError(f"{tp}.e", "exponents must be nonnegative")
        if e[0] + e[1] > MAX_DEGREE:
            raise SchemaError(f"{tp}.e", f"total degree {e[0] + e[1]} exceeds {MAX_DEGREE}")
        terms.append(((e[0], e[1]), c))
    return terms


def _as_field(obj, path):
    if not isinstance(obj, list) or len(obj) != 2:
        raise SchemaError(path, "expected exactly 2 components")
    return PolyVectorField(tuple(_as_poly_component(c, f"{path}[{i}]") for i, c in enumerate(obj)))


def system_from_dict(doc, name=""):
    if not isinstance(doc, dict):
        raise SchemaError("$", "expected an object")
    kind = doc.get("kind")
    name = doc.get("name", name)
    if kind == "linear":
        extra = set(doc) - {"kind", "A", "B", "name"}
        if extra:
            raise SchemaError("$", f"unexpected keys {sorted(extra)}")
        for key in ("A", "B"):
            if key not in doc:
                raise SchemaError(key, "missing")
        return LinearSystem(_as_matrix(doc["A"], "A"), _as_matrix(doc["B"], "B"), name=name)
    if kind == "nonlinear2d":
        extra = set(doc) - {"kind", "F", "G", "name"}
        if extra:
            raise SchemaError("$", f"unexpected keys {sorted(extra)}")
        for key in ("F", "G"):
            if key not in doc:
                raise SchemaError(key, "missing")
        if not isinstance(doc["G"], list) or not doc["G"]:
            raise SchemaError("G", "expected a non-empty array of columns")
        F = _as_field(doc["F"], "F")
        cols = tuple(_as_field(c, f"G[{i}]") for i, c in enumerate(doc["G"]))
        return NonlinearSystem2D(F, cols, name=name)
    raise SchemaError("kind", f'expected "linear" or "nonlinear2d", got {kind!r}')


def parse_system(document):
    """Parse and validate a JSON system definition."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"invalid JSON: {exc}") from exc
    return system_from_dict(doc)


def system_to_dict(sys):
    if isinstance(sys, LinearSystem):
        d = {"kind": "linear", "A": sys.A.tolist(), "B": sys.B.tolist()}
    else:
        d = {"kind": "nonlinear2d", "F": sys.F.to_json(), "G": [g.to_json() for g in sys.G_cols]}
    if sys.name:
        d["name"] = sys.name
    return d


def serialize(sys):
    return json.dumps(system_to_dict(sys), indent=2)


def builtin_names():
    from importlib import resources

    return sorted(
        p.name[:-5] for p in resources.files("reachcert").joinpath("systems").iterdir()
        if p.name.endswith(".json")
    )


def load_builtin(name):
    """Load one of the bundled example systems by name."""
    from importlib import resources

    path = resources.files("reachcert").joinpath("systems", f"{name}.json")
    if not path.is_file():
        raise KeyError(f"no builtin system {name!r}; available: {', '.join(builtin_names())}")
    return system_from_dict(json.loads(path.read_text()), name=name)


def integrator_chain(n):
    """``x^(n) = u`` in first-order form: ``x_i' = x_{i+1}``, ``x_n' = u``."""
    if not 2 <= n <= 5:
        raise ValueError("chain length must be in 2..5")
    B = np.zeros((n, 1))
    B[-1, 0] = 1.0
    return LinearSystem(np.eye(n, k=1), B, name=f"integrator_chain_{n}")
