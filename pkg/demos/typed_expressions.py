"""Typed expressions: composing maps, catching a reversed composition, evaluating.

Run with ``python3 demos/typed_expressions.py``.
"""

import numpy as np

from bundletc import bundle_types as bt
from bundletc import expression_dsl as dsl
from bundletc import tensor_algebra as ta
from bundletc.errors import SpaceMismatch

PRELUDE = """manifold(U, 2)
manifold(V, 3)
manifold(W, 2)
field(A, hom(T(U), T(V)))
field(B, hom(T(V), T(W)))
"""

# B after A contracts the input slot of B with the output slot of A
typed = dsl.typecheck(PRELUDE + "pair(B, A, 1)")
for level in ("high", "mid", "low"):
    print(f"{level:>4}: {bt.render_type(typed.btype, level)}")

# the reversed order pairs T*U against TW and is rejected before any numbers exist
try:
    dsl.typecheck(PRELUDE + "pair(A, B, 1)")
except SpaceMismatch as exc:
    print(dsl.format_diagnostic(exc, "demo.bt"))

# evaluation agrees with the matrix product
rng = np.random.default_rng(0)
prog = dsl.typecheck_program(PRELUDE)
a, b = rng.standard_normal((3, 2)), rng.standard_normal((2, 3))
bindings = {
    "A": ta.TypedTensor(bt.fiber_tags(prog.scope.symbols["A"], None, prog.scope.env), a),
    "B": ta.TypedTensor(bt.fiber_tags(prog.scope.symbols["B"], None, prog.scope.env), b),
}
out = dsl.run(PRELUDE + "pair(B, A, 1)", bindings)
print("tags:", out.tags)
print("matches B @ A:", np.allclose(out.data, b @ a))
print("trace of id_V:", float(dsl.run("manifold(V, 3)\ntrace(id_V)", {}).data))
