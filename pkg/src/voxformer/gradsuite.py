"""Finite-difference verification suite covering every differentiable op.

Each op is wrapped in a scalar loss and its reverse-mode gradients are
compared against central differences in float64. Used by the ``gradcheck``
CLI subcommand and by the test suite.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import numerics as nx
from .numerics import RngState, Tensor
from .numerics.gradcheck import CheckResult, check_gradients


def _t(rng: np.random.Generator, *shape) -> Tensor:
    return Tensor(rng.standard_normal(shape), dtype=np.float64)


def _sq(x: Tensor) -> Tensor:
    return nx.mean(nx.mul(x, x))


def op_cases(seed: int) -> list[tuple[str, Callable[[], Tensor], list]]:
    """(name, forward closure, tensors-to-check) triples for one seed."""
    rng = np.random.default_rng(seed)
    cases = []

    a, b = _t(rng, 3, 4), _t(rng, 3, 4)
    row = _t(rng, 4)
    cases.append(("add", lambda: _sq(nx.add(a, b)), [("a", a), ("b", b)]))
    cases.append(("add_broadcast", lambda: _sq(nx.add(a, row)), [("a", a), ("row", row)]))
    cases.append(("sub", lambda: _sq(nx.sub(a, b)), [("a", a), ("b", b)]))
    cases.append(("mul", lambda: _sq(nx.mul(a, b)), [("a", a), ("b", b)]))
    cases.append(("scale", lambda: _sq(nx.scale(a, -2.5)), [("a", a)]))
    cases.append(("absolute", lambda: _sq(nx.absolute(a)), [("a", a)]))
    cases.append(("broadcast_to",
                  lambda: _sq(nx.broadcast_to(nx.reshape(row, (1, 4)), (3, 4))),
                  [("row", row)]))

    x = _t(rng, 2, 5)
    cases.append(("leaky_relu", lambda: _sq(nx.leaky_relu(x, 0.01)), [("x", x)]))
    cases.append(("gelu", lambda: _sq(nx.gelu(x)), [("x", x)]))
    cases.append(("softmax", lambda: _sq(nx.softmax(x)), [("x", x)]))
    cases.append(("log_softmax", lambda: _sq(nx.log_softmax(x)), [("x", x)]))

    def dropout_forward():
        # a fresh stream per call keeps the mask identical across FD evals
        return _sq(nx.dropout(x, 0.4, RngState(seed + 1), train=True))
    cases.append(("dropout", dropout_forward, [("x", x)]))

    big = _t(rng, 2, 3, 4)
    cases.append(("mean_all", lambda: nx.mean(big), [("big", big)]))
    cases.append(("sum_axis", lambda: _sq(nx.sum_(big, axis=1)), [("big", big)]))
    cases.append(("mean_axis_keep", lambda: _sq(nx.mean(big, axis=(0, 2), keepdims=True)),
                  [("big", big)]))
    cases.append(("reshape", lambda: _sq(nx.reshape(big, (6, 4))), [("big", big)]))
    cases.append(("flatten", lambda: _sq(nx.flatten(big)), [("big", big)]))
    cases.append(("transpose", lambda: _sq(nx.transpose(big, (2, 0, 1))), [("big", big)]))
    cases.append(("slice_axis", lambda: _sq(nx.slice_axis(big, 1, 1, 3)), [("big", big)]))
    c1, c2 = _t(rng, 2, 2, 4), _t(rng, 2, 5, 4)
    cases.append(("concat", lambda: _sq(nx.concat([c1, c2], axis=1)),
                  [("c1", c1), ("c2", c2)]))

    m1, m2 = _t(rng, 4, 3), _t(rng, 3, 5)
    bm1, bm2 = _t(rng, 2, 3, 4), _t(rng, 2, 4, 2)
    cases.append(("matmul", lambda: _sq(nx.matmul(m1, m2)), [("m1", m1), ("m2", m2)]))
    cases.append(("matmul_batched", lambda: _sq(nx.matmul(bm1, bm2)),
                  [("bm1", bm1), ("bm2", bm2)]))
    lx, lw, lb = _t(rng, 2, 3, 6), _t(rng, 4, 6), _t(rng, 4)
    cases.append(("linear", lambda: _sq(nx.linear(lx, lw, lb)),
                  [("x", lx), ("w", lw), ("b", lb)]))

    cx = _t(rng, 2, 3, 5, 4, 5)
    cw = _t(rng, 2, 3, 3, 3, 3)
    cb = _t(rng, 2)
    cases.append(("conv3d_s1", lambda: _sq(nx.conv3d(cx, cw, cb, stride=1, padding=1)),
                  [("x", cx), ("w", cw), ("b", cb)]))
    cases.append(("conv3d_s2", lambda: _sq(nx.conv3d(cx, cw, cb, stride=2, padding=1)),
                  [("x", cx), ("w", cw), ("b", cb)]))
    pw = _t(rng, 4, 3, 1, 1, 1)
    cases.append(("conv3d_1x1", lambda: _sq(nx.conv3d(cx, pw)), [("x", cx), ("w", pw)]))
    c2x, c2w, c2b = _t(rng, 2, 2, 6, 5), _t(rng, 3, 2, 3, 3), _t(rng, 3)
    cases.append(("conv2d", lambda: _sq(nx.conv2d(c2x, c2w, c2b, stride=1, padding=1)),
                  [("x", c2x), ("w", c2w), ("b", c2b)]))

    ux = _t(rng, 1, 2, 3, 4, 3)
    cases.append(("upsample_to", lambda: _sq(nx.upsample_to(ux, (5, 7, 6))), [("x", ux)]))

    gx = _t(rng, 2, 4, 3, 3, 3)
    gg, gb = _t(rng, 4), _t(rng, 4)
    cases.append(("group_norm", lambda: _sq(nx.group_norm(gx, 2, gg, gb)),
                  [("x", gx), ("gamma", gg), ("beta", gb)]))
    ln_x, ln_g, ln_b = _t(rng, 3, 4, 6), _t(rng, 6), _t(rng, 6)
    cases.append(("layer_norm", lambda: _sq(nx.layer_norm(ln_x, ln_g, ln_b)),
                  [("x", ln_x), ("gamma", ln_g), ("beta", ln_b)]))

    d = 8
    seq = _t(rng, 1, 3, d)
    params = {}
    for k in ("wq", "wk", "wv", "wo"):
        params[k] = _t(rng, d, d)
    for k in ("bq", "bk", "bv", "bo"):
        params[k] = _t(rng, d)
    cases.append((
        "multi_head_attention",
        lambda: _sq(nx.multi_head_attention(seq, params, heads=2)),
        [("seq", seq), ("wq", params["wq"]), ("wv", params["wv"]),
         ("wo", params["wo"]), ("bk", params["bk"])]))
    return cases


def run_op_checks(base_seed: int = 0, n_seeds: int = 3, n_coords: int = 10,
                  rtol: float = 1e-4, verbose: bool = False) -> int:
    """Run every op case over ``n_seeds`` seeds; returns the failure count."""
    failures = 0
    for s in range(n_seeds):
        seed = base_seed + s
        coord_rng = RngState(seed)
        for name, forward, wrt in op_cases(seed):
            results = check_gradients(forward, wrt, coord_rng, n_coords=n_coords,
                                      rtol=rtol)
            bad = [r for r in results if not r.passed]
            failures += len(bad)
            if verbose:
                worst = max(r.max_rel_error for r in results)
                status = "ok" if not bad else "FAIL " + ", ".join(r.name for r in bad)
                print(f"seed {seed} {name:24s} max_rel {worst:9.3g}  {status}")
    if verbose:
        print(f"{failures} failing tensor(s)")
    return failures
