"""Shared test helpers: an independent FD harness and a matmul oracle.

Everything here is deliberately re-derived rather than imported from
the package, so a bug in the implementation cannot hide inside its
own test oracle.
"""

import numpy as np


def fd_grad(f, x, h=1e-6):
    """Central finite differences of scalar f(x) wrt every entry of x.

    Mutates x in place entry by entry and restores it; x must be the
    same array object f reads from.
    """
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        keep = x[idx]
        x[idx] = keep + h
        hi = f()
        x[idx] = keep - h
        lo = f()
        x[idx] = keep
        g[idx] = (hi - lo) / (2.0 * h)
        it.iternext()
    return g


def rel_err(got, want):
    """Mixed error: relative when the reference is O(1) or larger,
    absolute below that. A pure ratio is meaningless for parameters
    whose true gradient is structurally zero (a key bias shifts every
    attention score in a row equally, so row softmax ignores it)."""
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    denom = max(float(np.max(np.abs(want))), 1.0)
    return float(np.max(np.abs(got - want))) / denom


def ref_matmul(a, b):
    """Pure-Python matmul oracle: sort each entry's products ascending,
    then accumulate left to right. This is the package's documented
    summation rule, restated from scratch."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for v in sorted(a[i, t] * b[t, j] for t in range(k)):
                acc += v
            out[i, j] = acc
    return out


def random_blocks(rng, n_layers, d, variant):
    from pesl.encoder import init_blocks

    return init_blocks(n_layers, d, rng, variant=variant)


def tiny_config(mode="vanilla", **over):
    """A fast 8x8 single-channel config; override leaf fields by name.

    Ambiguous names take a section prefix, e.g. data__kind="csv".
    """
    from pesl.config import parse_run_config

    doc = {
        "model": {
            "image_h": 8, "image_w": 8, "channels": 1,
            "patch_h": 4, "patch_w": 4, "p": 4, "d": 8,
            "n_layers": 1, "n_classes": 2, "n_heads": 1,
            "teb_variant": "full", "position_embedding": False,
        },
        "train": {
            "mode": mode, "lr": 0.05, "epochs": 2,
            "batch_size": 4, "mixup_prob": 0.0, "seed": 11,
        },
        "transport": {"kind": "loopback"},
        "data": {"kind": "synthetic", "task": "plain", "n": 24},
    }
    for key, val in over.items():
        if "__" in key:
            section_name, leaf = key.split("__", 1)
            doc[section_name][leaf] = val
            continue
        for section in doc.values():
            if key in section:
                section[key] = val
                break
        else:
            raise KeyError(key)
    return parse_run_config(doc)
