"""Benchmark corpus: five data-oblivious kernels over blinded inputs.

Each program keeps every secret-dependent value inside the blinded domain:
control flow and memory addressing depend only on public loop structure, so
the programs build with zero diagnostics and execute without faults under
full enforcement.  Results leave the blinded domain only through explicit
``declassify`` before being emitted with ``out``.

Every entry is parameterized by a scale exponent ``n``:

* ``find_max``, ``binary_search``, ``int_sort`` operate on ``2**n`` secret
  words;
* ``matrix_mult`` and ``dnn`` operate on ``d x d`` matrices with
  ``d = 2**(n // 2)``.

``make_inputs`` draws the secret words (always ``< 2**32`` so signed
comparisons behave like unsigned ones), and ``reference`` computes the
expected ``out`` stream in pure Python.
"""

from __future__ import annotations

import random
from bisect import bisect_left
from dataclasses import dataclass
from typing import Callable

M64 = (1 << 64) - 1


@dataclass(frozen=True)
class CorpusProgram:
    name: str
    source: Callable[[int], str]
    make_inputs: Callable[[int, random.Random], tuple[list[int], list[int]]]
    reference: Callable[[int, list[int], list[int]], list[int]]


def _words(rng: random.Random, count: int) -> list[int]:
    return [rng.getrandbits(32) for _ in range(count)]


# -- find_max ------------------------------------------------------------------
#
# Masked linear scan: the running maximum is updated with a multiplicative
# select instead of a branch, so the comparison result never reaches the
# control path.

def _find_max_source(n: int) -> str:
    ne = 1 << n
    return f"""\
blinded var a[{ne}];

fn main() {{
    var mx = 0;
    var i = 0;
    while (i < {ne}) {{
        var v = a[i];
        var gt = mx < v;
        mx = gt * v + (1 - gt) * mx;
        i = i + 1;
    }}
    out declassify(mx);
}}
"""


def _find_max_inputs(n: int, rng: random.Random):
    return [], _words(rng, 1 << n)


def _find_max_reference(n: int, public, secret):
    return [max(secret)]


# -- binary_search -------------------------------------------------------------
#
# Branchless lower-bound over a sorted secret array with a secret key.  The
# interval arithmetic is uniform (the interval length is public), and each
# probe is fetched with a full masked scan so the probed index never appears
# on the address bus.  Returns the insertion point, like a textbook
# lower_bound.

def _binary_search_source(n: int) -> str:
    ne = 1 << n
    return f"""\
blinded var a[{ne}];
blinded var key;

fn main() {{
    var base = 0;
    var n = {ne};
    while (n > 1) {{
        var half = n >> 1;
        var tgt = base + half - 1;
        var pv = 0;
        var j = 0;
        while (j < {ne}) {{
            var eq = ((j - tgt) | (tgt - j)) == 0;
            pv = pv + a[j] * eq;
            j = j + 1;
        }}
        var c = pv < key;
        base = base + c * half;
        n = n - half;
    }}
    var pb = 0;
    var j2 = 0;
    while (j2 < {ne}) {{
        var eq2 = ((j2 - base) | (base - j2)) == 0;
        pb = pb + a[j2] * eq2;
        j2 = j2 + 1;
    }}
    var cf = pb < key;
    out declassify(base + cf);
}}
"""


def _binary_search_inputs(n: int, rng: random.Random):
    ne = 1 << n
    arr = sorted(_words(rng, ne))
    # Half the time probe an existing element so the equal-key path is hit.
    key = arr[rng.randrange(ne)] if rng.random() < 0.5 else rng.getrandbits(32)
    return [], arr + [key]


def _binary_search_reference(n: int, public, secret):
    arr, key = secret[:-1], secret[-1]
    return [bisect_left(arr, key)]


# -- int_sort ------------------------------------------------------------------
#
# Bitonic sort: the comparison network's shape depends only on the array
# length, and each compare-exchange is a masked min/max.  Within one block of
# a (k, j) stage the sort direction bit (base & k) is constant, so it is
# hoisted into a public branch outside the element loop.

def _int_sort_source(n: int) -> str:
    ne = 1 << n
    return f"""\
blinded var a[{ne}];

fn main() {{
    var k = 2;
    while (k <= {ne}) {{
        var j = k >> 1;
        while (j > 0) {{
            var base = 0;
            while (base < {ne}) {{
                var up = (base & k) == 0;
                var i = base;
                var e = base + j;
                var l;
                var x;
                var y;
                var lt;
                var mn;
                if (up != 0) {{
                    while (i < e) {{
                        l = i + j;
                        x = a[i];
                        y = a[l];
                        lt = x < y;
                        mn = lt * x + (1 - lt) * y;
                        a[i] = mn;
                        a[l] = x + y - mn;
                        i = i + 1;
                    }}
                }} else {{
                    while (i < e) {{
                        l = i + j;
                        x = a[i];
                        y = a[l];
                        lt = x < y;
                        mn = lt * x + (1 - lt) * y;
                        a[l] = mn;
                        a[i] = x + y - mn;
                        i = i + 1;
                    }}
                }}
                base = base + j + j;
            }}
            j = j >> 1;
        }}
        k = k + k;
    }}
    var t = 0;
    while (t < {ne}) {{
        out declassify(a[t]);
        t = t + 1;
    }}
}}
"""


def _int_sort_inputs(n: int, rng: random.Random):
    return [], _words(rng, 1 << n)


def _int_sort_reference(n: int, public, secret):
    return sorted(secret)


# -- matrix_mult ---------------------------------------------------------------
#
# Dense d x d product over flattened row-major matrices.  Indexing is pure
# strength-reduced counter arithmetic on public loop variables; the data path
# stays blinded end to end and the whole result matrix is declassified for
# output.

def _matrix_mult_source(n: int) -> str:
    d = 1 << (n // 2)
    d2 = d * d
    return f"""\
blinded var a[{d2}];
blinded var b[{d2}];
blinded var c[{d2}];

fn main() {{
    var i = 0;
    while (i < {d}) {{
        var rowb = i * {d};
        var jj = 0;
        while (jj < {d}) {{
            var acc = 0;
            var ka = rowb;
            var kb = jj;
            var t = 0;
            while (t < {d}) {{
                acc = acc + a[ka] * b[kb];
                ka = ka + 1;
                kb = kb + {d};
                t = t + 1;
            }}
            c[rowb + jj] = acc;
            jj = jj + 1;
        }}
        i = i + 1;
    }}
    var o = 0;
    while (o < {d2}) {{
        out declassify(c[o]);
        o = o + 1;
    }}
}}
"""


def _matrix_mult_inputs(n: int, rng: random.Random):
    d2 = (1 << (n // 2)) ** 2
    return [], _words(rng, 2 * d2)


def _matrix_mult_reference(n: int, public, secret):
    d = 1 << (n // 2)
    d2 = d * d
    a, b = secret[:d2], secret[d2:]
    out = []
    for i in range(d):
        for j in range(d):
            acc = 0
            for t in range(d):
                acc += a[i * d + t] * b[t * d + j]
            out.append(acc & M64)
    return out


# -- dnn -----------------------------------------------------------------------
#
# Two dense layers: hidden = W1 x, logits = W2 hidden, all arithmetic mod
# 2**64.  The hidden activations live in a blinded stack array, which the
# function epilogue zeroizes, and only the first min(64, d) logits are
# declassified as output.

def _dnn_source(n: int) -> str:
    d = 1 << (n // 2)
    d2 = d * d
    outn = min(64, d)
    return f"""\
blinded var w1[{d2}];
blinded var w2[{d2}];
blinded var xin[{d}];

fn main() {{
    blinded var h[{d}];
    var i = 0;
    while (i < {d}) {{
        var acc = 0;
        var kw = i * {d};
        var t = 0;
        while (t < {d}) {{
            acc = acc + w1[kw] * xin[t];
            kw = kw + 1;
            t = t + 1;
        }}
        h[i] = acc;
        i = i + 1;
    }}
    var o = 0;
    while (o < {outn}) {{
        var acc2 = 0;
        var kw2 = o * {d};
        var t2 = 0;
        while (t2 < {d}) {{
            acc2 = acc2 + w2[kw2] * h[t2];
            kw2 = kw2 + 1;
            t2 = t2 + 1;
        }}
        out declassify(acc2);
        o = o + 1;
    }}
}}
"""


def _dnn_inputs(n: int, rng: random.Random):
    d = 1 << (n // 2)
    d2 = d * d
    return [], _words(rng, 2 * d2 + d)


def _dnn_reference(n: int, public, secret):
    d = 1 << (n // 2)
    d2 = d * d
    w1, w2, x = secret[:d2], secret[d2:2 * d2], secret[2 * d2:]
    h = [sum(w1[i * d + t] * x[t] for t in range(d)) & M64 for i in range(d)]
    outn = min(64, d)
    return [sum(w2[o * d + t] * h[t] for t in range(d)) & M64
            for o in range(outn)]


CORPUS: dict[str, CorpusProgram] = {
    p.name: p for p in (
        CorpusProgram("find_max", _find_max_source,
                      _find_max_inputs, _find_max_reference),
        CorpusProgram("binary_search", _binary_search_source,
                      _binary_search_inputs, _binary_search_reference),
        CorpusProgram("int_sort", _int_sort_source,
                      _int_sort_inputs, _int_sort_reference),
        CorpusProgram("matrix_mult", _matrix_mult_source,
                      _matrix_mult_inputs, _matrix_mult_reference),
        CorpusProgram("dnn", _dnn_source, _dnn_inputs, _dnn_reference),
    )
}

CORPUS_NAMES = tuple(CORPUS)
