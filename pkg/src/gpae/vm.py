"""Batched postfix evaluation of many expression trees over many samples.

Trees are flattened to postfix programs. A program's feature operands are
row indices into a feature-major matrix ``X`` (features x samples), shifted
by a per-program row offset; this lets one call evaluate, for instance, every
encoder tree of every block population against the shared input matrix.
Semantics match :func:`gpae.tree.eval_tree` exactly.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit

from gpae.tree import SENTINEL, ExprTree, Node

def compile_node(root: Node, visible: Sequence[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Postfix arrays; feature operands are resolved to global indices via ``visible``."""
    return ExprTree(root, tuple(visible), max_depth=1 << 30).program


@njit(inline="always")
def _fix(v):
    if math.isfinite(v):
        return v
    if v < 0.0:
        return -SENTINEL
    return SENTINEL


@njit(nogil=True, cache=True)
def _program(p, ops, args, consts, starts, offsets, X, stack):
    """Evaluate program ``p`` over all samples; the result is left in ``stack[0]``."""
    n = X.shape[1]
    sp = 0
    off = offsets[p]
    for k in range(starts[p], starts[p + 1]):
        op = ops[k]
        if op == 0:
            c = consts[k]
            for i in range(n):
                stack[sp, i] = c
            sp += 1
        elif op == 1:
            r = args[k] + off
            for i in range(n):
                stack[sp, i] = X[r, i]
            sp += 1
        elif op <= 5:
            sp -= 1
            a = stack[sp - 1]
            b = stack[sp]
            if op == 2:
                for i in range(n):
                    a[i] = _fix(a[i] + b[i])
            elif op == 3:
                for i in range(n):
                    a[i] = _fix(a[i] - b[i])
            elif op == 4:
                for i in range(n):
                    a[i] = _fix(a[i] * b[i])
            else:
                for i in range(n):
                    if b[i] == 0.0:
                        a[i] = SENTINEL
                    else:
                        a[i] = _fix(a[i] / b[i])
        else:
            a = stack[sp - 1]
            if op == 6:
                for i in range(n):
                    a[i] = _fix(math.sin(a[i]))
            else:
                for i in range(n):
                    a[i] = _fix(math.cos(a[i]))


@njit(nogil=True, cache=True)
def _run(ops, args, consts, starts, offsets, X, out, stack, lo, hi):
    for p in range(lo, hi):
        _program(p, ops, args, consts, starts, offsets, X, stack)
        out[p, :] = stack[0]


@njit(nogil=True, cache=True)
def _run_sqerr(ops, args, consts, starts, offsets, X, T, targets, part_starts, acc, stack, lo, hi):
    # parts are processed whole by one thread, so accumulation order is fixed
    n = X.shape[1]
    for q in range(lo, hi):
        for p in range(part_starts[q], part_starts[q + 1]):
            _program(p, ops, args, consts, starts, offsets, X, stack)
            t = targets[p]
            for i in range(n):
                d = stack[0, i] - T[t, i]
                acc[q, i] += d * d


class _Flat(NamedTuple):
    ops: np.ndarray
    args: np.ndarray
    consts: np.ndarray
    starts: np.ndarray
    offsets: np.ndarray
    part_starts: np.ndarray
    height: int


def _flatten(parts: Sequence[tuple[Sequence[ExprTree], int]]) -> _Flat:
    progs = [t.program for trees, _ in parts for t in trees]
    counts = np.array([len(trees) for trees, _ in parts], dtype=np.int64)
    starts = np.zeros(len(progs) + 1, dtype=np.int64)
    np.cumsum([len(p[0]) for p in progs], out=starts[1:])
    part_starts = np.zeros(len(parts) + 1, dtype=np.int64)
    np.cumsum(counts, out=part_starts[1:])
    # a postfix program of n nodes never holds more than (n + 1) // 2 values
    height = int(np.max(np.diff(starts))) // 2 + 2 if progs else 1
    return _Flat(
        np.concatenate([p[0] for p in progs]),
        np.concatenate([p[1] for p in progs]),
        np.concatenate([p[2] for p in progs]),
        starts,
        np.repeat(np.array([off for _, off in parts], dtype=np.int64), counts),
        part_starts,
        height,
    )


def _spread(kernel, n_items: int, workers: int, n_samples: int, height: int, *head) -> None:
    """Run ``kernel(*head, stack, lo, hi)`` over ``n_items`` split into contiguous ranges."""
    workers = max(1, min(workers, n_items))
    bounds = np.linspace(0, n_items, workers + 1).astype(np.int64)
    if workers == 1:
        kernel(*head, np.empty((height, n_samples)), 0, n_items)
        return
    with ThreadPoolExecutor(workers) as pool:
        jobs = [
            pool.submit(kernel, *head, np.empty((height, n_samples)), bounds[w], bounds[w + 1])
            for w in range(workers)
        ]
        for job in jobs:
            job.result()


def run(parts: Sequence[tuple[Sequence[ExprTree], int]], X: np.ndarray, workers: int = 1) -> np.ndarray:
    """Evaluate forests on ``X`` (features x samples).

    ``parts`` pairs each forest with the row offset added to its feature
    indices. Returns one output row per program, in order.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    if not parts:
        return np.empty((0, X.shape[1]))
    f = _flatten(parts)
    n_prog = len(f.starts) - 1
    out = np.empty((n_prog, X.shape[1]), dtype=np.float64)
    if n_prog:
        _spread(_run, n_prog, workers, X.shape[1], f.height,
                f.ops, f.args, f.consts, f.starts, f.offsets, X, out)
    return out


def squared_error(parts: Sequence[tuple[Sequence[ExprTree], int, int]], X: np.ndarray, T: np.ndarray,
                  workers: int = 1) -> np.ndarray:
    """Per-part, per-sample sum of squared errors against target rows of ``T``.

    Each part is ``(trees, row_offset, target_offset)``: program ``i`` of the
    part reads ``X`` with the row offset and is compared with row
    ``target_offset + i`` of ``T``. Returns ``len(parts) x samples``.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    T = np.ascontiguousarray(T, dtype=np.float64)
    acc = np.zeros((len(parts), X.shape[1]))
    if not parts:
        return acc
    f = _flatten([(p, off) for p, off, _ in parts])
    targets = np.concatenate([t + np.arange(len(p), dtype=np.int64) for p, _, t in parts])
    _spread(_run_sqerr, len(parts), workers, X.shape[1], f.height,
            f.ops, f.args, f.consts, f.starts, f.offsets, X, T, targets, f.part_starts, acc)
    return acc
