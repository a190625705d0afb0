"""Time the compiled and NumPy sequence kernels on testbed-sized inputs.

Usage: python benchmarks/bench_kernels.py [--vocab 90] [--dim 64] [--reps 2000]
"""

import argparse
import timeit

import numpy as np

from semdpo.kernels import compiled_backend, python_backend


def _inputs(vocab: int, dim: int, length: int, seed: int):
    rng = np.random.default_rng(seed)
    B = rng.normal(0.0, 0.5, (vocab, vocab))
    C = rng.normal(0.0, 0.5, (vocab, dim))
    xe = rng.normal(0.0, 1.0, dim)
    xe /= np.linalg.norm(xe)
    ids = rng.integers(2, vocab, length).astype(np.intp)
    ids[-1] = 1  # EOS
    return B, C, xe, ids


def bench(backend, B, C, xe, ids, max_len, reps):
    cond = backend.cond_vector(C, xe)
    gB, gcond = np.zeros_like(B), np.zeros(B.shape[1])
    fwd = timeit.timeit(lambda: backend.seq_logprob(B, cond, ids, max_len), number=reps) / reps
    grad = timeit.timeit(
        lambda: backend.seq_logprob_grad(B, cond, ids, max_len, 1.0, gB, gcond), number=reps
    ) / reps
    return fwd, grad


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--vocab", type=int, default=90)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--length", type=int, default=8)
    ap.add_argument("--max-len", type=int, default=16)
    ap.add_argument("--reps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    B, C, xe, ids = _inputs(args.vocab, args.dim, args.length, args.seed)
    backends = [("python", python_backend)]
    if compiled_backend is not None:
        backends.append(("cython", compiled_backend))
    else:
        print("compiled extension not built; timing the NumPy backend only")

    results = {}
    print(f"V={args.vocab} D={args.dim} T={args.length} reps={args.reps}")
    print(f"{'backend':<8} {'logprob (us)':>13} {'grad (us)':>10}")
    for name, backend in backends:
        fwd, grad = bench(backend, B, C, xe, ids, args.max_len, args.reps)
        results[name] = (fwd, grad)
        print(f"{name:<8} {fwd * 1e6:13.2f} {grad * 1e6:10.2f}")
    if "cython" in results:
        (pf, pg), (cf, cg) = results["python"], results["cython"]
        print(f"speedup  {pf / cf:13.1f}x {pg / cg:9.1f}x")
        cond = C @ xe
        diff = abs(python_backend.seq_logprob(B, cond, ids, args.max_len)
                   - compiled_backend.seq_logprob(B, cond, ids, args.max_len))
        print(f"|logprob difference| = {diff:.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
