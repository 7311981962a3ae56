"""Compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints the best-of-N wall time per kernel and backend and the speed-up.
"""
import argparse
import timeit

import numpy as np

from nvodmr import _kernels_py

try:
    from nvodmr import _kernels as _compiled
except ImportError:
    _compiled = None


def cases(rng):
    a3 = rng.normal(size=(20_000, 3, 3)) + 1j * rng.normal(size=(20_000, 3, 3))
    a3 = a3 + a3.conj().transpose(0, 2, 1)
    a6 = rng.normal(size=(2_000, 6, 6)) + 1j * rng.normal(size=(2_000, 6, 6))
    a6 = a6 + a6.conj().transpose(0, 2, 1)
    vecs = np.linalg.eigh(a3[:4 * 500].reshape(4, 500, 3, 3))[1]
    freq = np.linspace(0.0, 6e9, 1201)
    centres = rng.random(321) * 6e9
    pos = rng.random((1000, 3)) * 10.0
    return {
        "jacobi 3x3 (20000)": lambda k: k.jacobi_eigh_batch(a3),
        "jacobi 6x6 (2000)": lambda k: k.jacobi_eigh_batch(a6),
        "track_branches 4x500": lambda k: k.track_branches(vecs),
        "lorentzian 1201x321": lambda k: k.lorentzian_accumulate(np.zeros((1201, 321)), freq, centres, 2.5e6, 1.0),
        "inverse_sixth 1000": lambda k: k.inverse_sixth_sums(pos, 10.0),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    backends = [_kernels_py] + ([_compiled] if _compiled is not None else [])
    print(f"{'kernel':<24}" + "".join(f"{b.BACKEND:>12}" for b in backends) + ("     speed-up" if _compiled else ""))
    for name, fn in cases(np.random.default_rng(0)).items():
        times = [min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat)) for b in backends]
        row = f"{name:<24}" + "".join(f"{t * 1e3:>10.1f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>12.1f}x"
        print(row)


if __name__ == "__main__":
    main()
