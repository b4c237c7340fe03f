"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both backends are loaded in one process (the numpy versions are always
defined), checked for agreement, and timed after a warm-up call so numba
compilation is excluded.
"""

import argparse
import timeit

import numpy as np

from docval import _kernels as k


def cases(rng):
    table16 = rng.uniform(0, 10, 1 << 16)
    table16[0] = 0.0
    table10 = table16[: 1 << 10].copy()
    x = rng.standard_normal((400, 64))
    d = k._np_cosine_distances(x)
    return [
        ("shapley_from_table n=16", k._np_shapley_from_table, getattr(k, "_nb_shapley_from_table", None), (table16, 16)),
        ("cosine_distances 400x64", k._np_cosine_distances, getattr(k, "_nb_cosine_distances", None), (x,)),
        ("threshold_labels n=400", k._np_threshold_labels, getattr(k, "_nb_threshold_labels", None), (d, 0.6)),
        ("pair_deltas n=10", k._np_pair_deltas, getattr(k, "_nb_pair_deltas", None), (table10, 10)),
        ("subset_sums n=16", k._np_subset_sums, getattr(k, "_nb_subset_sums", None), (rng.uniform(size=16),)),
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, np_fn, nb_fn, inputs in cases(rng):
        np_out = np_fn(*inputs)
        np_ms = 1e3 * min(timeit.repeat(lambda: np_fn(*inputs), number=1, repeat=args.repeat))
        if nb_fn is None:
            print(f"{name:<26}{np_ms:>10.2f}{'n/a':>10}{'':>9}")
            continue
        nb_out = nb_fn(*inputs)  # warm-up compiles
        if name.startswith("threshold"):
            # label ids may differ; compare the partitions
            same = np.array_equal(np_out[:, None] == np_out[None, :], nb_out[:, None] == nb_out[None, :])
        else:
            same = np.allclose(np_out, nb_out, atol=1e-9)
        nb_ms = 1e3 * min(timeit.repeat(lambda: nb_fn(*inputs), number=1, repeat=args.repeat))
        flag = "" if same else "  MISMATCH"
        print(f"{name:<26}{np_ms:>10.2f}{nb_ms:>10.2f}{np_ms / nb_ms:>8.1f}x{flag}")


if __name__ == "__main__":
    main()
