"""Time the numpy fallback against the compiled kernels on representative shapes.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from voxcluster.kernels import backends


def cases(rng):
    x1 = rng.standard_normal((8, 1, 128, 100)).astype(np.float32)
    w1 = rng.standard_normal((4, 1, 3, 3)).astype(np.float32)
    b1 = np.zeros(4, np.float32)
    x2 = rng.standard_normal((8, 4, 31, 24)).astype(np.float32)
    w2 = rng.standard_normal((8, 4, 3, 3)).astype(np.float32)
    dy2 = rng.standard_normal((8, 8, 29, 22)).astype(np.float32)
    pool_in = rng.standard_normal((8, 4, 126, 98)).astype(np.float32)
    X = rng.standard_normal((200, 16))
    y = np.where(rng.random(200) < 0.5, -1.0, 1.0)
    order = rng.integers(0, 200, 5000)
    return {
        "conv1 forward (8x1x128x100)": lambda k: k.conv2d_forward(x1, w1, b1),
        "conv2 forward (8x4x31x24)": lambda k: k.conv2d_forward(x2, w2, np.zeros(8, np.float32)),
        "conv2 backward": lambda k: k.conv2d_backward(x2, w2, dy2),
        "maxpool 4 (8x4x126x98)": lambda k: k.maxpool_forward(pool_in, 4),
        "pegasos 5000 steps": lambda k: k.pegasos(X, y, 0.01, order, np.zeros(16)),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    available = backends()
    table = cases(np.random.default_rng(0))
    names = list(available)
    print(f"{'kernel':32s}" + "".join(f"{n:>12s}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, fn in table.items():
        times = [min(timeit.repeat(lambda: fn(available[n]), number=1, repeat=args.repeat)) for n in names]
        row = f"{label:32s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times)
        if len(times) > 1:
            row += f"{times[0] / times[1]:11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
