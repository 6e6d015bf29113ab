"""Time the compiled ray-casting kernel against the numpy fallback.

    python3 benchmarks/bench_raycast.py [--rays 4096] [--repeat 5]

Rays are packed the way a training step packs them: one probe per episode,
each tested against the triangles of its own scene.
"""

import argparse
import timeit

import numpy as np

from hglance import _raycast_py, sim

try:
    from hglance import _kernels
except ImportError:
    _kernels = None


def workload(n_rays, seed=0):
    rng = np.random.default_rng(seed)
    pool = [sim.sample_scene(rng, "train") for _ in range(64)]
    scenes = [pool[i] for i in rng.integers(0, len(pool), n_rays)]
    py, dirs = sim.actions_to_directions(rng.uniform(-1, 1, size=(n_rays, 4)))
    origins = np.c_[np.zeros(n_rays), py, np.zeros(n_rays)]
    arrays = [s._tri_arrays for s in scenes]
    offsets = np.zeros(n_rays + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([a[0].shape[0] for a in arrays])
    v0, e1, e2 = (np.ascontiguousarray(np.concatenate([a[i] for a in arrays])) for i in range(3))
    return origins, np.ascontiguousarray(dirs), v0, e1, e2, offsets, 3.0


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rays", type=int, default=4096)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    data = workload(args.rays)
    n_tri = len(data[2])
    print(f"{args.rays} rays, {n_tri} triangle tests")
    backends = [("python", _raycast_py.first_hits)]
    if _kernels is not None:
        backends.append(("cython", _kernels.first_hits))
    else:
        print("compiled extension not built; timing the fallback only")

    results = {}
    for name, fn in backends:
        best = min(timeit.repeat(lambda: fn(*data), number=1, repeat=args.repeat))
        results[name] = (best, fn(*data))
        print(f"{name:>7}: {best * 1e3:9.2f} ms  ({args.rays / best:,.0f} rays/s)")

    if len(results) == 2:
        (tp, (t_py, i_py)), (tc, (t_cy, i_cy)) = results["python"], results["cython"]
        same = np.array_equal(i_py, i_cy) and t_py.tobytes() == t_cy.tobytes()
        print(f"speedup: {tp / tc:.1f}x  outputs identical: {same}")


if __name__ == "__main__":
    main()
