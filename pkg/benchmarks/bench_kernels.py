"""Time the compiled kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 200] [--chain]

Inputs have the sizes of one sweep on the default simulated design
(200 subjects, about 950 visits, two classes, q = 2).  With ``--chain`` a
short chain is also timed under each backend in a fresh interpreter, since
the backend is fixed at import.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from jlcm import kernels
from jlcm.kernels import _pykernels as python

try:
    from jlcm.kernels import _ckernels as compiled
except ImportError:  # extension not built
    compiled = None


def make_inputs(N=200, n=950, K=2, q=2, seed=0):
    rng = np.random.default_rng(seed)
    d = q + 1
    T = np.tile(np.eye(d), (N, 1, 1))
    T[:, 1, 0] = T[:, 2, 0] = T[:, 2, 1] = rng.normal(0, 0.5, N)
    obs_subject = np.sort(rng.integers(0, N, n))
    return {
        "gompertz_integral": (rng.uniform(0, 2, N), rng.normal(0, 0.5, N), 1e-8),
        "gompertz_survival_terms": (rng.uniform(0.1, 2, N), (rng.random(N) < 0.3).astype(float),
                                    rng.normal(size=(N, K)), rng.uniform(0.1, 0.3, K),
                                    rng.normal(0, 0.3, K), 1e-8),
        "mvn_cholesky_logdens": (rng.normal(size=(N, d)), T, rng.normal(0, 0.3, (N, d))),
        "gaussian_terms": (rng.normal(size=n), rng.normal(size=(n, K)), rng.uniform(0.1, 1, K)),
        "subject_gaussian_loglik": (rng.normal(size=n), rng.normal(size=n), rng.normal(size=(n, q)),
                                    rng.normal(size=(N, q)), rng.uniform(0.1, 1, n),
                                    obs_subject, N),
        "log_softmax_rows": (rng.normal(size=(n, K)),),
        "sample_categorical": (rng.normal(size=(n, K)) - 5, rng.random(n)),
    }


def bench(repeat):
    inputs = make_inputs()
    print(f"{'kernel':<26}{'python [us]':>14}{'cython [us]':>14}{'speedup':>10}")
    for name, args in inputs.items():
        t_py = min(timeit.repeat(lambda: getattr(python, name)(*args), number=repeat, repeat=3))
        line = f"{name:<26}{1e6 * t_py / repeat:>14.1f}"
        if compiled is not None:
            t_c = min(timeit.repeat(lambda: getattr(compiled, name)(*args), number=repeat, repeat=3))
            line += f"{1e6 * t_c / repeat:>14.1f}{t_py / t_c:>10.1f}"
        print(line)


_CHAIN = """
import time
from jlcm import kernels
from jlcm.simulate import simulate_dataset
from jlcm.mcmc import run_chain, SamplerConfig
d = simulate_dataset()
t = time.perf_counter()
run_chain(d, 2, config=SamplerConfig(n_iter=500, burn_in=100))
print(kernels.BACKEND, f"{(time.perf_counter() - t) / 500 * 1e3:.2f} ms/iteration")
"""


def bench_chain():
    for pure in ("1", "0"):
        env = dict(os.environ, JLCM_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", _CHAIN], env=env, capture_output=True, text=True)
        print(out.stdout.strip() or out.stderr.strip().splitlines()[-1])


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--chain", action="store_true")
    args = ap.parse_args()
    print(f"active backend: {kernels.BACKEND}")
    bench(args.repeat)
    if args.chain:
        bench_chain()
