"""Time the numba LSTM loops against the numpy fallback.

    python3 benchmarks/bench_lstm.py --T 64 --H 32 --batch 1 8 46
    python3 benchmarks/bench_lstm.py --end-to-end

Both kernels are called directly, so the environment flag does not
matter here.  Outputs are also compared to make sure the two paths agree.
``--end-to-end`` instead times loss plus gradient over a small generated
dataset with the dispatcher switched each way.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from typed_synth.nn import kernels


def make_inputs(T: int, B: int, H: int, rng: np.random.Generator, dtype):
    xw = rng.normal(0, 0.5, (T, B, 4 * H)).astype(dtype)
    Wh = rng.normal(0, 1 / np.sqrt(H), (H, 4 * H)).astype(dtype)
    dh = rng.normal(0, 1, (T, B, H)).astype(dtype)
    return xw, Wh, dh


def run(fwd, bwd, xw, Wh, dh):
    T, B, G = xw.shape
    H = G // 4
    h = np.zeros((T, B, H), xw.dtype)
    c = np.zeros_like(h)
    gates = np.zeros((T, B, G), xw.dtype)
    fwd(xw, Wh, h, c, gates)
    dz = np.zeros_like(gates)
    dWh = np.zeros_like(Wh)
    bwd(Wh, h, c, gates, dh.copy(), dz, dWh)
    return h, dz, dWh


def best_of(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def end_to_end(repeats: int) -> None:
    from typed_synth.datagen import GenConfig, generate_dataset
    from typed_synth.model import Model, ModelConfig
    from typed_synth.train import task_loss

    ds = generate_dataset(GenConfig(max_nodes=2, operators=("just", "length", "zero", "nil", "cons", "fromEnum"), seed=1))
    tasks = ds.tasks["train"]
    model = Model(ModelConfig.for_variant("typed", ds), seed=0)

    def epoch():
        for t in tasks:
            task_loss(model, t, {})

    results = {}
    for flag in (True, False):
        kernels.USE_NUMBA = flag
        epoch()  # warm-up and compilation
        results[flag] = best_of(epoch, repeats)
    print(f"typed model, {len(tasks)} tasks: numpy {results[False]:.3f} s, numba {results[True]:.3f} s, "
          f"speedup {results[False] / results[True]:.2f}")


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=int, default=64)
    ap.add_argument("--H", type=int, default=32)
    ap.add_argument("--batch", type=int, nargs="+", default=[1, 8, 46])
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--dtype", default="float32")
    ap.add_argument("--end-to-end", action="store_true", help="time a training pass instead of the bare loops")
    args = ap.parse_args(argv)
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed")
    if args.end_to_end:
        end_to_end(min(args.repeats, 5))
        return
    rng = np.random.default_rng(0)
    dtype = np.dtype(args.dtype)
    print(f"{'batch':>6} {'numpy s':>10} {'numba s':>10} {'speedup':>8} {'max |diff|':>11}")
    for B in args.batch:
        xw, Wh, dh = make_inputs(args.T, B, args.H, rng, dtype)
        ref = run(kernels.lstm_forward_loop_np, kernels.lstm_backward_loop_np, xw, Wh, dh)
        got = run(kernels.lstm_forward_loop_nb, kernels.lstm_backward_loop_nb, xw, Wh, dh)  # also compiles
        diff = max(float(np.max(np.abs(a - b))) for a, b in zip(ref, got))
        t_np = best_of(lambda: run(kernels.lstm_forward_loop_np, kernels.lstm_backward_loop_np, xw, Wh, dh), args.repeats)
        t_nb = best_of(lambda: run(kernels.lstm_forward_loop_nb, kernels.lstm_backward_loop_nb, xw, Wh, dh), args.repeats)
        print(f"{B:>6} {t_np:>10.5f} {t_nb:>10.5f} {t_np / t_nb:>8.2f} {diff:>11.2e}")


if __name__ == "__main__":
    main()
