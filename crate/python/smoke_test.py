"""Builds the extension module with cargo and checks it against numpy.

Usage: python3 python/smoke_test.py
"""

import importlib.util
import pathlib
import shutil
import subprocess
import sys
import tempfile

import numpy as np

ROOT = pathlib.Path(__file__).resolve().parent.parent


def build_module(tmp: pathlib.Path):
    subprocess.run(
        ["cargo", "build", "--release", "-p", "dualdrive-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    lib = ROOT / "target" / "release" / "libdualdrive_py.so"
    if not lib.exists():
        lib = ROOT / "target" / "release" / "libdualdrive_py.dylib"
    target = tmp / "dualdrive_py.so"
    shutil.copy(lib, target)
    spec = importlib.util.spec_from_file_location("dualdrive_py", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def numpy_cka(x, y):
    x = x - x.mean(axis=0)
    y = y - y.mean(axis=0)
    cross = np.linalg.norm(y.T @ x, "fro") ** 2
    return cross / (np.linalg.norm(x.T @ x, "fro") * np.linalg.norm(y.T @ y, "fro"))


def main():
    with tempfile.TemporaryDirectory() as tmp:
        dd = build_module(pathlib.Path(tmp))

        x, y, (fx, fy) = dd.gen_features(400, 10, 8, 3, 3, 3, 0.6, 0.3, seed=5)
        x, y = np.array(x), np.array(y)
        assert x.shape == (400, 10) and y.shape == (400, 8)
        assert abs(fx - 0.6) < 0.1 and abs(fy - 0.6) < 0.1, (fx, fy)

        again, _, _ = dd.gen_features(400, 10, 8, 3, 3, 3, 0.6, 0.3, seed=5)
        assert np.array_equal(np.array(again), x)

        got = dd.linear_cka(x.tolist(), y.tolist())
        want = numpy_cka(x, y)
        assert abs(got - want) < 1e-10, (got, want)

        rho = dd.cca_spectrum(x.tolist(), y.tolist())
        assert all(a >= b for a, b in zip(rho, rho[1:]))
        assert rho[0] > 0.9 and all(0.0 <= r <= 1.0 for r in rho)

        ones = [1.0] * 10
        assert dd.pdms(ones) == 1.0
        assert dd.pdms([0.0] + [1.0] * 9) == 0.0
        assert dd.epdms(ones, ones) == 1.0

        c_slow = dd.solve_slow_cost()
        slow_fraction = 0.15
        total = 1.0 + 0.05 + slow_fraction * (0.05 + c_slow)
        assert abs(c_slow / total - 3.2) < 1e-9

        try:
            dd.linear_cka([[1.0, 2.0], [3.0]], [[1.0], [2.0]])
        except ValueError:
            pass
        else:
            raise AssertionError("ragged input accepted")

    print("python smoke test passed")


if __name__ == "__main__":
    sys.exit(main())
