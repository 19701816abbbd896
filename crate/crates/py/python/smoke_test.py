"""Smoke test for the rwtrace Python bindings.

Build the extension first:

    cargo build -p rwtrace-py --release --features extension-module

then run `python3 crates/py/python/smoke_test.py`. Set RWTRACE_PY_LIB to the
built shared library to override the default search under target/.
"""

import csv
import importlib.util
import os
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[3]


def find_library():
    env = os.environ.get("RWTRACE_PY_LIB")
    if env:
        return Path(env)
    for profile in ("release", "debug"):
        for name in ("librwtrace_py.so", "librwtrace_py.dylib", "rwtrace_py.dll"):
            p = ROOT / "target" / profile / name
            if p.exists():
                return p
    sys.exit("built extension not found; run cargo build -p rwtrace-py first")


def load(tmp):
    lib = find_library()
    suffix = ".pyd" if lib.suffix == ".dll" else ".so"
    target = Path(tmp) / f"rwtrace_py{suffix}"
    shutil.copy(lib, target)
    spec = importlib.util.spec_from_file_location("rwtrace_py", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    with tempfile.TemporaryDirectory() as tmp:
        rw = load(tmp)
        data = Path(tmp) / "data"
        out = Path(tmp) / "out"

        info = rw.synth(str(data), preset="small", seed=7, payments=20)
        assert info["payments"] > 0, info

        chain = rw.Chain.load(str(data / "chain.jsonl"))
        assert len(chain) == info["transactions"], (len(chain), info)
        assert chain.address_count == info["addresses"]

        pipe = rw.Pipeline(
            str(out),
            chain=str(data / "chain.jsonl"),
            prices=str(data / "prices.csv"),
            labels=str(data / "labels.csv"),
            independent_labels=str(data / "independent_labels.csv"),
            seeds=str(data / "seeds.csv"),
        )
        reports = pipe.run_all()
        assert [r["stage"] for r in reports] == rw.stages()
        cached = pipe.run_all(resume=True)
        assert all(r["cached"] for r in cached)

        with open(out / "payments.csv", newline="") as f:
            payments = list(csv.DictReader(f))
        assert payments
        addr = payments[0]["address"]
        totals = chain.address_totals(addr)
        assert totals["known"] and totals["received_sat"] > 0

        weights = chain.exposure(addr, hops=2)
        assert all(0.0 < w <= 1.0 for w in weights.values())
        assert chain.shared_exposure(addr, addr) in (0.0, 1.0)
        splits = [chain.detect_split(p["address"]) for p in payments]
        found = [s for s in splits if s is not None]
        assert found and all(50 <= s["grid_pct"] <= 95 for s in found)

        assert rw.classify_outcome(0.1, 0.0, 0.9) == "suspected-TP-ransomware"
        assert rw.classify_outcome(0.0, 0.0, 0.6) == "suspected-FP-lowrisk"
        assert abs(rw.ruzicka({"a": 1.0}, {"a": 0.5, "b": 0.5}) - 1 / 3) < 1e-12

        try:
            rw.Pipeline(str(out), hops=4)
        except ValueError:
            pass
        else:
            raise AssertionError("hops=4 accepted")
        try:
            rw.Pipeline(str(Path(tmp) / "fresh"), **{"chain": str(data / "chain.jsonl")}).run("analyze")
        except rw.RwtraceError as e:
            assert e.args[0] == "missing_stage", e.args
        else:
            raise AssertionError("analyze ran without detection outputs")

    print(f"ok: {len(payments)} payments, {len(found)} splits")


if __name__ == "__main__":
    main()
