"""Regenerate the golden fixtures in tests/data.

The histogram is a Poisson draw from the reconvolution model itself
(A=1000, B=5000, tau1=20 ns, tau2=3 ns, C=10, s=0.5 ns, t0=5 ns, scaled to
10^6 expected counts over 4096 bins of 0.05 ns); the golden report is the
CLI fit of that file.

    python3 scripts/make_fixtures.py
"""

from pathlib import Path

import numpy as np

from chiral_pl import DecayHistogram, IrfModel, model_eval
from chiral_pl.cli import main
from chiral_pl.core import AcquisitionMeta
from chiral_pl.io import write_histogram

DATA = Path(__file__).resolve().parent.parent / "tests" / "data"
SEED = 20240601
TRUE = (1000.0, 5000.0, 20.0, 3.0, 10.0)


def fixture_histogram() -> DecayHistogram:
    irf = IrfModel(0.5, 5.0)
    t = (np.arange(4096) + 0.5) * 0.05
    mu = model_eval(TRUE, irf, t)
    mu *= 1e6 / mu.sum()
    counts = np.random.default_rng(SEED).poisson(mu)
    return DecayHistogram(0.05, 0.0, counts, AcquisitionMeta(seed=SEED, label="forward-model fixture"))


def build() -> None:
    DATA.mkdir(parents=True, exist_ok=True)
    hist = DATA / "fixture_hist.csv"
    write_histogram(hist, fixture_histogram())
    code = main(["fit", str(hist), "--irf", "0.5,5.0", "--out", str(DATA / "fixture_fit.txt")])
    if code:
        raise SystemExit(code)
    print(f"wrote {hist} and {DATA / 'fixture_fit.txt'}")


if __name__ == "__main__":
    build()
