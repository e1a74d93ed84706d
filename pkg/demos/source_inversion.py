"""Locating a contaminant source from a handful of sensor readings.

The pipeline stages are the ones the command line exposes: synthesize noisy
data from a refined model, build the prior-based comparison surrogate, run the
adaptive loop, sample and analyze. Afterwards the posterior densities implied by
the two surrogates are compared with the exact-model posterior on a grid.

Run with ``python3 demos/source_inversion.py [output-dir]``; it takes a couple
of minutes.
"""
import json
import sys
import tempfile
from pathlib import Path

import numpy as np

from localpc.analysis import Grid2D, kl_from_log_densities
from localpc.bayes import GaussianLikelihood
from localpc.cli import run_stage
from localpc.models import SourceModel, SourceModelConfig
from localpc.polychaos import load_surrogate

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "source_paper.cfg"


def main(out: Path):
    for stage in ["synthesize-data", "build-surrogate", "adapt", "sample", "analyze"]:
        run_stage(stage, CONFIG, out)
        print(f"finished {stage}")
    stages = json.loads((out / "manifest.json").read_text())["stages"]
    print(f"\nadaptive loop: {stages['adapt']['iterations']} iterations, "
          f"{stages['adapt']['model_evals']} model evaluations")
    print(f"prior surrogate: {stages['build-surrogate']['model_evals']} model evaluations")

    # On [0, 0.6]^2 the flat prior leaves the posterior proportional to the
    # likelihood, so log-likelihood grids are enough for the KL comparison.
    d = np.loadtxt(out / "data.tsv", ndmin=2)[:, 2]
    lik = GaussianLikelihood(d, 0.1)
    g = np.linspace(0.0, 0.6, 241)
    X, Y = np.meshgrid(g, g, indexing="ij")
    pts = np.c_[X.ravel(), Y.ravel()]
    exact = lik(SourceModel(SourceModelConfig()).batch(pts)).reshape(X.shape)
    for name in ("adaptive", "prior"):
        s = load_surrogate(out / f"surrogate_{name}.pc")
        approx = lik(s.evaluate(pts)).reshape(X.shape)
        print(f"KL(exact || {name} surrogate posterior) = {kl_from_log_densities(exact, approx, Grid2D(g, g)):.4f}")
    print(f"\nchain statistics ({out / 'chain_stats.tsv'}):")
    print((out / "chain_stats.tsv").read_text())


if __name__ == "__main__":
    if len(sys.argv) > 1:
        main(Path(sys.argv[1]))
    else:
        with tempfile.TemporaryDirectory() as tmp:
            main(Path(tmp))
