"""Recovering a boundary heat flux from one interior temperature sensor.

The flux is a nine-coefficient Fourier series; the conductivity depends on
temperature, so the forward model is a nonlinear PDE solve. The full desk-scale
pipeline (``configs/heat_desk.cfg``) takes roughly half an hour, mostly for the
exact-model chain. This script either summarizes a finished output directory or,
with ``--quick``, runs the pipeline with 5000-step chains to show the workflow.

    localpc synthesize-data --config configs/heat_desk.cfg --out runs/heat
    ...                                    # the other four stages
    python3 demos/heat_flux.py runs/heat

    python3 demos/heat_flux.py --quick runs/heat_quick
"""
import argparse
import json
from pathlib import Path

import numpy as np

from localpc.cli import run_stage

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "heat_desk.cfg"
STAGES = ["synthesize-data", "build-surrogate", "adapt", "sample", "analyze"]


def quick_run(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    cfg = out / "heat_quick.cfg"
    cfg.write_text(CONFIG.read_text().replace("n_steps = 100000", "n_steps = 5000")
                   .replace("burn_in = 10000", "burn_in = 1000").replace("max_lag = 2000", "max_lag = 300")
                   .replace("n_boot = 20", "n_boot = 3"))
    for stage in STAGES:
        run_stage(stage, cfg, out)
        print(f"finished {stage}")


def summarize(out: Path) -> None:
    stages = json.loads((out / "manifest.json").read_text())["stages"]
    print(f"prior surrogate: {stages['build-surrogate']['model_evals']} model evaluations")
    print(f"adaptive loop: {stages['adapt']['iterations']} iterations, "
          f"{stages['adapt']['model_evals']} model evaluations")
    trace = np.loadtxt(out / "trace.tsv", ndmin=2)
    print("tempering sequence: " + " ".join(f"{lam:.2f}" for lam in trace[:, 1]))

    print("\nKL from the exact-model posterior (pairwise marginals):")
    print((out / "kl_table.tsv").read_text())
    print("chain statistics for a_1:")
    print((out / "chain_stats.tsv").read_text())

    # The flux posterior is skewed: the sign and size of the skewness show how far
    # it is from Gaussian even though the biasing family is Gaussian.
    ex = np.loadtxt(out / "moments_exact_dram.tsv")
    ad = np.loadtxt(out / "moments_adaptive_dram.tsv")
    print("    t   mean(exact)  mean(adapt)  var(exact)  var(adapt)  skew(exact)  skew(adapt)")
    for i in range(0, len(ex), 7):
        print(f"{ex[i, 0]:5.2f}  " + "  ".join(f"{v:11.4f}" for v in
                                              (ex[i, 1], ad[i, 1], ex[i, 2], ad[i, 2], ex[i, 3], ad[i, 3])))


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("out", type=Path)
    p.add_argument("--quick", action="store_true", help="run a short pipeline into OUT first")
    args = p.parse_args()
    if args.quick:
        quick_run(args.out)
    summarize(args.out)


if __name__ == "__main__":
    main()
