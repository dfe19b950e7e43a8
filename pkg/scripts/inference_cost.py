"""Per-layer FLOP/BOP accounting for the reference segmentor and refiner, float vs binarized."""

import argparse

from hybridseg.bitops import cost_report, inference_cost
from hybridseg.models import ModelConfig, build_reference_models


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--layers", action="store_true", help="also print the per-layer table")
    a = p.parse_args(argv)

    totals = {}
    for binarized in (False, True):
        seg, ref = build_reference_models(ModelConfig(size=a.size, binarized=binarized))
        seg_specs, ref_specs = seg.cost_layers(a.size, a.size), ref.cost_layers(a.size, a.size)
        tag = "binarized" if binarized else "float"
        if a.layers:
            print(f"== refiner ({tag})")
            print(cost_report(ref_specs).to_text())
        totals[tag] = (inference_cost(seg_specs, ref_specs, a.steps), cost_report(ref_specs).total)

    for tag, (full, ref) in totals.items():
        print(f"{tag:9s} refiner/step {ref.effective_flops:14.1f} eff. FLOPs | "
              f"inference ({a.steps} steps) {full.total.effective_flops:14.1f} eff. FLOPs")
    f_ref, b_ref = totals["float"][1], totals["binarized"][1]
    f_all, b_all = totals["float"][0].total, totals["binarized"][0].total
    print(f"refiner speed-up {f_ref.effective_flops / b_ref.effective_flops:.1f}x, "
          f"whole inference {f_all.effective_flops / b_all.effective_flops:.1f}x")


if __name__ == "__main__":
    main()
