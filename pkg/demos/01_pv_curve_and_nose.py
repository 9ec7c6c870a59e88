"""P-V curve and loadability nose on the closed-form two-bus system.

A single lossless line (x = 0.1 pu) feeding a constant-power load has a
maximum transfer of V1^2 / (2x) = 500 MW; the continuation method should land
on that nose and trace the falling voltage on the way. Runs in seconds.
"""

import math
import os

import gridmargin as gm
from gridmargin.margins import StressSchedule, sample_pv_curve

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)


def main():
    case = gm.builtin_twobus(1)

    # closed form for the load-bus voltage at the base point
    p, x = 1.0, 0.1
    v2 = math.sqrt((1 + math.sqrt(1 - 4 * (p * x) ** 2)) / 2)
    sol = gm.solve_power_flow(case)
    print(f"base point: V2 = {sol.v_at(2):.6f} (closed form {v2:.6f})")

    nose = gm.continuation_loadability(case, {"load-2": 1.0})
    print(f"loadability above base: {nose:.1f} MW "
          f"(closed form 400.0 = 500 total - 100 base)")

    sched = StressSchedule(load_area="sink", source_area="source")
    curve = sample_pv_curve(case, schedule=sched, step_mw=10.0)
    path = os.path.join(OUT, "twobus_pv.csv")
    curve.to_csv(path)
    print(f"sampled {len(curve.stress_mw)} P-V points -> {path}")
    print("  total load (MW)   V at bus 2 (pu)")
    for i in range(0, len(curve.stress_mw), max(len(curve.stress_mw) // 10, 1)):
        print(f"  {curve.total_load_mw[i]:15.1f}   {curve.v_by_bus[2][i]:.4f}")


if __name__ == "__main__":
    main()
