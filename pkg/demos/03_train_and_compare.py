"""Train the toy detector, compare fusion modes, then add calibration noise.

    python3 demos/03_train_and_compare.py [steps]

With the default 1500 steps over 128 scenes each model takes about a minute on one core.
"""
import sys

from coopdet.config import RunConfig
from coopdet.metrics import reports_to_table
from coopdet.pipeline import CooperativeDetector, evaluate, evaluation_scenes, train, training_scenes

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 1500
cfg = RunConfig(train_steps=steps)
scenes, held_out = training_scenes(cfg), evaluation_scenes(cfg)

# %% one model per input: both views, and the vehicle camera alone
fused = CooperativeDetector(cfg)
log = train(fused, scenes)
print(f"intermediate: loss {log.totals[0]:.3f} -> {sum(log.totals[-20:]) / 20:.3f}")
solo = CooperativeDetector(cfg.with_(fusion_mode="only-veh"))
log = train(solo, scenes)
print(f"only-veh:     loss {log.totals[0]:.3f} -> {sum(log.totals[-20:]) / 20:.3f}")

reports = [evaluate(fused, held_out, "intermediate", label="intermediate").report,
           evaluate(solo, held_out, "only-veh", label="only-veh").report]
print(reports_to_table(reports))

# %% the fused model under growing roadside translation error
for T in cfg.noise_levels:
    rep = evaluate(fused, held_out, noise_T=T, noise_seed=cfg.noise_seed).report
    print(f"T={T:<4} AP_3D {100 * rep.ap_3d['overall']:6.2f}  AP_BEV {100 * rep.ap_bev['overall']:6.2f}")
