"""
Cranial hardness regression and a hardness map
==============================================

Compression force differs between grades mostly at the cranial end. Forces
above 10.8 N are dropped before fitting, PLSR and the wide-deep regressor
are compared under 5-fold CV, and the wide-deep model then paints a per-pixel
hardness map of one fillet.
"""
import numpy as np

from naswd import evaluation, maps, preproc, synth, widedeep
from naswd.hsi_io import calibrate_reflectance

spec = synth.SyntheticSpec(n_per_class=(30, 30, 30), seed=5)
table = synth.synth_table(spec)
cranial = table.region("cranial")

groups = [cranial.forces[cranial.labels == i] for i in range(3)]
res = evaluation.one_way_anova(groups)
print("cranial force by grade:", [f"{g.mean():.2f}" for g in groups],
      f"F = {res.f_stat:.1f}, p = {res.p_value:.2e}")

cranial, removed = synth.apply_outlier_filter(cranial, 10.8)
print(f"removed {removed} rows above 10.8 N, {len(cranial)} left")

arch = widedeep.ArchSpec("sigmoid", 64, 1, 0.0, 1e-3)
for family in ("plsr", "naswd"):
    rep = evaluation.run_cv(family, "regress1", cranial, arch, k=5, seed=0)
    m = rep.metrics
    print(f"{family:6s} r {m['r']:.3f}  R2 {m['r2']:.3f}  RMSE {m['rmse']:.2f} N")

model, _ = evaluation.fit_family("naswd", "regress1", cranial, arch, seed=0)
dark, white = synth.reference_frames(spec)
sample = next(s for s in synth.iter_samples(spec) if s.label == "SWB")
cube = calibrate_reflectance(sample.raw, dark, white)
mask = preproc.fillet_mask(cube)
grid = widedeep.predict_cube(model, cube, mask)
path, pct = maps.render_hardness_map(grid, "demo_out/maps/swb_hardness.png")
print("hardness map:", path)
for name, share in pct.items():
    print(f"  {name:11s} {share:5.1f}%")
