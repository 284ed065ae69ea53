# A full sweep at desk scale: two cells, three seeds, then audit and report.
#
# Equivalent to
#     cfflab run --config demos/configs/desk_sweep.yaml --jobs 2
#     cfflab audit runs/desk_sweep/manifest.csv
#     cfflab report runs/desk_sweep

from pathlib import Path

from cfflab.experiment import cmd_audit, cmd_report, cmd_run, load_config

here = Path(__file__).parent
cfg = load_config(here / "configs" / "desk_sweep.yaml")
out, rows = cmd_run(cfg, jobs=2)

for r in rows:
    print(f"{r['condition']:<18} seed {r['seed']}  {r['test_accuracy']:.2f}%")

print(cmd_audit(out / "manifest.csv").to_text())

for path in cmd_report(out):
    print("wrote", path)

# Three seeds is far too few to say anything about seed variance. The point
# here is the plumbing: resumable runs, a wide manifest, and figures.
