"""The validation probe battery used by `magschrod validate`.

Run: python demos/04_probes.py
"""
from magschrod import cli

cfg = cli.load_config("demos/config_example.json")
for rep in cli.default_battery(cfg, cfg["seed"]):
    print(f"{rep.probe_name:<24} pass={rep.passed!s:<5} slope={rep.fitted_slope:+.3f} values={[round(v, 4) for v in rep.values[:3]]}")
