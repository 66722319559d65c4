"""End-to-end smoke run: world, logs, user model, entropy index and sweep."""
import argparse
import time

from dorl_lab.config import load_config
from dorl_lab.pipeline import TRAINED_BASELINES, run_pipeline

from _common import ROOT

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default=str(ROOT / "configs" / "smoke.json"))
    p.add_argument("--out", default=None)
    p.add_argument("--baseline", choices=TRAINED_BASELINES, default="dorl")
    p.add_argument("--threads", type=int, default=1)
    args = p.parse_args()
    cfg = load_config(args.config)
    if args.out:
        cfg = cfg.replace(out_dir=args.out)
    t0 = time.perf_counter()
    path = run_pipeline(cfg, args.baseline, args.threads)
    print(open(path).read())
    print(f"wrote {path} in {time.perf_counter() - t0:.1f}s")
