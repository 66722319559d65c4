"""DORL against MOPO under quit rules of different window sizes.

Each policy is trained once per seed and evaluated under every window, since
training rollouts never see the quit rule."""
from _common import parser, setup, write_rows

from dorl_lab.env import QuitRule
from dorl_lab.experiments import run_point

if __name__ == "__main__":
    p = parser(__doc__, "runs/scripts/window_sweep.csv")
    p.add_argument("--windows", type=int, nargs="+", default=[1, 3, 5, 10, 20])
    p.add_argument("--tolerance", type=int, default=10)
    args = p.parse_args()
    shared, seeds = setup(args)
    rules = [QuitRule(n, min(args.tolerance, n)) for n in args.windows]
    pen = shared.cfg.penalty
    rows = []
    for name, l2 in (("dorl", pen.lambda2), ("mopo", 0.0)):
        rows += [{"baseline": name, **r}
                 for r in run_point(shared, pen.lambda1, l2, seeds, rules)]
    write_rows(rows, args.out)
