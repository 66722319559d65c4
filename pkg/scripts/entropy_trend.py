"""Trajectory length and MCD as the entropy-bonus weight grows, uncertainty
weight fixed."""
from _common import parser, setup, write_rows

from dorl_lab.env import QuitRule
from dorl_lab.experiments import entropy_trend

if __name__ == "__main__":
    p = parser(__doc__, "runs/scripts/entropy_trend.csv")
    p.add_argument("--lambda1", type=float, default=0.1)
    p.add_argument("--lambda2", type=float, nargs="+", default=[0.0, 1.0, 5.0])
    p.add_argument("--window", type=int, default=4)
    p.add_argument("--tolerance", type=int, default=0)
    args = p.parse_args()
    shared, seeds = setup(args)
    rows = entropy_trend(shared, tuple(args.lambda2), args.lambda1, seeds,
                         QuitRule(args.window, args.tolerance))
    write_rows(rows, args.out)
