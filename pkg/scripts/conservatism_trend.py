"""MCD and trajectory length of uncertainty-penalised (MOPO-style) policies as
the uncertainty weight grows."""
from _common import parser, setup, write_rows

from dorl_lab.experiments import conservatism_trend

if __name__ == "__main__":
    p = parser(__doc__, "runs/scripts/conservatism_trend.csv")
    p.add_argument("--lambda1", type=float, nargs="+", default=[0.0, 0.1, 1.0])
    args = p.parse_args()
    shared, seeds = setup(args)
    write_rows(conservatism_trend(shared, tuple(args.lambda1), seeds), args.out)
