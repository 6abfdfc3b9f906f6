"""Lorenz embedding at reduced scale (64 trajectories, 2000 epochs).

A seed succeeds when the input FUV is below 0.05 and the simulated latent
trajectory stays bounded on t in [0, 25]. Stops after two successes unless
``--all`` is given.
"""

from _common import parser, save, setup_logging

from sindyae.experiments import lorenz_substitute


def main():
    p = parser(__doc__, seeds=5, epochs=2000)
    p.add_argument("--ics", type=int, default=64)
    p.add_argument("--all", action="store_true")
    args = p.parse_args()
    setup_logging(args.verbose)
    res = lorenz_substitute(range(args.first_seed, args.first_seed + args.seeds), n_ics=args.ics,
                            epochs=args.epochs, stop_after=None if args.all else 2,
                            log_every=100 if args.verbose else 0)
    for r in res["runs"]:
        print(f"seed {r['seed']}: success={r['success']} fuv_x={r['fuv_x']:.4f} bounded={r['bounded']} "
              f"active={r['active_terms']} ({r['seconds']:.0f} s)")
        for line in r["equations"]:
            print("   ", line)
    print(f"{res['successes']}/{len(res['runs'])} seeds succeeded in {res['seconds'] / 60:.1f} min")
    print("wrote", save(res, args.out, "lorenz"))


if __name__ == "__main__":
    main()
