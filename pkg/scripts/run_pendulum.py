"""Pendulum video discovery at reduced scale with the spike-and-slab prior.

Seeds run one after another and stop at the first single-term ``sin(z)``
discovery unless ``--all`` is given.
"""

from _common import parser, save, setup_logging

from sindyae.experiments import pendulum_discovery


def main():
    p = parser(__doc__, seeds=5, epochs=1500)
    p.add_argument("--refine-epochs", type=int, default=1000)
    p.add_argument("--ics", type=int, default=20)
    p.add_argument("--frames", type=int, default=250)
    p.add_argument("--all", action="store_true", help="run every seed instead of stopping at the first success")
    args = p.parse_args()
    setup_logging(args.verbose)
    res = pendulum_discovery(range(args.first_seed, args.first_seed + args.seeds), n_ics=args.ics,
                             steps=args.frames, epochs=args.epochs, refine_epochs=args.refine_epochs,
                             stop_after=None if args.all else 1, log_every=50 if args.verbose else 0)
    for r in res["runs"]:
        print(f"seed {r['seed']}: success={r['success']} ({r['seconds']:.0f} s)  {r['equations'][0]}")
    print(f"{res['successes']}/{len(res['runs'])} seeds succeeded in {res['seconds'] / 60:.1f} min")
    print("wrote", save(res, args.out, "pendulum"))


if __name__ == "__main__":
    main()
