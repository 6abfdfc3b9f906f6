"""Embedded harmonic oscillator: train five seeds and check the recovered eigenvalues."""

from _common import parser, save, setup_logging

from sindyae.experiments import oscillator_benchmark


def main():
    args = parser(__doc__, seeds=5, epochs=2000).parse_args()
    setup_logging(args.verbose)
    res = oscillator_benchmark(range(args.first_seed, args.first_seed + args.seeds), epochs=args.epochs)
    for r in res["runs"]:
        ev = ", ".join(f"{re:+.3f}{im:+.3f}i" for re, im in r["eigenvalues"])
        print(f"seed {r['seed']}: success={r['success']} eigenvalues [{ev}]  {' | '.join(r['equations'])}")
    print(f"{res['successes']}/{len(res['runs'])} seeds succeeded in {res['seconds']:.0f} s")
    print("wrote", save(res, args.out, "oscillator"))


if __name__ == "__main__":
    main()
