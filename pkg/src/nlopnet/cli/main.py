"""``nlopnet`` command-line entry point: simulate, reconet, metrics."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from ..optim import NonFiniteError, TrainConfig
from ..recon.cg import SolverError
from ..recon.sense import BATCH, COIL, MAPS, X, Y
from .bundle import BundleError, load_bundle, save_bundle
from .cfl import FILE_DIMS, CorruptFileError, ShapeError, read_internal, write_internal
from .metrics import eval_metrics, per_slice
from .reconet import NETWORKS, ConfigError, network_config, reconet_apply, reconet_train
from .simulate import simulate

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_FORMAT = 4
EXIT_CONFIG = 5
EXIT_NUMERIC = 6

_HYPER = ("T", "filters", "kernel", "rbf", "layers", "cg_iter")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nlopnet", description="Unrolled MRI reconstruction networks.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic multi-coil dataset")
    s.add_argument("--slices", type=int, default=10)
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--coils", type=int, default=4)
    s.add_argument("--accel", type=int, default=4)
    s.add_argument("--acl", type=int, default=8)
    s.add_argument("--noise", type=float, default=0.001)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("kspace")
    s.add_argument("coil_maps")
    s.add_argument("reference")
    s.add_argument("pattern", nargs="?")

    r = sub.add_parser("reconet", help="train or apply a reconstruction network")
    r.add_argument("--network", choices=NETWORKS)
    mode = r.add_mutually_exclusive_group(required=True)
    mode.add_argument("--train", action="store_true")
    mode.add_argument("--apply", action="store_true")
    r.add_argument("--normalize", action="store_true", help="scale each slice by its adjoint reconstruction")
    r.add_argument("--pattern", help="sampling pattern file (estimated from k-space if absent)")
    r.add_argument("-T", type=int, dest="T", help="unrolled iterations")
    r.add_argument("--filters", type=int)
    r.add_argument("--kernel", type=int)
    r.add_argument("--rbf", type=int, help="RBF count (varnet)")
    r.add_argument("--layers", type=int, help="CNN depth (modl)")
    r.add_argument("--cg-iter", type=int, dest="cg_iter", help="CG iterations (modl)")
    r.add_argument("--epochs", type=int, default=1)
    r.add_argument("--batch-size", type=int, default=1, dest="batch_size")
    r.add_argument("--lr", type=float, default=1e-3)
    r.add_argument("--optimizer", choices=("sgd", "adam", "ipalm"), default="adam")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--deterministic", action="store_true")
    r.add_argument("--threads", type=int, default=1)
    r.add_argument("kspace")
    r.add_argument("coil_maps")
    r.add_argument("weights")
    r.add_argument("target", help="reference (train) or output (apply)")

    m = sub.add_parser("metrics", help="MSE and PSNR of magnitude images")
    m.add_argument("--mask", help="foreground mask file")
    m.add_argument("--per-slice", action="store_true")
    m.add_argument("reconstruction")
    m.add_argument("reference")
    return p


def _check_dims(arrays: dict, expect: dict) -> None:
    """``expect`` maps file name to a 5-tuple of sizes (None = free, 0 = must match first seen)."""
    seen: dict = {}
    for name, a in arrays.items():
        for ax, want in enumerate(expect[name]):
            n = a.shape[ax]
            if want is None:
                continue
            if want == 0:
                want = seen.setdefault(ax, (n, name))[0]
                ref = seen[ax][1]
                if n != want:
                    raise ShapeError(f"{name}: dimension {FILE_DIMS[ax]} has size {n}, expected {want} as in {ref}")
            elif n != want:
                raise ShapeError(f"{name}: dimension {FILE_DIMS[ax]} has size {n}, expected {want}")


def _read_inputs(args, target_is_reference: bool):
    files = {args.kspace: read_internal(args.kspace), args.coil_maps: read_internal(args.coil_maps)}
    # X, Y, COIL, MAPS, BATCH: 0 = shared across files
    expect = {args.kspace: (0, 0, 0, 1, 0), args.coil_maps: (0, 0, 0, None, 0)}
    if target_is_reference:
        files[args.target] = read_internal(args.target)
        expect[args.target] = (0, 0, 1, 1, 0)
    pattern = None
    if args.pattern:
        pattern = read_internal(args.pattern)
        nb = files[args.kspace].shape[BATCH]
        _check_dims({args.pattern: pattern}, {args.pattern: (files[args.kspace].shape[X],
                                                             files[args.kspace].shape[Y], 1, 1, None)})
        if pattern.shape[BATCH] not in (1, nb):
            raise ShapeError(f"{args.pattern}: dimension {FILE_DIMS[BATCH]} has size {pattern.shape[BATCH]}, "
                             f"expected 1 or {nb}")
    _check_dims(files, expect)
    if len(set(files)) != len(files):
        raise ConfigError("input and output files must differ")
    return files, pattern


def _hyper(args) -> dict:
    return {k: getattr(args, k) for k in _HYPER}


def cmd_simulate(args) -> int:
    d = simulate(args.slices, args.size, args.coils, args.accel, args.acl, args.noise, args.seed)
    write_internal(args.kspace, d["kspace"])
    write_internal(args.coil_maps, d["coils"])
    write_internal(args.reference, d["reference"])
    if args.pattern:
        write_internal(args.pattern, d["pattern"])
    return 0


def cmd_train(args) -> int:
    if args.network is None:
        raise ConfigError("--train requires --network")
    config = network_config(args.network, **_hyper(args))
    files, pattern = _read_inputs(args, True)
    tcfg = TrainConfig(algorithm=args.optimizer, lr=args.lr, batch_size=args.batch_size, epochs=args.epochs,
                       seed=args.seed, deterministic=args.deterministic, threads=args.threads)
    try:
        tcfg.validate()
    except ValueError as e:
        raise ConfigError(str(e)) from None
    model, _ = reconet_train(files[args.kspace], files[args.coil_maps], files[args.target], args.network, config,
                             tcfg, pattern=pattern, normalize=args.normalize,
                             log=lambda s: print(s, flush=True))
    names = [n for n in model.inputs if n not in model.data_names]
    config = dict(config, normalize=bool(args.normalize))
    save_bundle(args.weights, args.network, config, args.seed,
                {n: model.values[n] for n in names}, {n: model.kinds[n] for n in names})
    return 0


def cmd_apply(args) -> int:
    manifest, arrays = load_bundle(args.weights)
    network = manifest["network"]
    if args.network is not None and args.network != network:
        raise BundleError(f"{args.weights}: bundle holds a {network} network, not {args.network}")
    config = dict(manifest["config"])
    normalize = bool(config.pop("normalize", False))
    for k, v in _hyper(args).items():
        if v is not None and config.get(k) != v:
            raise BundleError(f"{args.weights}: {k}={config.get(k)} in bundle, {v} requested")
    if args.normalize and not normalize:
        raise BundleError(f"{args.weights}: network was trained without --normalize")
    files, pattern = _read_inputs(args, False)
    values = {k: v.astype(np.complex128) for k, v in arrays.items()}
    out = reconet_apply(files[args.kspace], files[args.coil_maps], values, network, config, pattern=pattern,
                        normalize=normalize, chunk=max(1, args.batch_size))
    write_internal(args.target, out.astype(np.complex64))
    return 0


def cmd_metrics(args) -> int:
    rec = read_internal(args.reconstruction)
    ref = read_internal(args.reference)
    if rec.shape != ref.shape:
        raise ShapeError(f"{args.reconstruction}: shape {rec.shape} differs from {args.reference} {ref.shape}")
    mask = None
    if args.mask:
        mask = read_internal(args.mask)
        # coil maps as mask: foreground wherever any coil is nonzero
        mask = (np.abs(mask) > 0).any(axis=(COIL, MAPS), keepdims=True)
        try:
            np.broadcast_shapes(mask.shape, rec.shape)
        except ValueError:
            raise ShapeError(f"{args.mask}: shape {mask.shape} does not broadcast to {rec.shape}") from None
    if args.per_slice:
        for k, r in enumerate(per_slice(rec, ref, mask, batch_axis=BATCH)):
            print(json.dumps({"slice": k, **r}))
    print(json.dumps(eval_metrics(rec, ref, mask)))
    return 0


_CATEGORIES = (
    ((FileNotFoundError, PermissionError, IsADirectoryError), "io error", EXIT_IO),
    ((CorruptFileError, ShapeError), "format error", EXIT_FORMAT),
    ((BundleError, ConfigError), "config error", EXIT_CONFIG),
    ((NonFiniteError, SolverError), "numerical error", EXIT_NUMERIC),
    ((ValueError,), "invalid input", EXIT_USAGE),
)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "metrics":
            return cmd_metrics(args)
        return cmd_train(args) if args.train else cmd_apply(args)
    except tuple(t for types, _, _ in _CATEGORIES for t in types) as e:
        category, code = next((c, k) for types, c, k in _CATEGORIES if isinstance(e, types))
        print(f"nlopnet: {category}: {e}", file=sys.stderr)
        return code

if __name__ == "__main__":
    sys.exit(main())
