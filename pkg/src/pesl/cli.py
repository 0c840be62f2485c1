"""Command-line entry points.

Subcommands: verify, keygen, authorize, train, serve-cloud, run-edge,
attack, info. Exit codes: 0 success, 1 property or assertion failure,
2 usage or config error, 3 I/O or protocol error.
"""

import argparse
import json
import sys

from .backend import active_backend
from .cloud import CloudServer
from .config import RunConfig, load_run_config
from .edge import save_edge
from .encoder import conjugate_stack, load_stack, save_stack
from .errors import (
    ConfigError,
    DataError,
    DecodeError,
    PeslError,
    ProtocolError,
)
from .opcount import split_summary
from .permutation import (
    inverse,
    load_key,
    log2_perm_space,
    make_key,
    mixup_space_factor,
    save_key,
)
from .runtime import build_datasets, build_model, key_for_mode, run_training
from .transport import TcpTransport


def _load_config(path: str) -> RunConfig:
    return load_run_config(path)


def cmd_verify(args) -> int:
    from .properties import run_properties

    only = None
    if args.only is not None:
        only = [n for chunk in args.only for n in chunk.split(",") if n]
        if not only:
            raise ConfigError("no properties selected")
    results = run_properties(only=only, corrupt=args.corrupt, trials=args.trials)
    if args.json:
        doc = {
            "passed": all(r.passed for r in results),
            "results": [r.as_dict() for r in results],
        }
        print(json.dumps(doc, indent=2))
    else:
        width = max(len(r.name) for r in results)
        for r in results:
            mark = "PASS" if r.passed else "FAIL"
            line = f"{mark}  {r.name:<{width}}  max_err={r.max_err:.3e}  limit={r.threshold:.1e}"
            if r.detail:
                line += f"  ({r.detail})"
            print(line)
        n_bad = sum(not r.passed for r in results)
        print(f"{len(results) - n_bad}/{len(results)} properties passed")
    return 0 if all(r.passed for r in results) else 1


def cmd_keygen(args) -> int:
    cfg = _load_config(args.config)
    column = cfg.train.mode != "row_shuffle"
    key = make_key(
        cfg.model.p, cfg.model.d, cfg.train.seed, column_shuffle=column
    )
    save_key(key, args.out)
    bits = log2_perm_space(cfg.model.p, cfg.model.d)
    print(
        f"wrote key p={key.p} d={key.d} column_shuffle={key.column_shuffled()} "
        f"to {args.out} (log2 keyspace {bits:.2f} bits)"
    )
    return 0


def cmd_authorize(args) -> int:
    blocks = load_stack(args.weights)
    key = load_key(args.key)
    if blocks and blocks[0].d != key.d:
        raise ConfigError(
            f"key width d={key.d} does not match weight width d={blocks[0].d}"
        )
    p = inverse(key.p_col) if args.inverse else key.p_col
    save_stack(args.out, conjugate_stack(blocks, p))
    verb = "deauthorized" if args.inverse else "authorized"
    print(f"{verb} {len(blocks)} blocks -> {args.out}")
    return 0


def _write_metrics(path: str, records: list) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec))
            fh.write("\n")


def _run_with_config(cfg: RunConfig, args) -> int:
    train_set, eval_set = build_datasets(cfg)
    transport = None
    if cfg.transport.kind == "tcp":
        transport = TcpTransport(cfg.transport.host, cfg.transport.port)
    try:
        result = run_training(cfg, train_set, eval_set, transport=transport)
    finally:
        if transport is not None:
            transport.close()
    for rec in result.epoch_records:
        print(
            f"epoch {rec['epoch']}: mean_loss={rec['loss']:.6f} "
            f"accuracy={rec['accuracy']:.4f}"
        )
    if result.eval_result is not None:
        print(
            f"eval: accuracy={result.eval_result.accuracy:.4f} "
            f"mean_loss={result.eval_result.mean_loss:.6f}"
        )
    if getattr(args, "metrics", None):
        _write_metrics(args.metrics, result.step_records)
        print(f"wrote {len(result.step_records)} step records to {args.metrics}")
    if getattr(args, "save_edge", None):
        save_edge(args.save_edge, result.edge)
        print(f"wrote edge weights to {args.save_edge}")
    if getattr(args, "save_cloud", None):
        if result.cloud is None:
            raise ConfigError(
                "save-cloud: the cloud weights live in the remote process "
                "when transport.kind is 'tcp'; use serve-cloud --save-final"
            )
        save_stack(args.save_cloud, result.cloud)
        print(f"wrote cloud weights to {args.save_cloud}")
    return 0


def cmd_train(args) -> int:
    return _run_with_config(_load_config(args.config), args)


def cmd_run_edge(args) -> int:
    cfg = _load_config(args.config)
    if cfg.transport.kind != "tcp":
        raise ConfigError("run-edge requires transport.kind = 'tcp' in the config")
    return _run_with_config(cfg, args)


def cmd_serve_cloud(args) -> int:
    cfg = _load_config(args.config)
    if args.weights:
        blocks = load_stack(args.weights)
        if blocks and blocks[0].d != cfg.model.d:
            raise ConfigError(
                f"weight width d={blocks[0].d} does not match model.d={cfg.model.d}"
            )
    else:
        blocks, _ = build_model(cfg)
        key = key_for_mode(cfg)
        if key is not None and key.column_shuffled():
            # the served model is the re-keyed (authorized) stack
            blocks = conjugate_stack(blocks, key.p_col)
    server = CloudServer(
        blocks,
        cfg.train.lr,
        n_heads=cfg.model.n_heads,
        host=cfg.transport.host,
        port=cfg.transport.port,
        max_connections=args.connections,
    ).start()
    print(f"cloud listening on {cfg.transport.host}:{server.port}", flush=True)
    try:
        server.wait()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    if args.save_final:
        save_stack(args.save_final, blocks)
        print(f"wrote final cloud weights to {args.save_final}")
    return 0


def cmd_attack(args) -> int:
    from .attack import blackbox_experiment, whitebox_experiment

    cfg = _load_config(args.config)
    if args.protection == "none":
        raise ConfigError(
            "attack compares a protection against the unprotected baseline; "
            "pick --protection row or row_column"
        )
    kinds = ("blackbox", "whitebox") if args.kind == "both" else (args.kind,)
    report = {"protection": args.protection, "e": args.e, "sections": []}
    for kind in kinds:
        runs = []
        ratios = []
        for seed in range(args.seeds):
            if kind == "blackbox":
                protected = blackbox_experiment(cfg, args.protection, args.e, seed)
                baseline = blackbox_experiment(cfg, "none", args.e, seed)
                ratio = protected["held_out_mse"] / max(
                    baseline["held_out_mse"], 1e-300
                )
            else:
                protected = whitebox_experiment(cfg, args.protection, seed)
                baseline = whitebox_experiment(cfg, "none", seed)
                ratio = protected["final_objective"] / max(
                    baseline["final_objective"], 1e-300
                )
                protected = dict(protected, objective_curve=None)
                baseline = dict(baseline, objective_curve=None)
            runs.append(
                {"seed": seed, "protected": protected, "baseline": baseline,
                 "ratio": ratio}
            )
            ratios.append(ratio)
            print(f"{kind} seed {seed}: protected/baseline ratio {ratio:.2f}")
        threshold = 2.0 if kind == "blackbox" else 10.0
        satisfied = sum(r >= threshold for r in ratios)
        section = {
            "kind": kind,
            "threshold": threshold,
            "satisfied": satisfied,
            "total": len(ratios),
            "majority": satisfied * 2 > len(ratios),
            "runs": runs,
        }
        report["sections"].append(section)
        print(
            f"{kind}: {satisfied}/{len(ratios)} seeds at ratio >= {threshold} "
            f"(majority {'yes' if section['majority'] else 'NO'})"
        )
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
        print(f"wrote attack report to {args.report}")
    return 0


def cmd_info(args) -> int:
    cfg = _load_config(args.config)
    m = cfg.model
    summary = split_summary(m)
    doc = {
        "backend": active_backend(),
        "edge_macc": summary["edge"]["total"],
        "cloud_macc": summary["cloud"]["total"],
        "cloud_to_edge_ratio": summary["cloud_to_edge_ratio"],
        "log2_perm_space": log2_perm_space(m.p, m.d),
        "mixup_space_factor": mixup_space_factor(cfg.train.batch_size, m.p),
        "detail": summary,
    }
    if args.json:
        print(json.dumps(doc, indent=2))
    else:
        print(f"backend             {doc['backend']}")
        print(f"edge_macc           {doc['edge_macc']}")
        print(f"cloud_macc          {doc['cloud_macc']}")
        print(f"cloud_to_edge_ratio {doc['cloud_to_edge_ratio']:.2f}")
        print(f"log2_perm_space     {doc['log2_perm_space']:.2f}")
        print(f"mixup_space_factor  {doc['mixup_space_factor']}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pesl",
        description="Privacy-preserving split learning with permutation-"
        "equivalent Transformer encoders.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run the named property suite")
    p.add_argument("--only", action="append",
                   help="comma-separated property names (repeatable)")
    p.add_argument("--corrupt", help="negative-control hook, e.g. 'conjugation'")
    p.add_argument("--trials", type=int, default=25)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("keygen", help="derive and save a shuffle key")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("authorize", help="conjugate cloud weights with a key")
    p.add_argument("--weights", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--inverse", action="store_true",
                   help="apply the inverse permutation (deauthorize)")
    p.set_defaults(func=cmd_authorize)

    p = sub.add_parser("train", help="train per the config (loopback or tcp)")
    p.add_argument("--config", required=True)
    p.add_argument("--metrics", help="JSONL per-step metrics path")
    p.add_argument("--save-edge", dest="save_edge")
    p.add_argument("--save-cloud", dest="save_cloud")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("serve-cloud", help="run the cloud side of a tcp split")
    p.add_argument("--config", required=True)
    p.add_argument("--weights", help="serve this stack instead of seeded init")
    p.add_argument("--connections", type=int, default=None,
                   help="stop after this many connections")
    p.add_argument("--save-final", dest="save_final",
                   help="write the stack after the server stops")
    p.set_defaults(func=cmd_serve_cloud)

    p = sub.add_parser("run-edge", help="run the edge side against a tcp cloud")
    p.add_argument("--config", required=True)
    p.add_argument("--metrics")
    p.add_argument("--save-edge", dest="save_edge")
    p.set_defaults(func=cmd_run_edge)

    p = sub.add_parser("attack", help="paired inversion attacks, protected vs not")
    p.add_argument("--config", required=True)
    p.add_argument("--kind", choices=("blackbox", "whitebox", "both"),
                   default="both")
    p.add_argument("--protection", choices=("row", "row_column", "none"),
                   default="row_column")
    p.add_argument("--e", type=int, default=1,
                   help="observations per sample for the black-box attacker")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--report", help="JSON report path")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("info", help="analytic op counts and keyspace size")
    p.add_argument("--config", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_info)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return int(args.func(args) or 0)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (DecodeError, ProtocolError, DataError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except PeslError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
