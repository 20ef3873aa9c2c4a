"""Command-line entry point: ``netmamba <subcommand> ...``.

Configuration precedence is flags > ``--config`` JSON file > defaults.
Exit status is 0 on success, 2 on usage errors and 1 on runtime errors;
runtime errors also print one JSON line ``{"error": ..., "message": ...}``
to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, seed_everything, tiny_run_config
from .flow_repr import extract_samples, load_samples, read_header, save_samples
from .packet_io import FiveTuple, read_packets

log = logging.getLogger("netmamba")


def _write_json(path: str | Path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _provenance(cfg: RunConfig, command: str) -> dict:
    return {"command": command, "seed": cfg.seed, "config": cfg.to_dict(), "version": __version__}


def _resolve(args, extra: dict | None = None, base: dict | None = None) -> RunConfig:
    over = {"seed": getattr(args, "seed", None)}
    over.update(extra or {})
    if base is None and getattr(args, "preset", None) == "tiny":
        base = tiny_run_config().to_dict()
    return RunConfig.load(getattr(args, "config", None), over, base)


def _model_flags(args) -> dict:
    return {"model.block_kind": getattr(args, "block_kind", None),
            "model.multimodal": True if getattr(args, "multimodal", False) else None}


# --------------------------------------------------------------------------
# subcommands


def cmd_extract(args) -> int:
    cfg = _resolve(args)
    labels = args.label or []
    if labels and len(labels) != len(args.pcap):
        raise SystemExit(_usage(f"--label given {len(labels)} times for {len(args.pcap)} --pcap files"))
    samples = []
    for i, path in enumerate(args.pcap):
        label = labels[i] if labels else None
        samples.extend(extract_samples(read_packets(path), cfg.repr, label=label, min_packets=args.min_packets))
    save_samples(samples, args.out, header=_provenance(cfg, "extract"))
    print(json.dumps({"samples": len(samples), "out": str(args.out)}))
    return 0


def cmd_pretrain(args) -> int:
    from .pretrain import pretrain_loop

    cfg = _resolve(args, {"pretrain.steps": args.steps, "pretrain.batch_size": args.batch_size,
                          "pretrain.lr": args.lr, **_model_flags(args)})
    samples = load_samples(args.data, cfg.repr.L_s)
    res = pretrain_loop(samples, cfg.model, cfg.pretrain, seed=cfg.seed, out=args.out, run_config=cfg)
    h = res.history
    print(json.dumps({"steps": len(h), "first_loss": h[0]["total"] if h else None,
                      "last_loss": h[-1]["total"] if h else None, "out": str(args.out)}))
    return 0


def cmd_finetune(args) -> int:
    from .finetune import finetune_loop
    from .metrics import few_shot_subsample, split
    from .tensor import load_checkpoint

    over = {"finetune.loss": args.loss, "finetune.epochs": args.epochs, "finetune.batch_size": args.batch_size,
            "finetune.lr": args.lr, "finetune.target_val_acc": args.target_val_acc, "loss.beta": args.beta,
            "loss.margin_c": args.margin_c, "split.mode": args.split, **_model_flags(args)}
    init, base = None, None
    if args.init:
        # the pre-training run's config is the base layer, so the backbone shapes agree
        init, meta = load_checkpoint(args.init)
        base = meta.get("config")
    cfg = _resolve(args, over, base)
    streams = seed_everything(cfg.seed)
    samples = load_samples(args.data, cfg.repr.L_s)
    train, val, test = split(samples, cfg.split, streams.split)
    if cfg.split.few_shot_fraction < 1:
        train = few_shot_subsample(train, cfg.split.few_shot_fraction, streams.subsample)
    res = finetune_loop(train, val, cfg.model, cfg.finetune, cfg.loss, init=init, seed=cfg.seed, test=test,
                        out=args.out, run_config=cfg)
    report = {"best_epoch": res.best_epoch, "best_val_acc": res.best_val_acc, "test": res.test_metrics,
              "history": res.history, **_provenance(cfg, "finetune")}
    _write_json(Path(args.out) / "metrics.json", report)
    print(json.dumps({"best_val_acc": res.best_val_acc, "test_accuracy": res.test_metrics["accuracy"],
                      "out": str(args.out)}))
    return 0


def cmd_classify(args) -> int:
    from .finetune import load_classifier
    from .online import classify_samples

    model, meta = load_classifier(args.model)
    samples = load_samples(args.data, model.cfg.L_s)
    logits = classify_samples(model, samples)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w") as fh:
        fh.write(json.dumps({"header": {"command": "classify", "model": str(args.model),
                                        "seed": meta.get("seed"), "config": meta.get("config")}},
                            sort_keys=True) + "\n")
        for s, z in zip(samples, logits):
            fh.write(json.dumps({"key": s.key.to_json(), "pred": int(np.argmax(z)),
                                 "logits": [float(v) for v in z]}, sort_keys=True) + "\n")
    print(json.dumps({"classified": len(samples), "out": str(args.out)}))
    return 0


def cmd_ood(args) -> int:
    from .finetune import load_classifier, ood_score
    from .metrics import auroc, fpr_at_95_tpr, roc_points
    from .online import classify_samples

    model, meta = load_classifier(args.model)
    tau = args.tau if args.tau is not None else (meta.get("config") or {}).get("loss", {}).get("tau", 1.0)
    s_id = ood_score(classify_samples(model, load_samples(args.id, model.cfg.L_s)), tau)
    s_ood = ood_score(classify_samples(model, load_samples(args.ood, model.cfg.L_s)), tau)
    pts = roc_points(s_id, s_ood)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "fpr", "tpr"])
        w.writerows([[repr(float(t)), repr(float(f)), repr(float(p))] for t, f, p in pts])
    metrics = {"auroc": auroc(s_id, s_ood), "fpr_at_95_tpr": fpr_at_95_tpr(s_id, s_ood), "tau": tau,
               "n_id": int(len(s_id)), "n_ood": int(len(s_ood)), "model": str(args.model),
               "seed": meta.get("seed"), "config": meta.get("config")}
    _write_json(Path(args.out).with_suffix(".json"), metrics)
    print(json.dumps({k: metrics[k] for k in ("auroc", "fpr_at_95_tpr")}))
    return 0


def cmd_eval(args) -> int:
    from .metrics import ami_stride_scores, classification_metrics

    out: dict = {"data": str(args.data)}
    samples = None
    if args.model:
        from .finetune import load_classifier
        from .online import classify_samples

        model, meta = load_classifier(args.model)
        samples = load_samples(args.data, model.cfg.L_s)
        pred = classify_samples(model, samples).argmax(-1)
        y = np.array([s.label for s in samples])
        out.update(classification_metrics(y, pred, labels=list(range(model.n_classes))))
        out.update({"model": str(args.model), "seed": meta.get("seed"), "config": meta.get("config")})
    if args.ami:
        from .flow_repr import ReprConfig

        samples = samples or load_samples(args.data)
        hdr = read_header(args.data) or {}
        rcfg = ReprConfig(**((hdr.get("config") or {}).get("repr") or {}))
        grid = ami_stride_scores(samples, args.stride_width, rcfg)
        np.savetxt(args.ami, grid, delimiter=",", fmt="%.10g")
        out["ami_csv"] = str(args.ami)
        out["ami_header_columns"] = rcfg.N_h // args.stride_width
    if not args.model and not args.ami:
        raise SystemExit(_usage("eval needs --model and/or --ami"))
    _write_json(args.out, out)
    print(json.dumps({k: out[k] for k in ("accuracy", "f1_weighted") if k in out}))
    return 0


def cmd_serve(args) -> int:
    from .finetune import load_classifier
    from .online import ResultStore, cdf_rows, make_server, replay

    cfg = _resolve(args, {"engine.W_g": args.wg, "engine.W_r": args.wr, "engine.speed": args.speed})
    model, meta = load_classifier(args.model)
    header = {"command": "serve", "pcap": str(args.pcap), "model": str(args.model), "seed": meta.get("seed"),
              "engine": cfg.to_dict()["engine"], "model_config": meta.get("config")}
    store = ResultStore(args.results, header=header)
    report = replay(args.pcap, model, cfg.repr, cfg.engine.W_g, cfg.engine.W_r, cfg.engine.speed, store,
                    threaded=args.threaded)
    if args.stats:
        with open(args.stats, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["batch_id", "n_flows", "wire_bits", "infer_seconds", "throughput_mbps",
                        "latency_seconds", "engine_time"])
            for s in report.stats:
                w.writerow([s.batch_id, s.n_flows, s.wire_bits, s.infer_seconds, s.throughput_mbps,
                            s.latency_seconds, s.engine_time])
        stem = Path(args.stats)
        for key in ("throughput_mbps", "latency_seconds"):
            with open(stem.with_name(f"{stem.stem}_{key}_cdf.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow([key, "cdf"])
                w.writerows(cdf_rows([getattr(s, key) for s in report.stats]))
    summary = report.summary()
    print(json.dumps(summary, sort_keys=True))
    if args.http_port is not None:
        srv = make_server(store, report.summary, args.host, args.http_port)
        print(json.dumps({"listening": f"http://{srv.server_address[0]}:{srv.server_address[1]}"}), flush=True)
        try:
            if args.serve_seconds:
                deadline = time.monotonic() + args.serve_seconds
                srv.timeout = 0.2
                while time.monotonic() < deadline:
                    srv.handle_request()
            else:
                srv.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            srv.server_close()
    return 0


def cmd_query(args) -> int:
    from .online import ResultStore, query_results

    store = ResultStore.load(args.results)
    if args.all:
        res = query_results(store, "all", args.offset, args.limit)
    else:
        missing = [f for f in ("src", "dst", "sport", "dport", "proto") if getattr(args, f) is None]
        if missing:
            raise SystemExit(_usage(f"query needs --all or all of --src --dst --sport --dport --proto "
                                    f"(missing {', '.join(missing)})"))
        res = query_results(store, FiveTuple.from_strings(args.src, args.dst, args.sport, args.dport, args.proto))
    print(json.dumps(res, sort_keys=True))
    return 0


def cmd_plot(args) -> int:
    from . import plot

    done = []
    if args.cdf:
        done.append(plot.plot_cdf(args.cdf, args.out))
    elif args.loss:
        done.append(plot.plot_loss(args.loss, args.out))
    elif args.roc:
        done.append(plot.plot_roc(args.roc, args.out))
    elif args.ami:
        done.append(plot.plot_ami(args.ami, args.out, args.ami_header_columns))
    else:
        raise SystemExit(_usage("plot needs one of --cdf --loss --roc --ami"))
    print(json.dumps({"out": [str(p) for p in done]}))
    return 0


# --------------------------------------------------------------------------
# parser


def _usage(msg: str) -> int:
    print(json.dumps({"error": "UsageError", "message": msg}), file=sys.stderr)
    return 2


class _Parser(argparse.ArgumentParser):
    """argparse with the usage-error line in the same JSON shape as runtime errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.exit(_usage(f"{self.prog}: {message}"))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="netmamba", description="Traffic classification with selective SSMs.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--config", help="RunConfig JSON file")
        sp.add_argument("--preset", choices=["default", "tiny"], default="default",
                        help="base layer under --config: full-size or desk-scale defaults")
        if seed:
            sp.add_argument("--seed", type=int)

    def model_flags(sp):
        sp.add_argument("--block-kind", choices=["mamba", "trans"])
        sp.add_argument("--multimodal", action="store_true")

    sp = sub.add_parser("extract", help="pcap -> FlowSample JSONL")
    common(sp)
    sp.add_argument("--pcap", action="append", required=True)
    sp.add_argument("--label", action="append", type=int, help="label for the matching --pcap")
    sp.add_argument("--min-packets", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("pretrain", help="masked-autoencoder pre-training")
    common(sp)
    model_flags(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--lr", type=float)
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("finetune", help="supervised fine-tuning (CE or LDA)")
    common(sp)
    model_flags(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--init", help="pre-training checkpoint")
    sp.add_argument("--out", required=True)
    sp.add_argument("--loss", choices=["ce", "lda"])
    sp.add_argument("--beta", type=float)
    sp.add_argument("--margin-c", type=float)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--target-val-acc", type=float)
    sp.add_argument("--split", choices=["random", "time"])
    sp.set_defaults(func=cmd_finetune)

    sp = sub.add_parser("classify", help="offline classification of a FlowSample file")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_classify)

    sp = sub.add_parser("ood", help="entropy OOD scores, ROC CSV and AUROC/FPR95")
    sp.add_argument("--model", required=True)
    sp.add_argument("--id", required=True)
    sp.add_argument("--ood", required=True)
    sp.add_argument("--tau", type=float)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_ood)

    sp = sub.add_parser("eval", help="classification metrics and/or AMI stride grid")
    sp.add_argument("--data", required=True)
    sp.add_argument("--model")
    sp.add_argument("--ami", help="write the per-position AMI grid CSV here")
    sp.add_argument("--stride-width", type=int, default=2)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("serve", help="replay a pcap through the online engine")
    common(sp, seed=False)
    sp.add_argument("--pcap", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--wg", type=float)
    sp.add_argument("--wr", type=float)
    sp.add_argument("--speed", type=float)
    sp.add_argument("--results", required=True)
    sp.add_argument("--stats")
    sp.add_argument("--threaded", action="store_true")
    sp.add_argument("--http-port", type=int, help="serve the query API after replay (0 = any free port)")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--serve-seconds", type=float, help="stop the HTTP server after this long")
    sp.set_defaults(func=cmd_serve)

    sp = sub.add_parser("query", help="look up classified flows in a results file")
    sp.add_argument("--results", required=True)
    sp.add_argument("--all", action="store_true")
    sp.add_argument("--offset", type=int, default=0)
    sp.add_argument("--limit", type=int, default=100)
    sp.add_argument("--src")
    sp.add_argument("--dst")
    sp.add_argument("--sport", type=int)
    sp.add_argument("--dport", type=int)
    sp.add_argument("--proto", type=int)
    sp.set_defaults(func=cmd_query)

    sp = sub.add_parser("plot", help="render CSV artifacts to SVG")
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--cdf")
    g.add_argument("--loss")
    g.add_argument("--roc")
    g.add_argument("--ami")
    sp.add_argument("--ami-header-columns", type=int, default=40)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return int(args.func(args) or 0)
    except SystemExit as exc:
        return int(exc.code or 0)
    except Exception as exc:  # runtime failure: one machine-readable line
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "command": args.command}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
