"""``somno`` command line: inspect, prep, features, train, eval, predict, serve, replay.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import features, metrics, pipeline
from .edf import EdfFile, parse_annotations, read_signal
from .errors import SomnoError
from .net import ModelConfig, SleepNet, TrainConfig, fit, load_weights, make_sequences, save_weights
from .net.train import write_log_csv

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
DEFAULT_CHANNEL = "EEG Fpz-Cz"

logger = logging.getLogger("somno")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that signals usage errors instead of exiting with code 2."""

    def error(self, message: str):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _nonneg_float(text: str) -> float:
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def _port(text: str) -> int:
    v = int(text)
    if not 0 <= v <= 65535:
        raise argparse.ArgumentTypeError(f"port out of range: {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="somno", description="Single-channel EEG sleep staging.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    s = sub.add_parser("inspect", help="print EDF header, signals and annotation summary")
    s.add_argument("edf")

    s = sub.add_parser("prep", help="EDF night -> EPD1 epoch file")
    s.add_argument("--psg", required=True)
    s.add_argument("--hyp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--channel", default=DEFAULT_CHANNEL)
    s.add_argument("--boundary-epochs", type=_nonneg_int, default=60)
    s.add_argument("--night-id", type=_nonneg_int, help="default: derived from the PSG file name")

    s = sub.add_parser("features", help="statistical features per epoch, optional MI ranking")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--mi", action="store_true", help="also rank features by mutual information")
    s.add_argument("--mi-out", help="MI ranking CSV (default: <out stem>.mi.csv)")
    s.add_argument("--k", type=_positive_int, default=3)
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("train", help="train the network on EPD1 nights")
    s.add_argument("--data", required=True, help="directory of .epd files")
    s.add_argument("--split", required=True)
    s.add_argument("--config", required=True, help='JSON {"model": {...}, "train": {...}}')
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--log", help="per-epoch training log CSV")

    s = sub.add_parser("eval", help="confusion matrix and report on an EPD1 file")
    s.add_argument("--weights", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--cm", required=True)

    s = sub.add_parser("predict", help="hypnogram CSV for one EDF night")
    s.add_argument("--weights", required=True)
    s.add_argument("--psg", required=True)
    s.add_argument("--hyp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--channel", default=DEFAULT_CHANNEL)
    s.add_argument("--boundary-epochs", type=_nonneg_int, default=60)

    s = sub.add_parser("serve", help="run the streaming stage server")
    s.add_argument("--port", type=_port, required=True)
    s.add_argument("--weights", help="SSW1 weights (default: $SOMNO_WEIGHTS)")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--calib-epochs", type=_positive_int, default=2)
    s.add_argument("--log-dir", default="sessions")

    s = sub.add_parser("replay", help="stream an EDF channel to a server")
    s.add_argument("--psg", required=True)
    s.add_argument("--channel", required=True)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=_port, required=True)
    s.add_argument("--speed", type=_nonneg_float, default=1.0, help="x real time; 0 = as fast as possible")
    s.add_argument("--calib-epochs", type=_positive_int)

    s = sub.add_parser("synth", help="write synthetic Sleep-EDF-style nights for demos")
    s.add_argument("--out", required=True)
    s.add_argument("--nights", type=_positive_int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--cycles", type=_positive_int, default=4)
    return p


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_inspect(a) -> int:
    f = EdfFile.open(a.edf)
    h = f.header
    print(f"file        {a.edf}")
    print(f"version     {h.version!r}  reserved {h.reserved!r}")
    print(f"patient     {h.patient_id}")
    print(f"recording   {h.recording_id}")
    print(f"start       {h.start_date} {h.start_time}")
    print(f"records     {h.data_record_count} x {h.record_duration_s:g} s")
    print(f"signals     {h.signal_count}")
    for s in f.signals:
        rate = s.samples_per_record / h.record_duration_s if h.record_duration_s > 0 else 0.0
        print(f"  {s.label:<18} {s.samples_per_record:>6}/rec {rate:>8.2f} Hz  "
              f"[{s.physical_min:g}, {s.physical_max:g}] {s.physical_dim}  "
              f"digital [{s.digital_min}, {s.digital_max}]")
    if any(s.is_annotation for s in f.signals):
        anns = parse_annotations(f)
        counts: dict[str, int] = {}
        for ann in anns:
            counts[ann.label_text] = counts.get(ann.label_text, 0) + 1
        print(f"annotations {len(anns)}")
        for text, c in sorted(counts.items()):
            print(f"  {text:<24} {c}")
    return EXIT_OK


def _prepare(psg, hyp, channel, boundary, night_id=None) -> pipeline.Epochs:
    night = pipeline.night_id_from_name(psg) if night_id is None else night_id
    rec = read_signal(psg, channel)
    anns = parse_annotations(hyp)
    return pipeline.prepare_night(rec, anns, night, boundary_epochs=boundary)


def cmd_prep(a) -> int:
    epochs = _prepare(a.psg, a.hyp, a.channel, a.boundary_epochs, a.night_id)
    pipeline.write_epd(a.out, epochs)
    counts = np.bincount(epochs.labels, minlength=5)
    print(f"{a.out}: {len(epochs)} epochs  " + " ".join(f"{n}={c}" for n, c in zip(pipeline.STAGE_NAMES, counts)))
    return EXIT_OK


def cmd_features(a) -> int:
    epochs = pipeline.read_epd(a.inp)
    feats = features.feature_matrix(epochs.samples)
    features.write_features_csv(a.out, feats, epochs.labels)
    print(f"{a.out}: {len(epochs)} rows x {feats.shape[1]} features")
    if a.mi:
        per_night = [features.mutual_info(feats[epochs.nights == n], epochs.labels[epochs.nights == n],
                                          k=a.k, seed=a.seed)
                     for n in epochs.night_ids()]
        ranking = features.relative_importance(per_night)
        mi_out = a.mi_out or str(Path(a.out).with_suffix("")) + ".mi.csv"
        features.write_mi_csv(mi_out, ranking)
        for i in ranking.order():
            print(f"  {ranking.names[i]:<20} {ranking.scores[i]:.4f} nats  {ranking.relative[i]:6.2f} %")
        print(f"{mi_out}: MI ranking over {len(per_night)} night(s)")
    return EXIT_OK


def load_run_config(path) -> tuple[ModelConfig, TrainConfig]:
    d = json.loads(Path(path).read_text())
    if not isinstance(d, dict) or set(d) - {"model", "train"}:
        raise ValueError('config must be a JSON object with optional "model" and "train" keys')
    return ModelConfig.from_dict(d.get("model", {})), TrainConfig.from_dict(d.get("train", {}))


def cmd_train(a) -> int:
    split = pipeline.DatasetSplit.load(a.split)
    mcfg, tcfg = load_run_config(a.config)
    if a.seed is not None:
        tcfg = TrainConfig.from_dict({**tcfg.to_dict(), "seed": a.seed})
    data = pipeline.read_epd_dir(a.data)
    missing = sorted(set(split.train + split.validation) - set(data.night_ids()))
    if missing:
        raise SomnoError(f"split nights not found in {a.data}: {missing}")
    train = make_sequences(data.select_nights(split.train), mcfg.seq_len)
    val = make_sequences(data.select_nights(split.validation), mcfg.seq_len) if split.validation else None
    if len(train[0]) == 0:
        raise SomnoError("no training epochs")
    model = SleepNet(mcfg, seed=tcfg.seed)
    print(f"training on {len(train[0])} sequences, validating on {0 if val is None else len(val[0])}; "
          f"{model.n_params()} parameters")
    result = fit(model, train, val, tcfg,
                 on_epoch=lambda e: print(f"epoch {e['epoch']:3d} loss {e['loss']:.4f} "
                                          f"train {e['train_acc']:.4f} val {e['val_acc']:.4f} "
                                          f"lr {e['lr']:.2e}", flush=True))
    save_weights(model, a.out)
    if a.log:
        write_log_csv(a.log, result.log)
    print(f"{a.out}: saved")
    return EXIT_OK


def cmd_eval(a) -> int:
    model = load_weights(a.weights)
    epochs = pipeline.read_epd(a.data)
    x, y = make_sequences(epochs, model.config.seq_len)
    if len(x) == 0:
        raise SomnoError(f"{a.data}: no complete sequences")
    pred = model.predict(x).argmax(axis=-1)
    cm = metrics.confusion(y.ravel(), pred.ravel())
    rep = metrics.report(cm)
    metrics.save_report(a.report, rep)
    metrics.write_confusion_csv(a.cm, cm)
    print(rep.render())
    return EXIT_OK


def cmd_predict(a) -> int:
    model = load_weights(a.weights)
    epochs = _prepare(a.psg, a.hyp, a.channel, a.boundary_epochs)
    L = model.config.seq_len
    n = (len(epochs) // L) * L
    if n == 0:
        raise SomnoError("night shorter than one input sequence")
    x = epochs.samples[:n].reshape(-1, L, epochs.samples.shape[1])
    probs = model.predict(x).reshape(n, -1)
    pred = probs.argmax(axis=1)
    metrics.hypnogram_export(epochs.labels[:n], pred, a.out, confidence=probs.max(axis=1),
                             epoch_index=epochs.index[:n])
    acc = float(np.mean(pred == epochs.labels[:n]))
    print(f"{a.out}: {n} epochs, agreement with hypnogram {acc:.4f}")
    return EXIT_OK


def cmd_serve(a) -> int:
    from .stream.server import serve

    if a.verbose == 0:
        logging.getLogger("somno").setLevel(logging.INFO)
    serve(a.port, a.weights, a.host, a.calib_epochs, log_dir=a.log_dir)
    return EXIT_OK


def cmd_replay(a) -> int:
    from .stream.protocol import USE_SERVER_DEFAULT
    from .stream.replay import replay

    calib = USE_SERVER_DEFAULT if a.calib_epochs is None else a.calib_epochs
    res = replay(a.psg, a.channel, a.host, a.port, a.speed, calib)
    print(f"{len(res.stages)} stages in {res.elapsed_s:.2f} s")
    return EXIT_OK


def cmd_synth(a) -> int:
    from .synth import synthetic_hypnogram, write_sleep_edf_pair

    rng = np.random.default_rng(a.seed)
    for i in range(a.nights):
        night_id = 4001 + 10 * i
        labels = synthetic_hypnogram(rng, cycles=a.cycles)
        psg, hyp = write_sleep_edf_pair(a.out, night_id, labels, seed=a.seed * 1000 + i)
        print(f"{psg.name} {hyp.name}: {len(labels)} epochs")
    return EXIT_OK


COMMANDS = {
    "inspect": cmd_inspect,
    "prep": cmd_prep,
    "features": cmd_features,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "serve": cmd_serve,
    "replay": cmd_replay,
    "synth": cmd_synth,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (SomnoError, OSError, ValueError) as exc:
        print(f"somno {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
