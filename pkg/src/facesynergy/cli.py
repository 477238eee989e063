"""Batch command-line front end.

Exit codes: 0 on success, 2 on a usage error, 1 on a data or processing
error. Diagnostics go to stderr; all results go to files under ``--out``.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__, io
from .core import Block, Condition, Kind, LabelTrack, Modality, find_track, to_rate
from .errors import DegenerateAgreementError, UndefinedRatioError
from .factorization import nnmf_factorize, select_synergy_count
from .labeling import emg_vs_cv_delay, run_detection
from .metrics import agreement
from .pipeline import figure_series, run_pipeline, session_blocks, simulate_session_dir
from .synergy import classify_cooccurrence, onset_aligned_profile, spatial_match, temporal_match
from .synth import SynthConfig, generate_session

DATA_ERRORS = (ValueError, KeyError, OSError, UndefinedRatioError, DegenerateAgreementError)
# flags that name files or control parallelism, not results
_UNRECORDED = {"out", "jobs", "func"}


class UsageError(Exception):
    pass


def _manifest(args) -> dict:
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in _UNRECORDED}
    return {"command": args.command, "flags": flags, "seed": args.seed,
            "tool_version": __version__}


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _save(doc: io.ReportDocument, args, name: str = "report.json") -> Path:
    path = _out(args) / name
    io.write_report(doc, path)
    return path


def _pick(tracks, au: str | None, binary: bool = True) -> LabelTrack:
    kind = Kind.BINARY if binary else None
    if au is not None:
        try:
            return find_track(tracks, au, kind)
        except KeyError:
            pass
    cands = [t for t in tracks if kind is None or t.kind is kind]
    if len(cands) == 1:
        return cands[0]
    raise KeyError(f"cannot choose a {'binary ' if binary else ''}track for {au or 'the file'}; "
                   f"found {[t.au_id for t in tracks]}")


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> None:
    cfg = SynthConfig(duration_s=args.duration, n_events=args.events, snr_db=args.snr_db,
                      emg_lead_ms=args.lead_ms, seed=args.seed,
                      condition=Condition(args.condition.upper()))
    io.write_session(generate_session(cfg, block_id=args.block_id), _out(args))


def cmd_detect(args) -> None:
    emg = io.read_emg_csv(args.emg)
    cv = io.read_openface_csv(args.openface)
    truth = ()
    if args.truth:
        truth = tuple(io.read_human_labels_csv(args.truth, emg.duration_ms, emg.rate_hz,
                                               modality=Modality.SYNTH_TRUTH))
    block = Block("B1", Condition.SPONTANEOUS, emg, tuple(cv), (), truth)
    det = run_detection(block, seed=args.seed, ica_input=args.ica_input)
    out = _out(args)
    io.write_tracks_csv([det.tracks["AU6"], det.tracks["AU12"]], out / "emg_labels.csv")
    doc = io.ReportDocument(seeds=[args.seed], manifest=_manifest(args))
    a = det.assignment
    doc.assignments.append({"block": "B1", "component_of": dict(a.component_of),
                            "correlations": a.correlations, "lags": a.lags,
                            "references": ["AU6", "AU12", "NOISE"], "noise_seed": a.noise_seed})
    for au in ("AU6", "AU12") if truth else ():
        doc.agreements.append(io.agreement_entry(
            agreement(det.tracks[au], block.truth(au)), "EMG-TRUTH", au, "B1", emg.rate_hz))
    _save(io.ReportDocument.from_dict(doc.to_dict()), args)


def cmd_cooccur(args) -> None:
    au6 = _pick(io.read_label_file(args.au6, args.rate), "AU6")
    au12 = _pick(io.read_label_file(args.au12, args.rate), "AU12")
    n = min(len(au6), len(au12))
    if au6.rate_hz != au12.rate_hz:
        raise ValueError(f"AU6 at {au6.rate_hz} Hz and AU12 at {au12.rate_hz} Hz")
    au6, au12 = au6.with_values(au6.values[:n]), au12.with_values(au12.values[:n])
    cond = Condition(args.condition.upper())
    s = classify_cooccurrence(au6, au12, condition=cond, modality=au12.modality)
    doc = io.ReportDocument(seeds=[args.seed], manifest=_manifest(args))
    doc.cooccurrence.append(io.cooccurrence_entry(s))
    p = onset_aligned_profile(au6, au12)
    doc.onset_profiles.append(io.profile_entry(p, None, cond.value, au12.modality.value))
    _save(doc, args)


def _continuous_matrix(path) -> tuple[np.ndarray, list[str], float]:
    tracks = io.read_label_file(path)
    cont = [t for t in tracks if t.kind is Kind.CONTINUOUS] or tracks
    n = min(len(t) for t in cont)
    return np.stack([t.values[:n] for t in cont]), [t.au_id for t in cont], cont[0].rate_hz


def cmd_synergy(args) -> None:
    blocks = [_continuous_matrix(p) for p in args.tracks]
    names = blocks[0][1]
    if any(b[1] != names for b in blocks):
        raise ValueError("track files do not share the same columns")
    mats = [b[0] for b in blocks]
    k_hi = min(args.kmax, min(min(m.shape) for m in mats))
    curve = select_synergy_count(mats, k_hi, args.threshold, seed=args.seed)
    doc = io.ReportDocument(seeds=[args.seed], manifest=_manifest(args))
    doc.vaf_curves.append(io.vaf_entry(curve, "tracks"))
    out = _out(args)
    for i, (x, _, rate) in enumerate(blocks):
        res = nnmf_factorize(x, curve.selected_k, seed=args.seed)
        cols = [f"syn{j + 1}" for j in range(curve.selected_k)]
        io.write_matrix_csv(res.w, out / f"weights_{i + 1}.csv", cols, index=names, index_name="au")
        t_ms = np.arange(x.shape[1]) * 1000.0 / rate
        io.write_matrix_csv(np.column_stack([t_ms, res.h.T]), out / f"activations_{i + 1}.csv",
                            ["t_ms"] + cols)
        doc.synergy_weights.append({"block": str(i + 1), "modality": None, "k": curve.selected_k,
                                    "rows": names, "w": res.w, "vaf": res.vaf})
    _save(doc, args)


def _activations(path) -> tuple[np.ndarray, float]:
    m, cols, _ = io.read_matrix_csv(path)
    if cols[0] != "t_ms":
        raise ValueError(f"{path}: activation files start with a t_ms column")
    step = np.diff(m[:, 0])
    rate = 1000.0 / float(np.median(step)) if step.size else 30.0
    return m[:, 1:].T, rate


def cmd_match(args) -> None:
    if args.mode == "spatial":
        cv, _, _ = io.read_matrix_csv(args.cv, index=True)
        emg, _, _ = io.read_matrix_csv(args.emg, index=True)
        m = spatial_match(cv, emg)
    else:
        cv, rate = _activations(args.cv)
        emg, rate_b = _activations(args.emg)
        if abs(rate - rate_b) > 1e-6 * rate:
            raise ValueError(f"activation rates differ: {rate:g} vs {rate_b:g} Hz")
        n = min(cv.shape[1], emg.shape[1])
        m = temporal_match(cv[:, :n], emg[:, :n], rate)
    doc = io.ReportDocument(seeds=[args.seed], manifest=_manifest(args))
    doc.matches.append(io.match_entry(m, f"{args.mode}"))
    _save(doc, args)


def cmd_agree(args) -> None:
    a = io.read_label_file(args.a, args.rate, modality=Modality.EMG)
    b = io.read_label_file(args.b, args.rate, modality=Modality.HUMAN)
    doc = io.ReportDocument(seeds=[args.seed], manifest=_manifest(args))
    b_ids = {t.au_id for t in b if t.is_binary}
    common = [t for t in a if t.is_binary and t.au_id in b_ids]
    if not common:
        raise KeyError("the two files share no binary AU tracks")
    for ta in common:
        tb = find_track(b, ta.au_id, Kind.BINARY)
        rate = min(ta.rate_hz, tb.rate_hz)
        ta2, tb2 = to_rate(ta, rate), to_rate(tb, rate)
        n = min(len(ta2), len(tb2))
        rep = agreement(ta2.with_values(ta2.values[:n]), tb2.with_values(tb2.values[:n]))
        doc.agreements.append(io.agreement_entry(rep, "A-B", ta.au_id, None, rate))
    _save(doc, args)


def cmd_delay(args) -> None:
    emg = io.read_emg_csv(args.emg)
    cv = io.read_label_file(args.label, modality=Modality.CV)
    block = Block("B1", Condition.SPONTANEOUS, emg, tuple(cv))
    d = emg_vs_cv_delay(block, args.au, args.window_ms)
    doc = io.ReportDocument(seeds=[args.seed], manifest=_manifest(args))
    doc.delays.append(io.delay_entry(d, f"EMG-CV {args.au}"))
    _save(doc, args)


def cmd_pipeline(args) -> None:
    session = Path(args.session)
    if not session_blocks(session):
        session.mkdir(parents=True, exist_ok=True)
        simulate_session_dir(session, args.seed, duration_s=args.duration,
                             n_events=args.events, snr_db=args.snr_db, emg_lead_ms=args.lead_ms)
    doc = run_pipeline(session, seed=args.seed, jobs=args.jobs, kmax=args.kmax,
                       threshold=args.threshold, ica_input=args.ica_input,
                       manifest=_manifest(args))
    doc.manifest["flags"].pop("session", None)
    _save(doc, args)


def cmd_plot(args) -> None:
    doc = io.read_report(args.report)
    cols, rows = figure_series(doc, args.figure)
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in r))
    io.atomic_write_text(_out(args) / f"figure{args.figure}.csv", "\n".join(lines) + "\n")


# ---------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="facesynergy", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=42, help="seed for every stochastic stage")
    p.add_argument("--out", default=".", help="output directory")
    # accepted after the subcommand too; SUPPRESS keeps the global value when absent
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, parents=[common])
        sp.set_defaults(func=func)
        return sp

    sp = add("simulate", cmd_simulate, "write a synthetic session")
    sp.add_argument("--duration", type=float, default=90.0, help="seconds")
    sp.add_argument("--events", type=int, default=12)
    sp.add_argument("--snr-db", type=float, default=10.0)
    sp.add_argument("--lead-ms", type=float, default=374.0)
    sp.add_argument("--condition", choices=["posed", "spontaneous"], default="spontaneous")
    sp.add_argument("--block-id", default="B1")

    sp = add("detect", cmd_detect, "EMG-derived AU6/AU12 labels")
    sp.add_argument("--emg", required=True)
    sp.add_argument("--openface", required=True)
    sp.add_argument("--truth", help="interval file with reference labels")
    sp.add_argument("--ica-input", choices=["envelope", "bandpassed"], default="envelope")

    sp = add("cooccur", cmd_cooccur, "AU6/AU12 co-occurrence patterns")
    sp.add_argument("--au6", required=True)
    sp.add_argument("--au12", required=True)
    sp.add_argument("--condition", choices=["posed", "spontaneous"], required=True)
    sp.add_argument("--rate", type=float, default=30.0, help="rate for interval files (Hz)")

    sp = add("synergy", cmd_synergy, "select the synergy count by VAF")
    sp.add_argument("--tracks", nargs="+", required=True, help="one label file per block")
    sp.add_argument("--kmax", type=int, default=16)
    sp.add_argument("--threshold", type=float, default=0.85)

    sp = add("match", cmd_match, "pair CV and EMG synergies")
    sp.add_argument("--mode", choices=["temporal", "spatial"], required=True)
    sp.add_argument("--cv", required=True)
    sp.add_argument("--emg", required=True)

    sp = add("agree", cmd_agree, "sample-wise agreement of two label files")
    sp.add_argument("--a", required=True)
    sp.add_argument("--b", required=True)
    sp.add_argument("--rate", type=float, default=30.0, help="rate for interval files (Hz)")

    sp = add("delay", cmd_delay, "EMG-to-camera delay")
    sp.add_argument("--emg", required=True)
    sp.add_argument("--label", required=True)
    sp.add_argument("--au", default="AU12")
    sp.add_argument("--window-ms", type=float, default=2000.0)

    sp = add("pipeline", cmd_pipeline, "full analysis of a session into one report")
    sp.add_argument("--session", required=True, help="directory with posed/ and spontaneous/")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--kmax", type=int, default=4)
    sp.add_argument("--threshold", type=float, default=0.85)
    sp.add_argument("--duration", type=float, default=90.0)
    sp.add_argument("--events", type=int, default=12)
    sp.add_argument("--snr-db", type=float, default=10.0)
    sp.add_argument("--lead-ms", type=float, default=374.0)
    sp.add_argument("--ica-input", choices=["envelope", "bandpassed"], default="envelope")

    sp = add("plot", cmd_plot, "CSV series behind figure 2, 5 or 6")
    sp.add_argument("--report", required=True)
    sp.add_argument("--figure", type=int, choices=[2, 5, 6], required=True)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
    except UsageError as e:
        print(e, file=sys.stderr)
        return 2
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    try:
        args.func(args)
    except DATA_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
