"""Whole-session analysis: detection, agreement, co-occurrence, synergies, delays.

Blocks are analysed independently (optionally in worker processes) and merged
in block order, so the report does not depend on the degree of parallelism.
"""
from __future__ import annotations

import hashlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .core import Condition, Kind, LabelTrack, find_track, runs, to_rate
from .errors import DegenerateAgreementError, DegenerateInputError
from .factorization import nnmf_factorize, select_synergy_count
from .labeling import estimate_delay, lagged_pearson, run_detection
from .metrics import agreement, wilcoxon_rank_sum
from .synergy import classify_cooccurrence, onset_aligned_profile, spatial_match, temporal_match
from .synth import CV_AUS, SynthConfig, generate_session

BLOCK_DIRS = (("posed", Condition.POSED), ("spontaneous", Condition.SPONTANEOUS))
FRAME_RATE = 30.0
N_MATCH_SYNERGIES = 3
_SESSION_FILES = ("emg.csv", "openface.csv", "truth.csv", "human.csv")


def simulate_session_dir(directory, seed: int, **overrides) -> None:
    """Write a posed and a spontaneous synthetic block under ``directory``.

    Block ``i`` (posed first) is generated with seed ``seed + i``.
    """
    for i, (name, cond) in enumerate(BLOCK_DIRS):
        cfg = SynthConfig(seed=seed + i, condition=cond, **overrides)
        io.write_session(generate_session(cfg, block_id=name), Path(directory) / name)


def session_blocks(directory) -> list[Path]:
    d = Path(directory)
    return [d / name for name, _ in BLOCK_DIRS if (d / name / "emg.csv").exists()]


def file_digests(block_dir) -> dict:
    out = {}
    for name in _SESSION_FILES:
        p = Path(block_dir) / name
        if p.exists():
            out[name] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


def _safe_agreement(pred: LabelTrack, ref: LabelTrack, pair: str, block: str) -> dict:
    n = min(len(pred), len(ref))
    pred, ref = pred.with_values(pred.values[:n]), ref.with_values(ref.values[:n])
    try:
        return io.agreement_entry(agreement(pred, ref), pair, ref.au_id, block, ref.rate_hz)
    except DegenerateAgreementError as e:
        return {"block": block, "modality_pair": pair, "au_id": ref.au_id,
                "rate_hz": ref.rate_hz, "kappa": None, "error": str(e), "n": n}


def _at_frames(x: np.ndarray, rate_hz: float, n_frames: int) -> np.ndarray:
    """Sample a smooth series at video frame times."""
    t = np.arange(x.shape[-1]) / rate_hz
    tf = np.arange(n_frames) / FRAME_RATE
    if x.ndim == 1:
        return np.interp(tf, t, x)
    return np.stack([np.interp(tf, t, row) for row in x])


def _frames(track: LabelTrack, n: int) -> LabelTrack:
    t = to_rate(track, FRAME_RATE)
    v = t.values[:n]
    if v.shape[0] < n:
        v = np.concatenate([v, np.zeros(n - v.shape[0])])
    return t.with_values(v)


def analyze_block(block_dir: str, seed: int, ica_input: str = "envelope") -> dict:
    """Everything the report needs from one block, as plain records plus matrices."""
    block = io.read_block(block_dir)
    bid, cond = block.id, block.condition.value
    det = run_detection(block, seed=seed, ica_input=ica_input)
    rate = block.emg.rate_hz
    emg = det.tracks
    n_frames = len(block.cv("AU12", Kind.CONTINUOUS))
    frames = {"EMG": {au: _frames(emg[au], n_frames) for au in ("AU6", "AU12")},
              "CV": {au: _frames(block.cv(au, Kind.BINARY), n_frames) for au in ("AU6", "AU12")}}
    if block.truth_tracks:
        frames["TRUTH"] = {au: _frames(block.truth(au), n_frames) for au in ("AU6", "AU12")}
    if block.human_tracks:
        frames["HUMAN"] = {au: _frames(find_track(block.human_tracks, au), n_frames)
                           for au in ("AU6", "AU12")}

    agreements = []
    for au in ("AU6", "AU12"):
        if block.truth_tracks:
            agreements.append(_safe_agreement(emg[au], block.truth(au), "EMG-TRUTH", bid))
            agreements.append(_safe_agreement(frames["CV"][au], frames["TRUTH"][au], "CV-TRUTH", bid))
        if "HUMAN" in frames:
            agreements.append(_safe_agreement(frames["EMG"][au], frames["HUMAN"][au], "EMG-HUMAN", bid))
            agreements.append(_safe_agreement(frames["CV"][au], frames["HUMAN"][au], "CV-HUMAN", bid))
        agreements.append(_safe_agreement(frames["EMG"][au], frames["CV"][au], "EMG-CV", bid))

    # co-occurrence at each modality's native rate, profiles on the frame grid
    native = {"EMG": emg, "CV": frames["CV"]}
    if block.truth_tracks:
        native["TRUTH"] = {au: block.truth(au) for au in ("AU6", "AU12")}
    if "HUMAN" in frames:
        native["HUMAN"] = frames["HUMAN"]
    cooc, profiles = [], []
    for mod, tr in native.items():
        s = classify_cooccurrence(tr["AU6"], tr["AU12"], condition=cond)
        cooc.append(io.cooccurrence_entry(s, bid, mod))
        p = onset_aligned_profile(frames[mod]["AU6"], frames[mod]["AU12"])
        profiles.append(io.profile_entry(p, bid, cond, mod))

    delays = []
    for au in ("AU6", "AU12"):
        cv = det.cv_upsampled[au].values
        best = None
        for ch, x in zip(block.emg.channel_names, det.envelope.samples):
            if np.ptp(x) == 0:
                continue
            d = estimate_delay(x, cv, rate)
            if best is None or d.peak_correlation > best[1].peak_correlation:
                best = (ch, d)
        if best is not None:
            entry = io.delay_entry(best[1], f"EMG-CV {au}", bid)
            entry["channel"] = best[0]
            delays.append(entry)

    a = det.assignment
    assignment = {"block": bid, "component_of": dict(a.component_of),
                  "correlations": a.correlations, "lags": a.lags,
                  "references": ["AU6", "AU12", "NOISE"], "noise_seed": a.noise_seed}

    cv_matrix = np.stack([block.cv(au, Kind.CONTINUOUS).values for au in CV_AUS])
    emg_matrix = np.clip(_at_frames(det.envelope.samples, rate, n_frames), 0.0, None)

    # figure 2: assigned ICs (oriented, frame grid) against the camera intensities
    fig2 = {"block": bid, "t_s": np.arange(n_frames) / FRAME_RATE}
    max_lag = int(round(rate))
    for au in ("AU6", "AU12"):
        ic = det.ica.sources[a.component_of[au]]
        _, r = lagged_pearson(ic, det.cv_upsampled[au].values, max_lag)
        if r[np.argmax(np.abs(r))] < 0:
            ic = -ic
        fig2[f"emg_ic_{au}"] = _at_frames(ic, rate, n_frames)
        fig2[f"emg_label_{au}"] = frames["EMG"][au].values
        fig2[f"cv_{au}"] = block.cv(au, Kind.CONTINUOUS).values[:n_frames]

    durations = {au: [float(e - s) / rate for s, e in runs(emg[au].values)] for au in ("AU6", "AU12")}
    return {
        "block": {"id": bid, "condition": cond, "n_emg_samples": block.emg.n_samples,
                  "emg_rate_hz": rate, "n_frames": n_frames, "inputs": file_digests(block_dir),
                  "has_truth": bool(block.truth_tracks), "has_human": "HUMAN" in frames},
        "agreements": agreements,
        "cooccurrence": cooc,
        "profiles": profiles,
        "delays": delays,
        "assignment": assignment,
        "cv_matrix": cv_matrix,
        "emg_matrix": emg_matrix,
        "figure2": fig2,
        "durations": durations,
    }


def _synergies(results, kmax: int, threshold: float, seed: int, doc: io.ReportDocument) -> None:
    n = min(min(r["cv_matrix"].shape[1], r["emg_matrix"].shape[1]) for r in results)
    for name, key in (("CV", "cv_matrix"), ("EMG", "emg_matrix")):
        mats = [r[key][:, :n] for r in results]
        k_hi = min(kmax, min(m.shape[0] for m in mats))
        curve = select_synergy_count(mats, k_hi, threshold, seed=seed)
        doc.vaf_curves.append(io.vaf_entry(curve, name))
    labels = {"CV": list(CV_AUS), "EMG": None}
    for r in results:
        bid = r["block"]["id"]
        fits = {}
        for name, key in (("CV", "cv_matrix"), ("EMG", "emg_matrix")):
            x = r[key][:, :n]
            k = min(N_MATCH_SYNERGIES, x.shape[0])
            fits[name] = nnmf_factorize(x, k, seed=seed)
            doc.synergy_weights.append({
                "block": bid, "modality": name, "k": k,
                "rows": labels[name] or [f"ch{i + 1}" for i in range(x.shape[0])],
                "w": fits[name].w, "vaf": fits[name].vaf})
        m = spatial_match(fits["CV"].w, fits["EMG"].w)
        doc.matches.append(io.match_entry(m, "CV-EMG weights", bid))
        try:
            m = temporal_match(fits["CV"].h, fits["EMG"].h, FRAME_RATE)
            doc.matches.append(io.match_entry(m, "CV-EMG activations", bid))
        except DegenerateInputError as e:
            doc.matches.append({"name": "CV-EMG activations", "block": bid,
                                "method": "TEMPORAL", "error": str(e)})


def _rank_tests(results, doc: io.ReportDocument) -> None:
    by_cond = {r["block"]["condition"]: r["durations"] for r in results}
    if set(by_cond) != {"POSED", "SPONTANEOUS"}:
        return
    for au in ("AU6", "AU12"):
        a, b = by_cond["POSED"][au], by_cond["SPONTANEOUS"][au]
        entry = {"name": f"EMG {au} activation duration", "first": "POSED",
                 "second": "SPONTANEOUS", "statistic": "rank sum of the first sample",
                 "n_a": len(a), "n_b": len(b)}
        if a and b:
            res = wilcoxon_rank_sum(a, b)
            entry.update(w=res.w, p=res.p, exact=res.exact)
        else:
            entry.update(w=None, p=None, exact=None, error="empty sample")
        doc.tests.append(entry)


def run_pipeline(session_dir, seed: int = 42, jobs: int = 1, kmax: int = 4,
                 threshold: float = 0.85, ica_input: str = "envelope",
                 manifest: dict | None = None) -> io.ReportDocument:
    """Analyse every block found under ``session_dir`` into one report."""
    dirs = session_blocks(session_dir)
    if not dirs:
        raise FileNotFoundError(f"no block directories (posed/, spontaneous/) in {session_dir}")
    if jobs > 1 and len(dirs) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(dirs))) as pool:
            results = list(pool.map(analyze_block, [str(d) for d in dirs],
                                    [seed] * len(dirs), [ica_input] * len(dirs)))
    else:
        results = [analyze_block(str(d), seed, ica_input) for d in dirs]

    doc = io.ReportDocument(seeds=[seed], manifest=dict(manifest or {}))
    for r in results:
        doc.blocks.append(r["block"])
        doc.agreements.extend(r["agreements"])
        doc.cooccurrence.extend(r["cooccurrence"])
        doc.onset_profiles.extend(r["profiles"])
        doc.delays.extend(r["delays"])
        doc.assignments.append(r["assignment"])
    _synergies(results, kmax, threshold, seed, doc)
    _rank_tests(results, doc)
    doc.figure_data = {"figure2": results[0]["figure2"]}
    return io.ReportDocument.from_dict(doc.to_dict())


# ---------------------------------------------------------------- figure series


def figure_series(doc: io.ReportDocument, figure: int) -> tuple[list, list]:
    """Header and rows of the CSV behind figure 2, 5 or 6, read from the report alone."""
    if figure == 2:
        fig = doc.figure_data.get("figure2")
        if not fig:
            raise KeyError("report has no figure 2 data")
        cols = ["t_s"] + sorted(k for k in fig if k not in ("t_s", "block"))
        return cols, [list(r) for r in zip(*(fig[c] for c in cols))]
    if figure == 5:
        rows = []
        for e in doc.cooccurrence:
            for pattern, pct in e["percentages"].items():
                rows.append([e["block"], e["condition"], e["modality"], pattern,
                             e["counts"][pattern], pct])
        return ["block", "condition", "modality", "pattern", "count", "percent"], rows
    if figure == 6:
        if not doc.onset_profiles:
            raise KeyError("report has no onset profiles")
        first = doc.onset_profiles[0]
        length = len(first["probabilities"])
        offsets = [i / first["rate_hz"] - first["pre_s"] for i in range(length)]
        cols, series = ["offset_s"], [offsets]
        for p in doc.onset_profiles:
            cols.append(f"{p['block']}_{p['modality']}_n{p['n_events']}")
            series.append(p["probabilities"])
        return cols, [list(r) for r in zip(*series)]
    raise ValueError(f"no data series for figure {figure}")
