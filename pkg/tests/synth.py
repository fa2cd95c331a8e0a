"""Synthetic motor-imagery recordings written through the test EDF writer.

Trials are back to back and cycle T0, T1, T2. The right-hand scout channels
carry a class-dependent rhythm (none / 12 Hz / 20 Hz) over white noise, so a
small network can separate the classes from TFR images.
"""

import math

import numpy as np

from edf_writer import recording_to_edf

CHANNELS = ("C4..", "FC4.", "CP4.", "C2..", "C6..", "Cz..")
RATE = 160.0
TRIAL_S = 4.1
TONES = {"T0": None, "T1": 12.0, "T2": 20.0}


def synth_signals(seed=0, n_trials=12, rate=RATE, trial_s=TRIAL_S, labels=("T0", "T1", "T2"),
                  amplitude=20.0, noise=5.0):
    rng = np.random.default_rng(seed)
    n_records = math.ceil(n_trials * trial_s + 1.0)
    n = int(n_records * rate)
    t = np.arange(n) / rate
    data = rng.normal(0.0, noise, size=(len(CHANNELS), n))
    annotations = []
    for k in range(n_trials):
        label = labels[k % len(labels)]
        onset = round(k * trial_s, 6)
        annotations.append((onset, trial_s, label))
        tone = TONES[label]
        if tone is None:
            continue
        i0, i1 = int(round(onset * rate)), int(round((onset + trial_s) * rate))
        phase = rng.uniform(0, 2 * np.pi)
        burst = amplitude * np.sin(2 * np.pi * tone * t[i0:i1] + phase)
        data[:5, i0:i1] += burst  # scout channels only
    return data, annotations


def synth_edf(seed=0, n_trials=12, **kw) -> bytes:
    data, annotations = synth_signals(seed, n_trials, **kw)
    return recording_to_edf(CHANNELS, data, kw.get("rate", RATE), annotations)


def write_synth_run(path, seed=0, n_trials=12, **kw):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(synth_edf(seed, n_trials, **kw))
    return path
