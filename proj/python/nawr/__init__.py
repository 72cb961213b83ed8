"""Noise-aware CTC speech recognition testbed."""

from nawr._core import (
    NawrError,
    Vocab,
    cer,
    compare,
    ctc_loss,
    ctc_loss_grad,
    edit_distance,
    edit_distance_chars,
    greedy_decode,
    infer_noise_from_transcript,
    mix_at_snr,
    model_gradcheck,
    normalize_transcript,
    presets,
    read_wav,
    run_experiment,
    synth_corpus,
    synth_noise,
    synth_utterance,
    wer,
    write_wav,
)

__all__ = [
    "NawrError",
    "Vocab",
    "cer",
    "compare",
    "ctc_loss",
    "ctc_loss_grad",
    "edit_distance",
    "edit_distance_chars",
    "greedy_decode",
    "infer_noise_from_transcript",
    "mix_at_snr",
    "model_gradcheck",
    "normalize_transcript",
    "presets",
    "read_wav",
    "run_experiment",
    "synth_corpus",
    "synth_noise",
    "synth_utterance",
    "wer",
    "write_wav",
]

__version__ = "0.1.0"
