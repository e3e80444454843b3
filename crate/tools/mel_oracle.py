"""Reference log-mel values for a 1 s, 440 Hz unit sine at 16 kHz.

Independent of the Rust frontend: numpy FFT, filterbank built from the
textbook triangle definition. Prints the constants frozen in the core
crate's acceptance test.
"""
import numpy as np

SR, WIN, HOP, NFFT, BANDS = 16000, 800, 160, 2048, 80


def mel(f):
    return 2595.0 * np.log10(1.0 + f / 700.0)


def inv_mel(m):
    return 700.0 * (10.0 ** (m / 2595.0) - 1.0)


def filterbank():
    edges = inv_mel(np.linspace(0.0, mel(SR / 2), BANDS + 2))
    freqs = np.arange(NFFT // 2 + 1) * SR / NFFT
    fb = np.zeros((BANDS, freqs.size))
    for m in range(BANDS):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        fb[m] = np.clip(np.minimum((freqs - lo) / (mid - lo), (hi - freqs) / (hi - mid)), 0, None)
    return fb, edges[1:-1]


def log_mel(x):
    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(WIN) / WIN)
    n = 1 + (len(x) - WIN) // HOP
    frames = np.stack([x[i * HOP:i * HOP + WIN] * window for i in range(n)])
    power = np.abs(np.fft.rfft(frames, NFFT)) ** 2
    fb, centers = filterbank()
    return np.log(power @ fb.T + 1e-6), centers


x = np.sin(2 * np.pi * 440.0 * np.arange(SR) / SR)
lm, centers = log_mel(x)
peaks = lm.argmax(axis=1)
print("frames", lm.shape[0])
print("peak bands", sorted(set(peaks.tolist())))
print("peak centre Hz", repr(centers[peaks[0]]))
print("frame 48 bands 12..=18", [repr(v) for v in lm[48, 12:19]])
