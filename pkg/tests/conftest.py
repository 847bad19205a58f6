import numpy as np
import pytest

from foasscv.filterbank import build_mel_filterbank, build_third_octave_bank


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def third_octave():
    return build_third_octave_bank(16000)


@pytest.fixture(scope="session")
def mel_fb():
    return build_mel_filterbank()


def random_psd(rng, n=4, rank=None):
    """Random Hermitian PSD matrix of the given rank (full by default)."""
    rank = rank or n
    a = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
    return a @ a.conj().T


def damped_multisine(centers_hz, tau, seconds=1.5, delay=800, sr=16000, seed=0):
    """Deterministic RIR: one cosine per band center, all under the same
    amplitude envelope exp(-t/tau), starting at sample ``delay``.

    Every band-filtered version decays like exp(-t/tau), so T60 = 6.9078 tau
    and C50 = 10 log10(exp(0.1/tau) - 1) hold per band without the
    statistical spread of noise tails.
    """
    phases = np.random.default_rng(seed).uniform(0, 2 * np.pi, len(centers_hz))
    t = np.arange(int(seconds * sr)) / sr
    h = sum(np.cos(2 * np.pi * f * t + p) for f, p in zip(centers_hz, phases))
    return np.concatenate([np.zeros(delay), h * np.exp(-t / tau)])


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, from the ``criterion``
    property each acceptance test records."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if getattr(rep, "when", "call") != "call":
                continue
            props = dict(getattr(rep, "user_properties", ()))
            if "criterion" in props:
                status = "PASS" if outcome == "passed" else "FAIL"
                lines.append((props["criterion"], status, props.get("detail", "")))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, status, detail in sorted(lines, key=lambda x: int(x[0].split()[0])):
            terminalreporter.write_line(f"{status}  {name}  {detail}".rstrip())
