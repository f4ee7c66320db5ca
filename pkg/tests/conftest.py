import numpy as np
import pytest

from bundl_lab import dataset, eegsim, labelnoise, model


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Three subjects, one or two recordings each, with over/under labels."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    cfg = eegsim.SimConfig(n_subjects=3, recordings_per_subject_range=(1, 2), seed=3, snr_band="mid")
    corpus = dataset.write_simulated_corpus(root, cfg)
    for name in ("over0.3", "under0.3", "random0.1"):
        corpus.corrupt(labelnoise.NoiseSpec.parse(name), seed=3)
    return dataset.Corpus(root)


@pytest.fixture(scope="session")
def tiny_windows(tiny_corpus):
    return dataset.build_windows(tiny_corpus, "over0.3", "clean")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_params():
    return model.init_params(7, (6, 5, 4, 1))


def make_toy_windows(n_rec=2, n_win=600, interval=(100, 200), n_feat=7, seed=0, subjects=None):
    """Hand-built window table: one interval per recording, separable features."""
    r = np.random.default_rng(seed)
    subjects = list(range(n_rec)) if subjects is None else subjects
    X, y, rec, win, subj, bd, records = [], [], [], [], [], [], []
    for i in range(n_rec):
        track = labelnoise.window_labels([interval], n_win)
        feats = r.normal(size=(n_win, n_feat))
        feats[:, 0] += 2.0 * track.labels
        X.append(feats)
        y.append(track.labels)
        rec.append(np.full(n_win, i))
        win.append(np.arange(n_win))
        subj.append(np.full(n_win, subjects[i]))
        centers = np.arange(n_win) + 0.5
        bd.append(np.abs(centers[:, None] - np.array(interval, float)[None]).min(axis=1))
        records.append({"key": f"r{i}", "subject_id": subjects[i], "n_windows": n_win,
                        "recording_len_s": float(n_win), "train_intervals": [interval],
                        "eval_intervals": [interval]})
    y = np.concatenate(y)
    return dataset.WindowSet(X=np.concatenate(X), y_train=y, y_eval=y.copy(), rec_index=np.concatenate(rec),
                             win_index=np.concatenate(win), subject=np.concatenate(subj),
                             boundary_dist=np.concatenate(bd), records=records)


@pytest.fixture
def toy_windows():
    return make_toy_windows()


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


@pytest.fixture
def criterion():
    def record(number, ok, detail):
        ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
