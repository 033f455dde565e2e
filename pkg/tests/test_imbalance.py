import numpy as np
import pytest

from conflictlens import synth
from conflictlens.errors import SingleClass, TooFewMinority
from conflictlens.events import one_hot_encode
from conflictlens.imbalance import SmoteParams, balance, class_weights, smote_nc, weighted


def continuous_cols(m):
    return [j for j, c in enumerate(m.columns) if c.level is None]


def test_class_weights_balance_mass():
    y = np.array([1] * 89 + [0] * 1381)
    w0, w1 = class_weights(y)
    assert w0 * 1381 == pytest.approx(w1 * 89)
    assert (w0 * 1381 + w1 * 89) / y.size == pytest.approx(1.0)


def test_class_weights_single_class():
    with pytest.raises(SingleClass):
        class_weights(np.zeros(5))


def test_weighted_keeps_rows(imbalanced_matrix):
    m = weighted(imbalanced_matrix)
    assert m.n_rows == imbalanced_matrix.n_rows
    y, w = m.labels, m.row_weights
    assert w[y == 1].sum() == pytest.approx(w[y == 0].sum())


def test_smote_row_count(imbalanced_matrix):
    out = smote_nc(imbalanced_matrix, SmoteParams(seed=1))
    assert out.n_rows - imbalanced_matrix.n_rows == 1292
    assert np.count_nonzero(out.labels == 1) == np.count_nonzero(out.labels == 0) == 1381


def test_smote_keeps_originals(imbalanced_matrix):
    out = smote_nc(imbalanced_matrix, SmoteParams(seed=1))
    n = imbalanced_matrix.n_rows
    np.testing.assert_array_equal(out.values[:n], imbalanced_matrix.values)
    assert not out.synthetic[:n].any() and out.synthetic[n:].all()


def test_smote_partial_ratio(imbalanced_matrix):
    out = smote_nc(imbalanced_matrix, SmoteParams(target_ratio=0.5, seed=1))
    assert np.count_nonzero(out.labels == 1) == 1381 // 2


def test_synthetic_rows_on_parent_segment(imbalanced_matrix):
    out = smote_nc(imbalanced_matrix, SmoteParams(seed=2))
    cc = continuous_cols(out)
    n = imbalanced_matrix.n_rows
    for r in range(n, out.n_rows):
        s, nb = out.origin[r]
        a, b, x = out.values[s, cc], out.values[nb, cc], out.values[r, cc]
        assert out.labels[s] == out.labels[nb] == 1
        assert np.all(x >= np.minimum(a, b) - 1e-12) and np.all(x <= np.maximum(a, b) + 1e-12)
        # One interpolation gap shared by every continuous coordinate.
        moving = np.abs(b - a) > 1e-9
        if moving.any():
            gaps = (x[moving] - a[moving]) / (b[moving] - a[moving])
            assert np.ptp(gaps) < 1e-9
            assert -1e-12 <= gaps[0] <= 1 + 1e-12


def test_synthetic_nominals_are_legal(imbalanced_matrix):
    out = smote_nc(imbalanced_matrix, SmoteParams(seed=3))
    new = out.values[imbalanced_matrix.n_rows:]
    for source, cols in out.groups().items():
        if out.columns[cols[0]].level is None:
            continue
        block = new[:, cols]
        assert set(np.unique(block)) <= {0.0, 1.0}
        sums = block.sum(axis=1)
        if len(cols) == 1:
            assert np.all(sums <= 1)
        else:
            assert np.all(sums == 1), source


def _nominal_code(m, row, cols):
    hit = np.flatnonzero(m.values[row, cols] > 0.5)
    return int(hit[0]) + 1 if hit.size else 0


def test_nominal_value_is_neighbour_mode():
    # Brute-force neighbour search on a small problem.
    events = synth.generate_dataset(synth.GeneratorConfig(seed=11, calibration_rows=5000), n=400)
    m = one_hot_encode(events)
    k = 3
    out = smote_nc(m, SmoteParams(k_neighbors=k, seed=5))
    cc = continuous_cols(m)
    nominal = [cols for cols in m.groups().values() if m.columns[cols[0]].level is not None]
    minority = np.flatnonzero(m.labels == 1)
    scale = m.values[:, cc].std(axis=0)
    scale[scale == 0] = 1
    z = m.values[:, cc] / scale
    med = np.median(z[minority].std(axis=0))

    def dist(i, j):
        d = np.sum((z[i] - z[j]) ** 2)
        d += med**2 * sum(_nominal_code(m, i, c) != _nominal_code(m, j, c) for c in nominal)
        return d

    for r in range(m.n_rows, min(out.n_rows, m.n_rows + 15)):
        s, nb = out.origin[r]
        others = [j for j in minority if j != s]
        ranked = sorted(others, key=lambda j: dist(s, j))
        nbrs = ranked[:k]
        assert nb in nbrs
        for cols in nominal:
            votes = [_nominal_code(m, j, cols) for j in nbrs]
            counts = {v: votes.count(v) for v in votes}
            top = max(counts.values())
            winners = sorted(v for v, c in counts.items() if c == top)
            seed_code = _nominal_code(m, s, cols)
            expected = seed_code if seed_code in winners else winners[0]
            assert _nominal_code(out, r, cols) == expected


def test_smote_deterministic(imbalanced_matrix):
    a = smote_nc(imbalanced_matrix, SmoteParams(seed=9))
    b = smote_nc(imbalanced_matrix, SmoteParams(seed=9))
    np.testing.assert_array_equal(a.values, b.values)


def test_too_few_minority(imbalanced_matrix):
    rows = np.concatenate([np.flatnonzero(imbalanced_matrix.labels == 1)[:4],
                           np.flatnonzero(imbalanced_matrix.labels == 0)[:50]])
    with pytest.raises(TooFewMinority):
        smote_nc(imbalanced_matrix.take(rows), SmoteParams(k_neighbors=5))


def test_balance_dispatch(imbalanced_matrix):
    assert balance(imbalanced_matrix, "none") is imbalanced_matrix
    assert balance(imbalanced_matrix, "weights").n_rows == imbalanced_matrix.n_rows
    with pytest.raises(ValueError):
        balance(imbalanced_matrix, "undersample")


@pytest.mark.parametrize("kwargs", [{"k_neighbors": 0}, {"target_ratio": 0}, {"target_ratio": 1.5}])
def test_invalid_params(kwargs):
    with pytest.raises(ValueError):
        SmoteParams(**kwargs)
