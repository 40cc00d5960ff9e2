import numpy as np
import pytest

from wavefio import caustic, diffeo, frame, partition
from wavefio.errors import CoverGapError
from wavefio.symbols import LensModel

CONST = LensModel(c0=2.0, kappa=0.0)
LENS = LensModel(c0=2.0, kappa=-0.4, sigma=3.0, xc=(0.0, 14.0))
ANCHOR = diffeo.DiffeoParams(x0=(0.0, 5.0), xi0=(0.0, 1.0), alpha=1.0)


@pytest.fixture(scope="module")
def lens_cover(tiling256):
    box = tiling256.box_by_direction(2, (0.0, 1.0))
    cmap = caustic.detect(LENS, box, 0.0, 7.0, delta_x=0.25, delta_nu=0.05, x_range=((-3, 3), (3, 7.5)))
    sets = partition.build_cover(cmap, [ANCHOR], t0=0.0, t1=7.0)
    return cmap, sets


def test_cutoff_weight_limits():
    assert partition.cutoff_weight(np.array([-1e6]))[0] == 1.0
    assert partition.cutoff_weight(np.array([1e6]))[0] == 0.0
    assert np.isclose(partition.cutoff_weight(np.array([0.0]))[0], np.exp(-1.0))
    d = np.linspace(-10, 10, 201)
    w = partition.cutoff_weight(d, s=1.3, b=0.2)
    assert np.all(np.diff(w) <= 1e-15)  # monotone decreasing
    assert np.all((w >= 0) & (w <= 1))


def test_opposing_cutoffs_normalize_to_one():
    d = np.linspace(-5, 5, 101)
    a = partition.cutoff_weight(d, s=1.0)
    b = partition.cutoff_weight(-d, s=1.0)
    total = a + b
    assert np.all(total > 0)
    assert np.max(np.abs(a / total + b / total - 1.0)) < 1e-12


def test_constant_medium_single_unit_set(tiling256):
    box = tiling256.box_by_direction(2, (0.0, 1.0))
    cmap = caustic.detect(CONST, box, 0.0, 7.0, delta_x=0.5, delta_nu=0.1, x_range=((-3, 3), (3, 7)))
    sets = partition.build_cover(cmap, [], t0=0.0, t1=7.0)
    assert len(sets) == 1 and sets[0].is_identity
    assert np.all(sets[0].weight == 1.0)


def test_lens_three_sets_cover(lens_cover):
    cmap, sets = lens_cover
    assert [s.label for s in sets] == [(1, 0), (3, 0), (2, 1)]
    covered = np.zeros(cmap.labels.shape, bool)
    for s in sets:
        covered |= s.admissible
    assert np.all(covered)  # joint admissible set covers the sampled relation


def test_partition_sums_to_one(lens_cover):
    cmap, sets = lens_cover
    total = np.sum([s.weight for s in sets], axis=0)
    assert np.max(np.abs(total - 1.0)) < 1e-12
    for s in sets:
        assert np.all((s.weight >= 0.0) & (s.weight <= 1.0))


def test_weights_supported_in_admissible(lens_cover):
    _, sets = lens_cover
    for s in sets:
        assert not np.any((s.weight > 0) & ~s.admissible)


def test_singular_regions_disjoint(lens_cover):
    # the composed relation is regular where the original is singular
    cmap, sets = lens_cover
    qset = sets[-1]
    singular = cmap.smin_ratio < 0.02
    assert np.any(singular)
    assert np.all(qset.admissible[singular])


def test_cover_gap_without_diffeo(tiling256):
    box = tiling256.box_by_direction(2, (0.0, 1.0))
    cmap = caustic.detect(LENS, box, 0.0, 7.0, delta_x=0.25, delta_nu=0.1, x_range=((-2, 2), (4.5, 7)))
    with pytest.raises(CoverGapError):
        partition.build_cover(cmap, [], t0=0.0, t1=7.0)


def test_normalize_partition_trivial(lens_cover):
    _, sets = lens_cover
    renorm = partition.normalize_partition(sets)
    total = np.sum([s.weight for s in renorm], axis=0)
    assert np.max(np.abs(total - 1.0)) < 1e-12


def test_cone_windows_partition_of_unity(tiling256):
    box = tiling256.box_by_direction(2, (0.0, 1.0))
    lo, hi = box.angle_range()
    theta = np.linspace(lo, hi, 301)
    for j in (1, 3, 5, 11):
        wins = partition.cone_windows(box, j)
        total = np.sum([w(theta) for w in wins], axis=0)
        assert np.max(np.abs(total - 1.0)) < 1e-12
        for w in wins:
            vals = w(theta)
            assert np.all((vals >= 0) & (vals <= 1))


def test_separate_constant_table_exact(tiling256):
    box = tiling256.box_by_direction(2, (0.0, 1.0))
    lo, hi = box.angle_range()
    theta = np.linspace(lo, hi, 41)
    gamma = np.tile(np.linspace(0, 1, 30)[:, None], (1, 41))  # no theta dependence
    sep = partition.separate(gamma, theta, box, j_terms=1)
    rec = sep.reconstruct(theta)
    assert np.max(np.abs(rec - gamma)) < 1e-12


def test_separate_error_decreases_with_terms(tiling256):
    box = tiling256.box_by_direction(2, (0.0, 1.0))
    lo, hi = box.angle_range()
    theta = np.linspace(lo, hi, 81)
    y = np.linspace(0, 1, 40)[:, None]
    gamma = 0.5 + 0.5 * np.tanh(3 * (y - 0.3 - 0.6 * (theta[None, :] - lo) / (hi - lo)))
    errs = []
    for j in (1, 3, 5, 11):
        sep = partition.separate(gamma, theta, box, j_terms=j)
        errs.append(float(np.max(np.abs(sep.reconstruct(theta) - gamma))))
    assert errs[0] > errs[1] > errs[2] > errs[3]


def test_separate_clamps_excess_terms(tiling256):
    box = tiling256.box_by_direction(2, (0.0, 1.0))
    lo, hi = box.angle_range()
    theta = np.linspace(lo, hi, 5)
    gamma = np.ones((4, 5))
    with pytest.warns(UserWarning):
        sep = partition.separate(gamma, theta, box, j_terms=11)
    assert sep.n_terms == 5


def test_default_expansion_terms_shrink():
    assert partition.default_expansion_terms(2, j0=5, k0=2) == 5
    vals = [partition.default_expansion_terms(k, j0=11, k0=2) for k in range(2, 10)]
    assert vals[0] == 11
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert vals[-1] == 1
