import numpy as np
import pytest

from conftest import make_phantom
from taceplan.actions import ActionCombo, default_vocabulary
from taceplan.dynamics import (
    IDENTITY_PARAMS,
    AttenuationParams,
    EfficacyTable,
    attenuate,
    combine_params,
    combo_contrastive_loss,
    combo_efficacy,
    encode_combo,
    simulate,
)
from taceplan.errors import (
    InvalidArgumentError,
    NonPositiveDenominatorError,
    NoTumorError,
    RuleViolationError,
    UnknownUnitError,
)
from taceplan.voxel import LIVER, TUMOR, Mask3, Volume3

VOCAB = default_vocabulary()


def combo_of(*names):
    return ActionCombo(tuple(VOCAB.find(n) for n in names))


# --- combo_efficacy ------------------------------------------------------------


def test_efficacy_empty_table_floor():
    params = combo_efficacy(combo_of("Cisplatin", "Lipiodol"), EfficacyTable({}))
    assert params.level == 1


def test_efficacy_worked_example():
    table = EfficacyTable({"Cisplatin": 1.0, "Lipiodol": 1.0}, thresholds=(1.0, 2.0, 3.0))
    assert combo_efficacy(combo_of("Cisplatin", "Lipiodol"), table).level == 3


def test_efficacy_diminishing_returns():
    table = EfficacyTable(
        {"Cisplatin": 1.0, "Doxorubicin": 1.0, "Lipiodol": 1.0}, thresholds=(1.0, 2.0, 3.0)
    )
    # 1.0 + 0.5*1.0 + 1.0 = 2.5 -> still level 3
    assert combo_efficacy(combo_of("Cisplatin", "Doxorubicin", "Lipiodol"), table).level == 3


def test_efficacy_unknown_unit():
    with pytest.raises(UnknownUnitError):
        combo_efficacy(combo_of("Cisplatin"), EfficacyTable({"Doxorubicin": 1.0}))


def test_efficacy_monotone_in_subsets():
    rng = np.random.default_rng(0)
    table = EfficacyTable({u.name: float(rng.uniform(0.2, 1.5)) for u in VOCAB.units})
    small = combo_of("Cisplatin", "Lipiodol")
    for extra in ("Doxorubicin", "Mitomycin", "Raltitrexed"):
        big = combo_of("Cisplatin", extra, "Lipiodol")
        assert combo_efficacy(big, table).level >= combo_efficacy(small, table).level


def test_from_level_canonical_maps():
    for level in (1, 2, 3, 4):
        p = AttenuationParams.from_level(level)
        assert p.erosion_radius == level and p.blur_sigma == 0.5 * level


def test_params_validation():
    with pytest.raises(InvalidArgumentError):
        AttenuationParams(level=5, erosion_radius=1, blur_sigma=0,
                          lipiodol_fraction=0, necrosis_fraction=0)
    with pytest.raises(InvalidArgumentError):
        AttenuationParams(level=2, erosion_radius=1, blur_sigma=0,
                          lipiodol_fraction=0.8, necrosis_fraction=0.3)


# --- combine_params --------------------------------------------------------------


def test_combine_identity_and_commutativity():
    a = AttenuationParams.from_level(2)
    b = AttenuationParams.from_level(3)
    assert combine_params(IDENTITY_PARAMS, a) == a
    assert combine_params(a, b) == combine_params(b, a)
    c = AttenuationParams.from_level(1)
    left = combine_params(combine_params(a, b), c)
    right = combine_params(a, combine_params(b, c))
    assert left.erosion_radius == right.erosion_radius == 6
    assert left.lipiodol_fraction == pytest.approx(right.lipiodol_fraction)
    assert left.blur_sigma == pytest.approx(right.blur_sigma)


# --- attenuate --------------------------------------------------------------------


def _sphere_phantom(radius=20, grid=None, tumor_value=-0.5):
    grid = grid or (2 * radius + 12)
    ax = np.arange(grid)
    x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
    c = grid / 2.0
    r2 = (x - c) ** 2 + (y - c) ** 2 + (z - c) ** 2
    tumor = r2 <= radius**2
    mask = np.ones((grid, grid, grid), dtype=np.uint8)  # all liver
    mask[tumor] = TUMOR
    data = np.zeros((grid, grid, grid), dtype=np.float32)
    data[tumor] = tumor_value
    return Volume3(data), Mask3(mask)


def test_viable_volume_monotone_l1_vs_l2():
    vol, mask = _sphere_phantom(radius=20)
    v1 = attenuate(vol, mask, AttenuationParams.from_level(1), seed=0).mask.count(TUMOR)
    v2 = attenuate(vol, mask, AttenuationParams.from_level(2), seed=0).mask.count(TUMOR)
    assert v2 < v1 < mask.count(TUMOR)


def test_attenuate_deterministic_same_seed():
    vol, mask = make_phantom(seed=3, grid=32, radius=8)
    p = AttenuationParams.from_level(2, noise_scale=0.1)
    a = attenuate(vol, mask, p, seed=7)
    b = attenuate(vol, mask, p, seed=7)
    np.testing.assert_array_equal(a.volume.data, b.volume.data)
    np.testing.assert_array_equal(a.mask.data, b.mask.data)


def test_attenuate_identity_configuration():
    vol, mask = make_phantom(seed=4, grid=28, radius=7)
    p = AttenuationParams(level=1, erosion_radius=0, blur_sigma=0.0,
                          lipiodol_fraction=0.0, necrosis_fraction=0.0, noise_scale=0.0)
    out = attenuate(vol, mask, p, seed=0)
    np.testing.assert_array_equal(out.volume.data, vol.data)
    np.testing.assert_array_equal(out.mask.data, mask.data)


def test_attenuate_empty_tumor():
    vol, mask = make_phantom(seed=5, grid=24, radius=6)
    empty = Mask3(np.where(mask.data == TUMOR, LIVER, mask.data))
    with pytest.raises(NoTumorError):
        attenuate(vol, empty, AttenuationParams.from_level(1))


def test_attenuate_mask_stays_inside_liver():
    vol, mask = make_phantom(seed=6, grid=32, radius=9)
    organ = mask.data >= LIVER
    for level in (1, 2, 3, 4):
        out = attenuate(vol, mask, AttenuationParams.from_level(level), seed=1)
        assert np.all(organ[out.mask.data == TUMOR])
        # vacated voxels became liver, never background
        vacated = (mask.data == TUMOR) & (out.mask.data != TUMOR)
        assert np.all(out.mask.data[vacated] == LIVER)


def test_attenuate_centroid_fallback():
    vol, mask = _sphere_phantom(radius=3, grid=20)
    p = AttenuationParams(level=4, erosion_radius=8, blur_sigma=0.0,
                          lipiodol_fraction=0.0, necrosis_fraction=0.0)
    out = attenuate(vol, mask, p, seed=0)
    assert out.mask.count(TUMOR) == 1


def test_attenuate_marks_hit_targets():
    vol, mask = _sphere_phantom(radius=12)
    p = AttenuationParams(level=2, erosion_radius=2, blur_sigma=0.0,
                          lipiodol_fraction=0.2, necrosis_fraction=0.1, noise_scale=0.0)
    out = attenuate(vol, mask, p, seed=0)
    viable = out.mask.data == TUMOR
    vals = out.volume.data[viable]
    n = vals.size
    assert np.count_nonzero(vals == np.float32(0.9)) == round(0.2 * n)
    assert np.count_nonzero(vals == np.float32(-0.4)) == round(0.1 * n)
    shell = (mask.data == TUMOR) & ~viable
    np.testing.assert_array_equal(out.volume.data[shell], 0.0)


# --- simulate ---------------------------------------------------------------------


def test_simulate_single_replica_equals_attenuate():
    vol, mask = make_phantom(seed=8, grid=28, radius=7)
    table = EfficacyTable({"Cisplatin": 1.0, "Lipiodol": 1.0}, noise_scale=0.0)
    combo = combo_of("Cisplatin", "Lipiodol")
    [state] = simulate(vol, mask, combo, table, replicas=1, seed=11)
    direct = attenuate(vol, mask, combo_efficacy(combo, table), seed=11)
    np.testing.assert_array_equal(state.volume.data, direct.volume.data)


def test_simulate_replicas_differ_with_noise():
    vol, mask = make_phantom(seed=9, grid=28, radius=7)
    table = EfficacyTable({"Cisplatin": 1.0, "Lipiodol": 1.0}, noise_scale=0.1)
    states = simulate(vol, mask, combo_of("Cisplatin", "Lipiodol"), table, replicas=3, seed=0)
    assert len(states) == 3
    assert all(s.params == states[0].params for s in states)
    assert not np.array_equal(states[0].volume.data, states[1].volume.data)
    assert not np.array_equal(states[1].volume.data, states[2].volume.data)


def test_simulate_rule_violation_before_synthesis():
    vol, mask = make_phantom(seed=10, grid=28, radius=7)
    table = EfficacyTable({}, noise_scale=0.0)
    with pytest.raises(RuleViolationError):
        simulate(vol, mask, combo_of("Cisplatin", "Oxaliplatin", "Lipiodol"),
                 table, rules=VOCAB.rules)


def test_simulate_reproducible():
    vol, mask = make_phantom(seed=12, grid=28, radius=7)
    table = EfficacyTable({"Cisplatin": 1.2, "Lipiodol": 0.9}, noise_scale=0.07)
    a = simulate(vol, mask, combo_of("Cisplatin", "Lipiodol"), table, replicas=2, seed=5)
    b = simulate(vol, mask, combo_of("Cisplatin", "Lipiodol"), table, replicas=2, seed=5)
    for sa, sb in zip(a, b):
        np.testing.assert_array_equal(sa.volume.data, sb.volume.data)


# --- encode_combo -----------------------------------------------------------------


def test_encode_order_invariant():
    a = encode_combo(combo_of("Cisplatin", "Lipiodol"))
    b = encode_combo(ActionCombo((VOCAB.find("Lipiodol"), VOCAB.find("Cisplatin"))))
    np.testing.assert_array_equal(a.vector, b.vector)


def test_encode_distinct_combos():
    a = encode_combo(combo_of("Cisplatin", "Lipiodol")).vector
    b = encode_combo(combo_of("Doxorubicin", "Lipiodol")).vector
    assert float(a @ b) < 1.0 - 1e-6


def test_encode_unit_norm():
    for names in (("Cisplatin",), ("Cisplatin", "Lipiodol"),
                  ("Raltitrexed", "Gelatin Sponge", "THP")):
        v = encode_combo(combo_of(*names)).vector
        assert abs(np.linalg.norm(v) - 1.0) < 1e-6


def test_encode_ignores_doses():
    from taceplan.actions import ActionUnit

    dosed = ActionCombo(
        (ActionUnit("drug", "Cisplatin", dose=40, dose_unit="mg"), VOCAB.find("Lipiodol"))
    )
    plain = combo_of("Cisplatin", "Lipiodol")
    np.testing.assert_array_equal(encode_combo(dosed).vector, encode_combo(plain).vector)


def test_encode_empty_combo():
    with pytest.raises(InvalidArgumentError):
        encode_combo(ActionCombo(()))


# --- contrastive loss --------------------------------------------------------------


def _vec(angle):
    return np.array([np.cos(angle), np.sin(angle)])


def _vectors_for(s_pos, s_negs):
    anchor = np.array([1.0, 0.0])
    pos = _vec(np.arccos(s_pos))
    negs = [_vec(np.arccos(s)) for s in s_negs]
    return anchor, pos, negs


def test_loss_literal_denominator_error():
    anchor, pos, negs = _vectors_for(0.9, [0.1, 0.2])
    with pytest.raises(NonPositiveDenominatorError):
        combo_contrastive_loss(anchor, pos, negs, delta=1.0, mode="literal")


def test_loss_infonce_worked_example():
    anchor, pos, negs = _vectors_for(0.9, [0.1, 0.2])
    loss = combo_contrastive_loss(anchor, pos, negs, delta=1.0, mode="infonce")
    expected = -np.log(np.exp(0.9) / (np.exp(0.9) + np.exp(0.1) + np.exp(0.2)))
    assert loss == pytest.approx(expected, abs=1e-6)
    assert loss == pytest.approx(0.666, abs=5e-4)


def test_loss_equal_similarity_log2():
    anchor, pos, negs = _vectors_for(0.5, [0.5])
    loss = combo_contrastive_loss(anchor, pos, negs, delta=1.0)
    assert loss == pytest.approx(np.log(2.0), abs=1e-9)


def test_loss_literal_valid_case():
    anchor, pos, negs = _vectors_for(0.1, [0.8, 0.9])
    loss = combo_contrastive_loss(anchor, pos, negs, delta=1.0, mode="literal")
    expected = -np.log(np.exp(0.1) / (np.exp(0.8) + np.exp(0.9) - np.exp(0.1)))
    assert loss == pytest.approx(expected, abs=1e-9)


def test_loss_monotone_in_positive_similarity():
    negs = [0.3, -0.2]
    grid = np.linspace(-0.99, 0.99, 41)
    losses = []
    for s in grid:
        anchor, pos, negvecs = _vectors_for(s, negs)
        losses.append(combo_contrastive_loss(anchor, pos, negvecs, delta=0.5))
    diffs = np.diff(losses)
    assert np.all(diffs < 0)


def test_loss_argument_validation():
    anchor, pos, negs = _vectors_for(0.5, [0.1])
    with pytest.raises(InvalidArgumentError):
        combo_contrastive_loss(anchor, pos, negs, delta=0.0)
    with pytest.raises(InvalidArgumentError):
        combo_contrastive_loss(anchor, pos, [], delta=1.0)
    with pytest.raises(InvalidArgumentError):
        combo_contrastive_loss(anchor, pos, [np.zeros(3)], delta=1.0)
